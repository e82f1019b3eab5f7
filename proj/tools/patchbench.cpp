#include "patchbench/cli.hpp"

int main(int argc, char** argv) { return patchbench::cli::run(argc, argv); }
