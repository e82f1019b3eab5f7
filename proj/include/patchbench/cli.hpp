#pragma once

#include <string>
#include <vector>

namespace patchbench::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;

/// Entry point of the `patchbench` binary; never throws.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace patchbench::cli
