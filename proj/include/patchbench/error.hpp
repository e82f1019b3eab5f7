#pragma once

#include <stdexcept>
#include <string>

namespace patchbench {

/// Base of every error raised by the toolkit. The CLI maps the concrete
/// subclasses onto its exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Corrupt or inconsistent files (patch containers, sidecars, manifests).
class FormatError : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

/// A model or feature backend could not be loaded or does not support the
/// requested operation.
class BackendError : public Error {
public:
    using Error::Error;
};

/// A metric or statistic is not defined for the given input.
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

class RuntimeFailure : public Error {
public:
    using Error::Error;
};

}  // namespace patchbench
