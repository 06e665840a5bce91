#pragma once

#include <stdexcept>
#include <string>

namespace xcnn {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration values (CLI exit status 1).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Shape mismatch between tensors or layers.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or inconsistent files (CLI exit status 2).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, divergence, degenerate statistics (CLI exit status 3).
class NumericError : public Error {
public:
    using Error::Error;
};

/// A deconvolution produced an identically zero reconstruction.
class DeadPathError : public NumericError {
public:
    using NumericError::NumericError;
};

} // namespace xcnn
