#pragma once

#include <stdexcept>
#include <string>

namespace wfm {

/// Base of every exception thrown by the library. The C API maps each
/// subclass onto one wfm_status code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller handed in data that violates an operation's precondition
/// (bad pad sizes, odd split axis, non-binary mask, ...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Inconsistent model/training configuration detected at build time.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf reached a place that must stay finite.
class NumericError : public Error {
public:
    using Error::Error;
};

/// File-system or decode failures.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace wfm
