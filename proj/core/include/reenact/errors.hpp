// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace reenact {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: arguments, configuration values, shapes at an API boundary.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Filesystem and codec failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf showed up where finite values are required.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Corrupt, truncated or incompatible checkpoint archives.
class CheckpointError : public Error {
public:
    using Error::Error;
};

} // namespace reenact
