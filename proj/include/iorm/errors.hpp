#pragma once

#include <stdexcept>
#include <string>

namespace iorm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand extents disagree.
struct DimensionError : Error {
    using Error::Error;
};

/// NaN or Inf where finite values are required.
struct NumericInputError : Error {
    using Error::Error;
};

/// Caller violated a precondition of the API.
struct ContractError : Error {
    using Error::Error;
};

/// Hyperparameters inconsistent with the input or with each other.
struct ConfigError : Error {
    using Error::Error;
};

/// Architecture assembled from parts whose shapes do not line up.
struct WiringError : Error {
    using Error::Error;
};

/// Malformed or corrupt on-disk artifact.
struct FormatError : Error {
    using Error::Error;
};

struct ChecksumError : FormatError {
    using FormatError::FormatError;
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
    using Error::Error;
};

} // namespace iorm
