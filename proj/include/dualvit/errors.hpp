#pragma once

#include <stdexcept>
#include <string>

namespace dualvit {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up for an operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid model or layer configuration (heads/channels, presets, schema keys).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad user input: image resolution, dataset labels, file paths.
class InputError : public Error {
public:
    using Error::Error;
};

// Malformed serialized bytes (dataset or checkpoint container).
class FormatError : public Error {
public:
    using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

// Non-finite values produced by an op while debug checks are on.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace dualvit
