#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tunet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input values violate a documented domain (non-binary mask, probability out of range).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Caller broke an API precondition (non-scalar loss, empty split, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Non-finite value encountered during training.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

/// Malformed binary file. `offset` is the byte position where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Checkpoint checksum mismatch.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Checkpoint content does not match the expected parameter set or config.
class SchemaError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace tunet
