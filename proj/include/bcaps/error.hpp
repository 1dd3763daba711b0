#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bcaps {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes that do not fit the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input outside the mathematical domain of an operation (sqrt of a negative, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed binary input. `offset` is the byte position where decoding failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// A checkpoint that parses but does not fit the model it is loaded into.
class CheckpointMismatch : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch, int batch)
        : Error(what), epoch_(epoch), batch_(batch) {}

    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int epoch_;
    int batch_;
};

} // namespace bcaps
