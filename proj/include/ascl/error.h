#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ascl {

// Base for every error raised by the engine. The CLI maps subclasses to exit
// codes: usage/config/format problems exit 2, numeric failures exit 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class PairingError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// Zero-norm vector handed to a cosine or a fused representation that
// collapsed to zero.
class DegenerateVector : public NumericError {
public:
    using NumericError::NumericError;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

} // namespace ascl
