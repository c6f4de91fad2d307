#pragma once

#include <stdexcept>
#include <string>

namespace vqqat {

// Invalid configuration or violated precondition (bad bit width, dimension
// mismatch, unknown layer, ...). The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file (IDX datasets, JSON configs/checkpoints).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value where the training contract requires finite math.
// The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vqqat
