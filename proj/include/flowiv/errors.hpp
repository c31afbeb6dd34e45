#pragma once

#include <stdexcept>
#include <string>

namespace flowiv {

// Bad inputs: malformed files, shape mismatches, violated preconditions.
// Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, optimizer divergence, broken numeric invariants.
// Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace flowiv
