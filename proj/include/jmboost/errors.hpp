#pragma once

#include <stdexcept>
#include <string>

namespace jmboost {

// Raised for malformed input: CSV parse problems, inconsistent ids,
// invalid configuration values. Maps to exit code 2 in the CLI.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for numeric failures during fitting (overflowing exponents,
// non-finite intermediates). Maps to exit code 1 in the CLI.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace jmboost
