#pragma once

#include <stdexcept>
#include <string>

namespace aegru {

// Shape mismatch between matrix operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Elementwise operation applied outside its mathematical domain.
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: a precondition stated by the function contract was violated.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input data too short / empty for the requested operation.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or truncated on-disk file.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure at runtime (NaN/Inf loss and the like).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace aegru
