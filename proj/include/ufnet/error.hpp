#pragma once

#include <stdexcept>
#include <string>

namespace ufnet {

// Error categories map to CLI exit codes: config/usage -> 2,
// data contract violation -> 3, numerical failure -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatches are programming/config mistakes.
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

} // namespace ufnet
