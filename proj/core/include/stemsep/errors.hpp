#pragma once

#include <stdexcept>
#include <string>

namespace stemsep {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// usage -> 1, data (io/format/config/corruption) -> 2, numeric/contract -> 3.

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LengthError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct DegenerateRowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace stemsep
