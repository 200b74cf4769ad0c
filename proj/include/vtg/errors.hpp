#pragma once

#include <stdexcept>
#include <string>

namespace vtg {

// Thrown when tensor shapes are incompatible with the requested op.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

// Thrown when an op produces (or is handed) a NaN or Inf.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Thrown when an API is used out of contract (e.g. stepping a parameter
// that never received a gradient).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

// Thrown for invalid run configuration (unknown key, out-of-range value).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// Thrown when a runtime argument is semantically invalid (negative time,
// empty input set, mismatched list lengths).
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error("value error: " + msg) {}
};

// Thrown when a file being read is malformed or truncated.
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error("load error: " + msg) {}
};

} // namespace vtg
