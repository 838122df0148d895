#pragma once

#include <stdexcept>
#include <string>

namespace ei {

// Error taxonomy shared by the whole stack. The CLI maps these onto
// process exit codes (config -> 1, data -> 2, numeric -> 3).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by metrics when a class has no positives (AP) or a single
// class (AUC/S2); macro aggregation catches it and skips the class.
struct UndefinedMetricError : std::runtime_error {
    explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ei
