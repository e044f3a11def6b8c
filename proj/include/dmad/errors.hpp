#pragma once

#include <stdexcept>
#include <string>

namespace dmad {

// Error taxonomy mirrored by CLI exit codes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum ExitCode : int {
    kExitOk = 0,
    kExitConfigError = 2,
    kExitDataError = 3,
    kExitNumericError = 4,
};

}  // namespace dmad
