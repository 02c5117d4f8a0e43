#pragma once

#include <stdexcept>
#include <string>

namespace neuroswift {

// Error taxonomy shared by the whole library. The CLI maps these onto
// stable exit codes: configuration/dimension/bounds -> 2, format/io -> 3,
// compatibility -> 4.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BoundsError : std::runtime_error {
    explicit BoundsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CompatibilityError : std::runtime_error {
    explicit CompatibilityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace neuroswift
