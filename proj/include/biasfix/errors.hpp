#pragma once

#include <stdexcept>
#include <string>

namespace biasfix {

// Config file / config field problems. CLI exit code 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A required input artifact does not exist. CLI exit code 2.
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& path)
        : std::runtime_error("missing artifact: " + path), path(path) {}
    std::string path;
};

// Non-finite losses, failed factorizations, residuals out of contract. CLI exit code 4.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed files: bad magic, bad version, checksum mismatch, truncation.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace biasfix
