#pragma once

#include <stdexcept>
#include <string>

namespace shadowphase {

// Bad sizes, ranges or run configuration. CLI maps this to exit code 2.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed or unsupported on-disk data (bad magic, version, truncation).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure: non-unitary gate, non-Hermitian input, solver divergence.
// CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A shadow estimator produced a value outside its domain (e.g. non-positive
// purity); the caller may retry with more snapshots.
struct EstimatorUndefined : std::runtime_error {
    explicit EstimatorUndefined(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace shadowphase
