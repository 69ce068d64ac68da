#pragma once

#include <stdexcept>
#include <string>

namespace nichemap {

// Bad or missing configuration. CLI maps this to exit code 2.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// A pipeline stage was invoked before its inputs exist or while they are
// stale. CLI maps this to exit code 3.
struct stage_error : std::runtime_error {
    explicit stage_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: divergence, non-convergence, zero variance, rank
// deficiency. CLI maps this to exit code 4.
struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nichemap
