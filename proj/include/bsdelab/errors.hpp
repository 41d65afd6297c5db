#pragma once

#include <stdexcept>
#include <string>

namespace bsdelab {

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed: non-finite values, rank-deficient
/// regression, CFL violation, projection failure, ODE blow-up.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bsdelab
