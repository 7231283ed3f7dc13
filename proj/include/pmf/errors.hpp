#pragma once

#include <stdexcept>
#include <string>

namespace pmf {

// Each error family maps onto one CLI exit code (see cli.hpp).

/// Invalid configuration value, unknown key, or unsupported geometry.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing, unreadable, or inconsistent dataset files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values encountered during training.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller broke a shape or width contract between tensors.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace pmf
