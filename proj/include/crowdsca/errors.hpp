#pragma once

#include <stdexcept>

namespace crowdsca {

/// Invalid configuration, flags, or arguments that violate an operation's preconditions.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or unreadable files, malformed on-disk formats.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Data that loaded but violates a type invariant (e.g. a head point outside the image).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite losses, failed gradient checks.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace crowdsca
