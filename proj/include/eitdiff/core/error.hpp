#pragma once

#include <stdexcept>
#include <string>

namespace eitdiff {

// Violated precondition or size mismatch between collaborating objects.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Singular systems, non-finite values, diverging iterations.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mesh construction or phantom sampling could not satisfy its constraints.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

} // namespace eitdiff
