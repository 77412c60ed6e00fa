#pragma once

#include <stdexcept>
#include <string>

namespace alignlab {

/// Enumeration or state-space size exceeds the configured budget.
class BudgetExceededError : public std::runtime_error {
public:
    explicit BudgetExceededError(const std::string& what) : std::runtime_error(what) {}
};

/// A state queried against a top-k advantage cache has no record.
class CacheMissError : public std::runtime_error {
public:
    explicit CacheMissError(const std::string& what) : std::runtime_error(what) {}
};

/// File magic/version/hash mismatch.
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or incomplete configuration; message carries the field path.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace alignlab
