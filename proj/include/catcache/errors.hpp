#pragma once

#include <stdexcept>
#include <string>

namespace catcache {

/// Caller broke an operation's precondition (wrong dimension, unknown id, ...).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration or input document violates a named constraint.
class ValidationError : public std::runtime_error {
public:
    ValidationError(std::string constraint, const std::string& detail)
        : std::runtime_error(constraint + ": " + detail), constraint_(std::move(constraint)) {}

    const std::string& constraint() const noexcept { return constraint_; }

private:
    std::string constraint_;
};

/// Backend I/O failure in a document store.
class StorageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a closed-form expression.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

}  // namespace catcache
