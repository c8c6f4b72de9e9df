#pragma once

#include <fmt/format.h>

#include <stdexcept>
#include <string>
#include <utility>

namespace ebmgan {

// Caller broke a documented precondition (shape mismatch, empty set, ...).
class ContractError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf or failed to converge.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or incompatible on-disk data.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad command-line or configuration input.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractError(message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

// The message is only formatted when the check fails.
template <typename... Args>
void require(bool condition, fmt::format_string<Args...> format, Args&&... args) {
  if (!condition) throw ContractError(fmt::format(format, std::forward<Args>(args)...));
}

}  // namespace ebmgan
