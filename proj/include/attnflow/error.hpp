#pragma once

#include <stdexcept>
#include <string>

namespace attnflow {

// Exit-code mapping used by the CLI: configuration/shape problems are 2,
// mathematical precondition violations are 3.

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Precondition of the mathematics does not hold (singular V, indefinite B, ...).
struct MathError : std::domain_error {
  using std::domain_error::domain_error;
};

struct SingularityError : MathError {
  using MathError::MathError;
};

struct DomainError : MathError {
  using MathError::MathError;
};

/// An iterative routine hit its cap without reaching a decision.
struct UndecidedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail
}  // namespace attnflow
