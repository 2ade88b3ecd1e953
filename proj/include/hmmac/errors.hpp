#pragma once

#include <stdexcept>
#include <string>

namespace hmmac {

// Parameter outside its admissible domain (probabilities outside [0,1], ...).
struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed call arguments (empty inputs, mismatched lengths, ...).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Requested computation exceeds a hard budget guard.
struct ResourceLimitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateChainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Optimisation diverged (non-finite loss).
struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A participant source could not deliver the requested sessions.
struct CollectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hmmac
