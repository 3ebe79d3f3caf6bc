#pragma once

#include <stdexcept>
#include <string>

namespace knnattn {

/// Asked to draw more distinct indices than the population allows.
struct InsufficientPopulation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A weight vector that must carry positive mass is all-zero (or the shifted
/// normalizer is non-positive, signalling a shift bound that is too small).
struct DegenerateWeights : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Exact O(n^2) reference requested beyond the configured size cap.
struct OracleTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed experiment specification.
struct InvalidSpec : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace knnattn
