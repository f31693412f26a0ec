#ifndef CLUST3_COMMON_HPP
#define CLUST3_COMMON_HPP

#include <stdexcept>
#include <string>

namespace clust3 {

// Error taxonomy. The C API maps these onto exit/status codes:
// ConfigError -> 2, MissingInputError -> 3, everything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

// Violated call contract (non-stochastic rows, non-scalar loss, ...).
struct ContractError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct MissingInputError : Error {
  using Error::Error;
};

// Forward produced NaN/Inf, or a training step diverged.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace clust3

#endif
