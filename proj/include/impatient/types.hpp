#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace impatient {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Arms are addressed by a dense integer id. Ties are always broken towards
/// the lowest id.
using ArmId = int;

// Error hierarchy. Everything derives from std::runtime_error so callers that
// only care about "it failed" can catch one type.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

/// A matrix that was required to be positive definite is not.
struct DefinitenessError : Error {
  DefinitenessError(const std::string& what, int leading_minor)
      : Error(what), leading_minor(leading_minor) {}
  int leading_minor;  // 1-based index of the first non-positive pivot
};

struct NumericalError : Error {
  using Error::Error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

struct LookupError : Error {
  using Error::Error;
};

struct InsufficientData : Error {
  using Error::Error;
};

struct InfeasibleRounding : Error {
  using Error::Error;
};

struct ExhaustedReservoir : Error {
  using Error::Error;
};

inline void require_dim(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace impatient
