#pragma once

#include <stdexcept>
#include <string>

namespace sparsrec {

/// Raised when finite element assembly or factorization breaks down.
class AssemblyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on NaN/Inf iterates or a failed dense factorization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Some column of the projector vanishes, so its weight ||P e_i|| is zero.
class WeightDegeneracyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two projected columns are parallel (|tau_ij| >= 1).
class AssumptionViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sampled feasible point beat e_j in weighted l1 norm.
class TheoremViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail
}  // namespace sparsrec
