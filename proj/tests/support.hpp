#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "sparsrec/harness.hpp"

namespace testsupport {

/// The 65-node / 16x16 inversion setup, built once per binary.
inline const sparsrec::harness::InverseSetup& setup65() {
  static const sparsrec::harness::InverseSetup s = sparsrec::harness::build_inverse_setup(2, 65, 16, 1.0);
  return s;
}

/// 129-node forward model nested with setup65().
inline const sparsrec::harness::DataModel& forward129() {
  static const sparsrec::harness::DataModel d = [] {
    auto spec = sparsrec::harness::default_spec("example2");
    return sparsrec::harness::build_data_model(spec);
  }();
  return d;
}

inline int interior_cell() { return sparsrec::harness::cell_at(16, {0.4, 0.6}); }
inline int boundary_cell() { return 8; }

/// Minimizer of 1/2 (d x - c)^2 + t |x| for scalar d != 0, t >= 0.
inline double scalar_lasso(double d, double c, double t) {
  const double v = d * c;
  const double a = std::abs(v) - t;
  return a > 0.0 ? std::copysign(a, v) / (d * d) : 0.0;
}

/// Brute-force minimizer of 1/2||Bx - c||^2 + alpha||Wx||_1: every support
/// and sign pattern is solved on its own and kept if it satisfies the
/// subgradient conditions.  Returns the admissible candidate of least
/// objective.
inline Eigen::VectorXd brute_force_lasso(const Eigen::MatrixXd& B, const Eigen::VectorXd& c, const Eigen::VectorXd& w,
                                         double alpha) {
  const int n = static_cast<int>(B.cols());
  const Eigen::VectorXd btc = B.transpose() * c;
  Eigen::VectorXd best = Eigen::VectorXd::Zero(n);
  double best_obj = std::numeric_limits<double>::infinity();
  auto objective = [&](const Eigen::VectorXd& x) {
    return 0.5 * (B * x - c).squaredNorm() + alpha * w.cwiseProduct(x).lpNorm<1>();
  };
  auto admissible = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd g = B.transpose() * (B * x) - btc;
    for (int i = 0; i < n; ++i) {
      const double t = alpha * w[i];
      if (x[i] != 0.0) {
        if (std::abs(g[i] + t * (x[i] > 0 ? 1.0 : -1.0)) > 1e-9 * (1.0 + t)) return false;
      } else if (std::abs(g[i]) > t * (1.0 + 1e-9) + 1e-12) {
        return false;
      }
    }
    return true;
  };
  for (int mask = 0; mask < (1 << n); ++mask) {
    std::vector<int> s;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) s.push_back(i);
    const int k = static_cast<int>(s.size());
    Eigen::MatrixXd bs(B.rows(), k);
    for (int t = 0; t < k; ++t) bs.col(t) = B.col(s[t]);
    if (k > 0) {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(bs);
      if (lu.rank() < k) continue;
    }
    for (int signs = 0; signs < (1 << k); ++signs) {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
      if (k > 0) {
        Eigen::VectorXd rhs(k);
        for (int t = 0; t < k; ++t) rhs[t] = btc[s[t]] - alpha * w[s[t]] * ((signs >> t) & 1 ? -1.0 : 1.0);
        const Eigen::VectorXd xs = (bs.transpose() * bs).fullPivLu().solve(rhs);
        bool ok = true;
        for (int t = 0; t < k; ++t) {
          const double sgn = (signs >> t) & 1 ? -1.0 : 1.0;
          if (!(xs[t] * sgn > 0.0)) ok = false;
          x[s[t]] = xs[t];
        }
        if (!ok) continue;
      }
      if (!admissible(x)) continue;
      const double obj = objective(x);
      if (obj < best_obj) {
        best_obj = obj;
        best = x;
      }
    }
  }
  return best;
}

/// Orthogonal projector onto the row space of A via A^T (A A^T)^{-1} A
/// (A with full row rank).
inline Eigen::MatrixXd row_space_projector(const Eigen::MatrixXd& a) {
  return a.transpose() * (a * a.transpose()).inverse() * a;
}

}  // namespace testsupport
