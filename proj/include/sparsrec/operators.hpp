#pragma once

// Projector onto N(A)^⊥, the diagonal weights w_i = ||P e_i||, and the
// truncated-SVD / Tikhonov surrogates used in place of the pseudo-inverse.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "sparsrec/errors.hpp"
#include "sparsrec/fem.hpp"

namespace sparsrec::operators {

struct SvdFactors {
  Eigen::MatrixXd matrix;  // the factored matrix, kept for residual checks
  Eigen::MatrixXd U;       // m x m
  Eigen::VectorXd sigma;   // min(m, n), non-increasing
  Eigen::MatrixXd V;       // n x n
  double rank_tol = 0.0;

  Eigen::Index rows() const { return U.rows(); }
  Eigen::Index cols() const { return V.rows(); }

  int numerical_rank() const {
    int r = 0;
    while (r < sigma.size() && sigma[r] > rank_tol) ++r;
    return r;
  }

  /// Resolve an optional truncation level against the numerical rank.
  int resolve_k(std::optional<int> k) const {
    const int r = numerical_rank();
    if (!k) return r;
    sparsrec::detail::require(*k >= 0 && *k <= r,
                              "truncation level " + std::to_string(*k) + " exceeds numerical rank " +
                                  std::to_string(r));
    return *k;
  }
};

inline SvdFactors svd(const Eigen::MatrixXd& a) {
  sparsrec::detail::require(a.size() > 0, "svd: empty matrix");
  sparsrec::detail::require(a.allFinite(), "svd: matrix has non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> dec(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdFactors f;
  f.matrix = a;
  f.U = dec.matrixU();
  f.V = dec.matrixV();
  f.sigma = dec.singularValues();
  if (!f.U.allFinite() || !f.V.allFinite() || !f.sigma.allFinite())
    throw NumericError("svd: decomposition produced non-finite factors");
  const double s1 = f.sigma.size() ? f.sigma[0] : 0.0;
  f.rank_tol = static_cast<double>(std::max(a.rows(), a.cols())) * s1 * std::numeric_limits<double>::epsilon();
  return f;
}

inline SvdFactors svd(const fem::TransferOperator& a) { return svd(a.matrix); }

/// P_k = V_k V_k^T with weights w_i = ||P_k e_i||.  P is kept dense for
/// n <= kDenseLimit and applied through V_k otherwise.
struct ProjectorWeights {
  static constexpr Eigen::Index kDenseLimit = 512;

  Eigen::MatrixXd basis;  // V_k, n x k
  Eigen::MatrixXd dense;  // P_k when n <= kDenseLimit, else empty
  Eigen::VectorXd w;
  int k = 0;

  Eigen::Index size() const { return basis.rows(); }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    if (dense.size()) return dense * x;
    return basis * (basis.transpose() * x);
  }

  Eigen::VectorXd column(Eigen::Index i) const {
    if (dense.size()) return dense.col(i);
    return basis * basis.row(i).transpose();
  }

  Eigen::MatrixXd matrix() const {
    if (dense.size()) return dense;
    return basis * basis.transpose();
  }

  /// W^{-1} P e_j, the vector behind the max property.
  Eigen::VectorXd scaled_column(Eigen::Index j) const { return column(j).cwiseQuotient(w); }
};

inline ProjectorWeights projector_and_weights(const SvdFactors& f, std::optional<int> k = std::nullopt) {
  const int kk = f.resolve_k(k);
  sparsrec::detail::require(kk >= 1, "projector_and_weights: truncation level must be positive");
  ProjectorWeights p;
  p.k = kk;
  p.basis = f.V.leftCols(kk);
  if (p.basis.rows() <= ProjectorWeights::kDenseLimit) p.dense = p.basis * p.basis.transpose();
  p.w = p.basis.rowwise().norm();
  // Weights are dimensionless, so compare against the unscaled rank rule.
  const double floor = static_cast<double>(std::max(f.rows(), f.cols())) * std::numeric_limits<double>::epsilon();
  for (Eigen::Index i = 0; i < p.w.size(); ++i)
    if (!(p.w[i] > floor))
      throw WeightDegeneracyError("projector_and_weights: P e_" + std::to_string(i) + " vanishes");
  return p;
}

struct NonparallelReport {
  bool ok = true;
  std::pair<Eigen::Index, Eigen::Index> worst_pair{0, 0};
  double worst_cosine = 0.0;
};

/// Largest |cos| between distinct columns.  ok iff it stays below 1 - tol.
inline NonparallelReport check_nonparallel(const Eigen::MatrixXd& a, double tol = 1e-12) {
  const Eigen::VectorXd norms = a.colwise().norm().transpose();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    sparsrec::detail::require(norms[i] > 0.0, "check_nonparallel: column " + std::to_string(i) + " is zero");
  const Eigen::MatrixXd unit = a * norms.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd gram = unit.transpose() * unit;
  NonparallelReport rep;
  for (Eigen::Index j = 1; j < gram.cols(); ++j)
    for (Eigen::Index i = 0; i < j; ++i) {
      const double c = std::abs(gram(i, j));
      if (c > rep.worst_cosine) {
        rep.worst_cosine = c;
        rep.worst_pair = {i, j};
      }
    }
  rep.ok = rep.worst_cosine <= 1.0 - tol;
  return rep;
}

inline NonparallelReport check_nonparallel(const fem::TransferOperator& a, double tol = 1e-12) {
  return check_nonparallel(a.matrix, tol);
}

/// A_k^† y = V_k Σ_k^{-1} U_k^T y.
inline Eigen::VectorXd pseudo_apply(const SvdFactors& f, std::optional<int> k, const Eigen::VectorXd& y) {
  sparsrec::detail::require(y.size() == f.rows(), "pseudo_apply: data length mismatch");
  const int kk = f.resolve_k(k);
  const Eigen::VectorXd coef = (f.U.leftCols(kk).transpose() * y).cwiseQuotient(f.sigma.head(kk));
  return f.V.leftCols(kk) * coef;
}

/// Dense A_k^† (n x m).
inline Eigen::MatrixXd pseudo_inverse(const SvdFactors& f, std::optional<int> k = std::nullopt) {
  const int kk = f.resolve_k(k);
  return f.V.leftCols(kk) * f.sigma.head(kk).cwiseInverse().asDiagonal() * f.U.leftCols(kk).transpose();
}

/// max |A_k^† A - P_k|; zero in exact arithmetic.
inline double projection_identity_check(const SvdFactors& f, int k) {
  const int kk = f.resolve_k(k);
  const Eigen::MatrixXd vk = f.V.leftCols(kk);
  const Eigen::MatrixXd lhs = pseudo_inverse(f, kk) * f.matrix;
  return (lhs - vk * vk.transpose()).cwiseAbs().maxCoeff();
}

/// S_β = V (Σ^2 + βI)^{-1} V^T A^T, applied through the SVD.
class TikhonovSmoother {
 public:
  TikhonovSmoother(const SvdFactors& f, double beta) : beta_(beta) {
    sparsrec::detail::require(beta > 0.0, "tikhonov_smoother: beta must be positive");
    const Eigen::Index r = f.sigma.size();
    filter_ = f.sigma.array() / (f.sigma.array().square() + beta);
    v_ = f.V.leftCols(r);
    ut_ = f.U.leftCols(r).transpose();
  }

  double beta() const { return beta_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& y) const {
    sparsrec::detail::require(y.size() == ut_.cols(), "TikhonovSmoother: data length mismatch");
    return v_ * filter_.cwiseProduct(ut_ * y);
  }

  /// Dense n x m matrix of the smoother.
  Eigen::MatrixXd matrix() const { return v_ * filter_.asDiagonal() * ut_; }

 private:
  double beta_;
  Eigen::VectorXd filter_;
  Eigen::MatrixXd v_;
  Eigen::MatrixXd ut_;
};

inline TikhonovSmoother tikhonov_smoother(const SvdFactors& f, double beta) { return {f, beta}; }

/// Smallest k >= 1 with ||A_k A_k^† b - b|| <= threshold_factor * noise_norm,
/// or the numerical rank when none qualifies.
inline int morozov_truncation(const SvdFactors& f, const Eigen::VectorXd& b, double noise_norm,
                              double threshold_factor = 1.05) {
  sparsrec::detail::require(noise_norm >= 0.0, "morozov_truncation: noise_norm must be non-negative");
  sparsrec::detail::require(threshold_factor >= 1.0, "morozov_truncation: threshold_factor must be >= 1");
  sparsrec::detail::require(b.size() == f.rows(), "morozov_truncation: data length mismatch");
  const int r = f.numerical_rank();
  const Eigen::VectorXd coef = f.U.transpose() * b;
  // Residual of the rank-k projection is the tail of the coefficient vector.
  Eigen::VectorXd tail(coef.size() + 1);
  tail[coef.size()] = 0.0;
  for (Eigen::Index i = coef.size() - 1; i >= 0; --i) tail[i] = tail[i + 1] + coef[i] * coef[i];
  const double target = threshold_factor * noise_norm;
  for (int k = 1; k <= r; ++k)
    if (std::sqrt(tail[k]) <= target) return k;
  return std::max(r, 1);
}

}  // namespace sparsrec::operators
