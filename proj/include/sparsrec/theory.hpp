#pragma once

// Closed-form predictions for single-source recovery: the max property,
// the shrinkage factor γ and its admissible α interval, rescaling, and the
// two-source collision that defeats the single-source guarantee.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sparsrec/errors.hpp"
#include "sparsrec/operators.hpp"

namespace sparsrec::theory {

struct MaxPropertyResult {
  Eigen::Index argmax = 0;
  bool ambiguous = false;  // runner-up within tie_tol of the maximum
  double margin = 0.0;     // max minus runner-up
};

/// argmax_i |[W^{-1} P e_j]_i|.
inline MaxPropertyResult max_property_argmax(const operators::ProjectorWeights& p, Eigen::Index j,
                                             double tie_tol = 1e-12) {
  sparsrec::detail::require(j >= 0 && j < p.size(), "max_property_argmax: index out of range");
  const Eigen::VectorXd v = p.scaled_column(j).cwiseAbs();
  MaxPropertyResult r;
  double best = -1.0, second = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] > best) {
      second = best;
      best = v[i];
      r.argmax = i;
    } else if (v[i] > second) {
      second = v[i];
    }
  }
  r.margin = second < 0.0 ? best : best - second;
  r.ambiguous = second >= 0.0 && r.margin <= tie_tol;
  return r;
}

struct RecoveryPrediction {
  Eigen::Index j = 0;
  double alpha = 0.0;
  double gamma = 0.0;
  double alpha_lower = 0.0;
  double alpha_upper = 0.0;
  Eigen::VectorXd tau;  // τ_ij = v_i / v_j, with tau[j] = 0
  bool feasible = false;
};

namespace detail {

inline Eigen::VectorXd tau_vector(const Eigen::VectorXd& v, Eigen::Index j) {
  Eigen::VectorXd tau = v / v[j];
  tau[j] = 0.0;
  return tau;
}

}  // namespace detail

/// Noise-free fit to Pe_j: γ = 1 - α / [W^{-1}Pe_j]_j on 0 < α < [W^{-1}Pe_j]_j.
inline RecoveryPrediction predict_noise_free(const operators::ProjectorWeights& p, Eigen::Index j, double alpha) {
  sparsrec::detail::require(j >= 0 && j < p.size(), "predict_noise_free: index out of range");
  sparsrec::detail::require(alpha > 0.0, "predict_noise_free: alpha must be positive");
  const Eigen::VectorXd v = p.scaled_column(j);
  RecoveryPrediction r;
  r.j = j;
  r.alpha = alpha;
  r.alpha_upper = v[j];
  r.alpha_lower = 0.0;
  r.gamma = 1.0 - alpha / v[j];
  r.tau = detail::tau_vector(v, j);
  r.feasible = alpha < r.alpha_upper;
  if (!r.feasible) r.gamma = 0.0;
  return r;
}

/// Fit of P_k x to P_k e_j + A_k^† η.  With v = W_k^{-1}P_k e_j and
/// n = W_k^{-1}A_k^†η, the optimality condition at γ e_j gives
///   γ = 1 - (α - n_j) / v_j,
///   max_{i≠j} (1+|τ_ij|)/(1-|τ_ij|) · max_i |n_i|  <  α  <  v_j + n_j.
inline RecoveryPrediction predict_with_noise(const operators::ProjectorWeights& pk,
                                             const Eigen::VectorXd& ak_dagger_eta, Eigen::Index j, double alpha) {
  sparsrec::detail::require(j >= 0 && j < pk.size(), "predict_with_noise: index out of range");
  sparsrec::detail::require(ak_dagger_eta.size() == pk.size(), "predict_with_noise: noise image length mismatch");
  sparsrec::detail::require(alpha > 0.0, "predict_with_noise: alpha must be positive");
  const Eigen::VectorXd v = pk.scaled_column(j);
  const Eigen::VectorXd n = ak_dagger_eta.cwiseQuotient(pk.w);
  RecoveryPrediction r;
  r.j = j;
  r.alpha = alpha;
  r.tau = detail::tau_vector(v, j);
  double factor = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i == j) continue;
    const double t = std::abs(r.tau[i]);
    if (!(t < 1.0))
      throw AssumptionViolation("predict_with_noise: |tau_" + std::to_string(i) + "," + std::to_string(j) +
                                "| = " + std::to_string(t) + " is not below 1");
    factor = std::max(factor, (1.0 + t) / (1.0 - t));
  }
  const double noise_max = n.lpNorm<Eigen::Infinity>();
  r.alpha_lower = noise_max > 0.0 ? factor * noise_max : 0.0;
  r.alpha_upper = v[j] + n[j];
  r.gamma = 1.0 - (alpha - n[j]) / v[j];
  r.feasible = r.alpha_lower < alpha && alpha < r.alpha_upper;
  return r;
}

/// x / (1 - α / [W_k^{-1}P_k e_j]_j) with j the position of the largest |x_i|.
inline Eigen::VectorXd rescale_solution(const Eigen::VectorXd& x, double alpha, const operators::ProjectorWeights& pk) {
  sparsrec::detail::require(x.size() == pk.size(), "rescale_solution: length mismatch");
  Eigen::Index j = 0;
  const double peak = x.cwiseAbs().maxCoeff(&j);
  sparsrec::detail::require(peak > 0.0, "rescale_solution: solution is zero");
  const double denom = 1.0 - alpha / pk.scaled_column(j)[j];
  sparsrec::detail::require(denom > 0.0, "rescale_solution: alpha lies outside the admissible interval");
  return x / denom;
}

struct Collision {
  Eigen::Index j = 0;
  double c = 0.0;       // A e_m + A e_n ≈ c A e_j
  double cosine = 0.0;  // |cos| between the two sides
};

/// Best j with A e_m + A e_n parallel to A e_j (|cos| ≥ 1 - tol).
inline std::optional<Collision> two_source_collision(const Eigen::MatrixXd& a, Eigen::Index m, Eigen::Index n,
                                                     double tol = 1e-6) {
  sparsrec::detail::require(m != n, "two_source_collision: indices must differ");
  sparsrec::detail::require(m >= 0 && n >= 0 && m < a.cols() && n < a.cols(),
                            "two_source_collision: index out of range");
  const Eigen::VectorXd s = a.col(m) + a.col(n);
  const double sn = s.norm();
  if (!(sn > 0.0)) return std::nullopt;
  std::optional<Collision> best;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const double cn = a.col(j).norm();
    if (!(cn > 0.0)) continue;
    const double dot = s.dot(a.col(j));
    const double cosine = std::abs(dot) / (sn * cn);
    if (cosine >= 1.0 - tol && (!best || cosine > best->cosine)) best = Collision{j, dot / (cn * cn), cosine};
  }
  return best;
}

inline std::optional<Collision> two_source_collision(const fem::TransferOperator& a, Eigen::Index m, Eigen::Index n,
                                                     double tol = 1e-6) {
  return two_source_collision(a.matrix, m, n, tol);
}

/// ||Px - Pe_j|| <= tol·max(1, ||Pe_j||).
inline bool is_feasible(const operators::ProjectorWeights& p, const Eigen::VectorXd& x, Eigen::Index j,
                        double tol = 1e-10) {
  const Eigen::VectorXd pej = p.column(j);
  return (p.apply(x) - pej).norm() <= tol * std::max(1.0, pej.norm());
}

/// ||Wx||_1 - ||We_j||_1 for a single candidate.
inline double weighted_norm_gap(const operators::ProjectorWeights& p, const Eigen::VectorXd& x, Eigen::Index j) {
  return p.w.cwiseProduct(x).lpNorm<1>() - p.w[j];
}

struct InequalityReport {
  int trials = 0;
  double min_gap = std::numeric_limits<double>::infinity();
};

/// Samples x = e_j + q with q = s (I-P) r and checks ||We_j||_1 <= ||Wx||_1.
inline InequalityReport verify_weighted_norm_inequality(const operators::ProjectorWeights& p, Eigen::Index j,
                                                        int trials, std::uint64_t seed) {
  sparsrec::detail::require(trials >= 1, "verify_weighted_norm_inequality: trials must be positive");
  sparsrec::detail::require(j >= 0 && j < p.size(), "verify_weighted_norm_inequality: index out of range");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> logscale(-4.0, 1.0);
  InequalityReport rep;
  rep.trials = trials;
  const Eigen::Index n = p.size();
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = normal(rng);
    Eigen::VectorXd q = r - p.apply(r);
    const double qn = q.norm();
    if (qn > 0.0) q *= std::pow(10.0, logscale(rng)) / qn;
    Eigen::VectorXd x = q;
    x[j] += 1.0;
    const double gap = weighted_norm_gap(p, x, j);
    if (gap < -1e-10 * std::max(1.0, p.w.cwiseProduct(x).lpNorm<1>()))
      throw TheoremViolation("verify_weighted_norm_inequality: feasible point beats e_" + std::to_string(j) +
                             " by " + std::to_string(-gap));
    rep.min_gap = std::min(rep.min_gap, gap);
  }
  return rep;
}

inline void write_predictions_csv(const std::string& path, const std::vector<RecoveryPrediction>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_predictions_csv: cannot open " + path);
  out << "j,alpha,gamma,alpha_lower,alpha_upper,feasible\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.j << ',' << r.alpha << ',' << r.gamma << ',' << r.alpha_lower << ',' << r.alpha_upper << ','
        << (r.feasible ? 1 : 0) << '\n';
}

}  // namespace sparsrec::theory
