#pragma once

// Split-Bregman (scaled ADMM) for
//
//   min_x  1/2 ||B x - c||^2 + alpha ||W x||_1,   W = diag(w) > 0,
//
// with the splitting z = x.  Every weighted problem in the library (the
// projected problems, their truncated-SVD and Tikhonov variants, and the
// unweighted baseline) is an instance of this form.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sparsrec/errors.hpp"
#include "sparsrec/operators.hpp"

namespace sparsrec::solver {

struct WeightedProblem {
  Eigen::MatrixXd B;
  Eigen::VectorXd c;
  Eigen::VectorXd w;
  double alpha = 0.0;

  Eigen::Index size() const { return B.cols(); }

  void validate() const {
    using sparsrec::detail::require;
    require(B.rows() == c.size(), "WeightedProblem: B and c disagree in length");
    require(B.cols() == w.size(), "WeightedProblem: B and w disagree in length");
    require(alpha > 0.0, "WeightedProblem: alpha must be positive");
    require((w.array() > 0.0).all(), "WeightedProblem: weights must be positive");
  }

  double objective(const Eigen::VectorXd& x) const {
    return 0.5 * (B * x - c).squaredNorm() + alpha * w.cwiseProduct(x).lpNorm<1>();
  }

  /// Reference scale for first-order residuals: ||B^T c||_inf + alpha max w.
  double kkt_scale() const { return (B.transpose() * c).lpNorm<Eigen::Infinity>() + alpha * w.maxCoeff(); }
};

struct SolverConfig {
  double penalty = 0.0;  // 0 selects mean(diag(B^T B))
  int max_iters = 50000;
  double tol_primal = 1e-10;
  double tol_dual = 1e-10;
  double over_relaxation = 1.0;
  // Residual balancing: rescale the penalty by 2 whenever one residual
  // exceeds the other tenfold, at most max_penalty_updates times.
  bool adaptive_penalty = true;
  int max_penalty_updates = 200;
  // Active-set polish: once the support of z has been stable for
  // polish_interval iterations, solve the optimality system on that support
  // exactly and accept it if the full KKT violation is below polish_tol·scale.
  bool polish = true;
  int polish_interval = 50;
  double polish_tol = 1e-10;
  // When max_iters is exhausted, the iterate still counts as converged if
  // its KKT violation is below kkt_tol·scale.
  double kkt_tol = 1e-6;
  std::string trace_path;  // CSV trace when non-empty
};

struct SolveResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double kkt_violation = 0.0;  // absolute; compare against kkt_scale()
  bool converged = false;
  bool polished = false;  // converged through the active-set polish
};

inline double shrink(double v, double kappa) {
  sparsrec::detail::require(kappa >= 0.0, "shrink: kappa must be non-negative");
  const double a = std::abs(v) - kappa;
  return a > 0.0 ? std::copysign(a, v) : 0.0;
}

inline Eigen::VectorXd shrink(const Eigen::VectorXd& v, double kappa) {
  sparsrec::detail::require(kappa >= 0.0, "shrink: kappa must be non-negative");
  return v.unaryExpr([kappa](double t) {
    const double a = std::abs(t) - kappa;
    return a > 0.0 ? std::copysign(a, t) : 0.0;
  });
}

/// Componentwise thresholds.
inline Eigen::VectorXd shrink(const Eigen::VectorXd& v, const Eigen::VectorXd& kappa) {
  sparsrec::detail::require(v.size() == kappa.size(), "shrink: size mismatch");
  sparsrec::detail::require((kappa.array() >= 0.0).all(), "shrink: thresholds must be non-negative");
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]) - kappa[i];
    out[i] = a > 0.0 ? std::copysign(a, v[i]) : 0.0;
  }
  return out;
}

/// Largest violation of 0 ∈ B^T(Bx - c) + alpha W ∂||x||_1.
inline double kkt_violation(const WeightedProblem& p, const Eigen::VectorXd& x) {
  const Eigen::VectorXd g = p.B.transpose() * (p.B * x - p.c);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double t = p.alpha * p.w[i];
    const double v = x[i] != 0.0 ? std::abs(g[i] + t * (x[i] > 0.0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(g[i]) - t);
    worst = std::max(worst, v);
  }
  return worst;
}

/// Indices with |x_i| > rel * max |x|.
inline std::vector<Eigen::Index> support(const Eigen::VectorXd& x, double rel = 1e-6) {
  std::vector<Eigen::Index> s;
  const double peak = x.cwiseAbs().maxCoeff();
  if (!(peak > 0.0)) return s;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) > rel * peak) s.push_back(i);
  return s;
}

/// Reusable solver for one fidelity operator B.  B^T B is diagonalized once;
/// problems differing only in c, w or alpha share the factorization.
class SplitBregman {
 public:
  SplitBregman(const Eigen::MatrixXd& B, SolverConfig config) : config_(std::move(config)) {
    using sparsrec::detail::require;
    require(config_.max_iters > 0, "SolverConfig: max_iters must be positive");
    require(config_.tol_primal > 0.0 && config_.tol_dual > 0.0, "SolverConfig: tolerances must be positive");
    require(config_.over_relaxation >= 1.0 && config_.over_relaxation <= 1.8,
            "SolverConfig: over_relaxation must lie in [1, 1.8]");
    require(config_.penalty >= 0.0, "SolverConfig: penalty must be non-negative");
    require(config_.polish_interval > 0 && config_.polish_tol > 0.0 && config_.kkt_tol > 0.0,
            "SolverConfig: invalid polish or KKT tolerance");
    const Eigen::MatrixXd btb = B.transpose() * B;
    mu_ = config_.penalty > 0.0 ? config_.penalty : btb.diagonal().mean();
    if (!(mu_ > 0.0)) mu_ = 1.0;
    // B^T B = Q Λ Q^T serves every penalty: (B^T B + μI)^{-1} = Q (Λ + μ)^{-1} Q^T.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(btb);
    if (eig.info() != Eigen::Success) throw NumericError("SplitBregman: eigendecomposition of B^T B failed");
    q_ = eig.eigenvectors();
    lambda_ = eig.eigenvalues().cwiseMax(0.0);
    rows_ = B.rows();
  }

  /// Initial penalty μ.
  double penalty() const { return mu_; }
  const SolverConfig& config() const { return config_; }

  SolveResult solve(const WeightedProblem& p, const std::optional<Eigen::VectorXd>& warm_start = std::nullopt) const {
    p.validate();
    sparsrec::detail::require(p.B.cols() == q_.rows() && p.B.rows() == rows_,
                              "SplitBregman: problem does not match the factored operator");
    const Eigen::Index n = p.size();
    const Eigen::VectorXd btc = p.B.transpose() * p.c;
    const double relax = config_.over_relaxation;
    double mu = mu_;
    Eigen::VectorXd kappa = (p.alpha / mu) * p.w;

    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    if (warm_start) {
      sparsrec::detail::require(warm_start->size() == n, "solve: warm start has the wrong length");
      z = *warm_start;
    }
    // Scaled dual: the clipped negative gradient at z is a feasible guess.
    Eigen::VectorXd u = (-(p.B.transpose() * (p.B * z) - btc) / mu).cwiseMax(-kappa).cwiseMin(kappa);
    Eigen::VectorXd x(n), xh(n), z_old(n), coef(n);
    const Eigen::VectorXd qbtc = q_.transpose() * btc;

    std::ofstream trace;
    if (!config_.trace_path.empty()) {
      trace.open(config_.trace_path);
      if (!trace) throw std::runtime_error("solve: cannot open trace file " + config_.trace_path);
      trace << "iteration,objective,primal_residual,dual_residual\n" << std::setprecision(17);
    }

    SolveResult res;
    int updates = 0;
    int stable = 0;
    const double scale = p.kkt_scale();
    for (int it = 1; it <= config_.max_iters; ++it) {
      coef.noalias() = q_.transpose() * (z - u);
      coef = (qbtc + mu * coef).cwiseQuotient((lambda_.array() + mu).matrix());
      x.noalias() = q_ * coef;
      xh = relax * x + (1.0 - relax) * z;
      z_old = z;
      z = shrink(xh + u, kappa);
      u += xh - z;

      res.iterations = it;
      res.primal_residual = (x - z).norm();
      res.dual_residual = mu * (z - z_old).norm();
      if (!std::isfinite(res.primal_residual) || !std::isfinite(res.dual_residual))
        throw NumericError("solve: non-finite iterate at iteration " + std::to_string(it));
      if (trace.is_open())
        trace << it << ',' << p.objective(z) << ',' << res.primal_residual << ',' << res.dual_residual << '\n';
      if (res.primal_residual <= config_.tol_primal && res.dual_residual <= config_.tol_dual) {
        res.converged = true;
        if (config_.polish)
          if (auto xp = polish(p, z); xp && kkt_violation(p, *xp) <= kkt_violation(p, z)) {
            z = *xp;
            res.polished = true;
          }
        break;
      }
      if (config_.polish) {
        bool same = true;
        for (Eigen::Index i = 0; i < n && same; ++i) same = (z[i] != 0.0) == (z_old[i] != 0.0);
        stable = same ? stable + 1 : 0;
        if (stable >= config_.polish_interval) {
          stable = 0;
          if (auto xp = polish(p, z); xp && kkt_violation(p, *xp) <= config_.polish_tol * scale) {
            z = *xp;
            res.converged = res.polished = true;
            break;
          }
        }
      }
      if (config_.adaptive_penalty && updates < config_.max_penalty_updates) {
        double scale = 1.0;
        if (res.primal_residual > 10.0 * res.dual_residual) scale = 2.0;
        else if (res.dual_residual > 10.0 * res.primal_residual) scale = 0.5;
        if (scale != 1.0) {
          mu *= scale;
          u /= scale;
          kappa = (p.alpha / mu) * p.w;
          ++updates;
        }
      }
    }
    res.x = z;
    res.objective = p.objective(z);
    res.kkt_violation = kkt_violation(p, z);
    if (!res.converged && res.kkt_violation <= config_.kkt_tol * scale) res.converged = true;
    return res;
  }

 private:
  /// Minimizer restricted to the support and signs of z, if B_S has full
  /// column rank and the signs are reproduced.
  static std::optional<Eigen::VectorXd> polish(const WeightedProblem& p, const Eigen::VectorXd& z) {
    std::vector<Eigen::Index> s;
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if (z[i] != 0.0) s.push_back(i);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(z.size());
    if (s.empty()) return x;
    if (static_cast<Eigen::Index>(s.size()) > p.B.rows()) return std::nullopt;
    const auto k = static_cast<Eigen::Index>(s.size());
    Eigen::MatrixXd bs(p.B.rows(), k);
    Eigen::VectorXd rhs(k);
    for (Eigen::Index t = 0; t < k; ++t) bs.col(t) = p.B.col(s[t]);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(bs);
    if (qr.rank() < k) return std::nullopt;
    rhs = bs.transpose() * p.c;
    for (Eigen::Index t = 0; t < k; ++t) rhs[t] -= p.alpha * p.w[s[t]] * (z[s[t]] > 0.0 ? 1.0 : -1.0);
    const Eigen::VectorXd xs = (bs.transpose() * bs).ldlt().solve(rhs);
    for (Eigen::Index t = 0; t < k; ++t) {
      if ((xs[t] > 0.0) != (z[s[t]] > 0.0) || xs[t] == 0.0) return std::nullopt;
      x[s[t]] = xs[t];
    }
    return x;
  }

  SolverConfig config_;
  double mu_ = 1.0;
  Eigen::MatrixXd q_;
  Eigen::VectorXd lambda_;
  Eigen::Index rows_ = 0;
};

inline SolveResult solve(const WeightedProblem& problem, const SolverConfig& config = {},
                         const std::optional<Eigen::VectorXd>& warm_start = std::nullopt) {
  problem.validate();
  return SplitBregman(problem.B, config).solve(problem, warm_start);
}

struct BasisPursuitResult {
  Eigen::VectorXd x;
  std::vector<double> alphas;
  double constraint_residual = 0.0;
  bool converged = false;
};

/// Default continuation: α_t = α_0 2^{-t} from α_0 = ||W^{-1} target||_inf / 2
/// down to final_alpha.
inline std::vector<double> continuation_schedule(const operators::ProjectorWeights& p, const Eigen::VectorXd& target,
                                                 double final_alpha = 1e-8) {
  std::vector<double> s;
  const double a0 = 0.5 * target.cwiseQuotient(p.w).lpNorm<Eigen::Infinity>();
  if (!(a0 > 0.0)) return {final_alpha};
  for (double a = a0; a > final_alpha; a *= 0.5) s.push_back(a);
  s.push_back(final_alpha);
  return s;
}

/// min ||Wx||_1  s.t.  Px = target, as the small-alpha limit of the
/// projected problem, warm-started along a decreasing alpha schedule.
inline BasisPursuitResult solve_basis_pursuit(const operators::ProjectorWeights& p, const Eigen::VectorXd& target,
                                              std::vector<double> schedule = {}, const SolverConfig& config = {},
                                              double residual_tol = 1e-6) {
  sparsrec::detail::require(target.size() == p.size(), "solve_basis_pursuit: target length mismatch");
  sparsrec::detail::require((p.apply(target) - target).norm() <= 1e-8 * std::max(1.0, target.norm()),
                            "solve_basis_pursuit: target is not in the range of P");
  BasisPursuitResult out;
  if (schedule.empty()) schedule = continuation_schedule(p, target);
  out.alphas = schedule;
  out.x = Eigen::VectorXd::Zero(p.size());
  if (target.norm() == 0.0) {
    out.converged = true;
    return out;
  }
  const Eigen::MatrixXd pm = p.matrix();
  SplitBregman sb(pm, config);
  WeightedProblem prob{pm, target, p.w, schedule.front()};
  bool all_converged = true;
  for (double a : schedule) {
    prob.alpha = a;
    SolveResult r = sb.solve(prob, out.x);
    all_converged = all_converged && r.converged;
    out.x = r.x;
  }
  out.constraint_residual = (p.apply(out.x) - target).norm();
  out.converged = all_converged && out.constraint_residual <= residual_tol;
  return out;
}

}  // namespace sparsrec::solver
