#pragma once

// Experiment runner: builds the inverse (and optionally a finer forward)
// discretization, generates seeded noisy data, solves the weighted problems
// and writes CSV/PNG artifacts plus a JSON report per experiment.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sparsrec/errors.hpp"
#include "sparsrec/fem.hpp"
#include "sparsrec/io.hpp"
#include "sparsrec/operators.hpp"
#include "sparsrec/solver.hpp"
#include "sparsrec/theory.hpp"

namespace sparsrec::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Surrogate { ExactPinv, TruncatedSvd, Tikhonov };

using SourceSet = std::vector<std::pair<int, double>>;  // (coarse cell, amplitude)

struct ExperimentSpec {
  std::string name;
  int forward_nodes = 129;
  int inverse_nodes = 65;
  int source_cells = 16;
  double epsilon = 1.0;
  std::vector<SourceSet> source_sets;
  std::optional<fem::DiscSource> disc;
  std::vector<double> alphas;
  Surrogate surrogate = Surrogate::ExactPinv;
  int k = 7;
  double beta = 1e-6;
  std::vector<double> noise_levels;  // empty: noise-free
  std::uint64_t seed = 1;
  std::optional<double> zeta;  // l2 baseline
  bool inverse_crime = false;
  std::string output_dir = "results";

  // Experiment-specific knobs.
  std::vector<double> alpha_factors{0.3, 3.0};  // multiples of ᾱ
  std::vector<int> k_sweep;
  std::vector<double> alpha_sweep;
  double morozov_level = 0.10;
  int sweep_points = 10;
  int cells_1d = 31;
  int refinement_1d = 8;
  std::vector<int> weight_levels;

  solver::SolverConfig solver;

  fs::path dir() const { return fs::path(output_dir) / name; }

  void validate() const {
    using sparsrec::detail::require;
    require(source_cells >= 1, "spec: source_cells must be positive");
    require(inverse_nodes >= 2 && (inverse_nodes - 1) % source_cells == 0,
            "spec: inverse grid is not a refinement of the source grid");
    require(inverse_crime || (forward_nodes >= 2 && (forward_nodes - 1) % source_cells == 0),
            "spec: forward grid is not a refinement of the source grid");
    require(epsilon > 0.0, "spec: epsilon must be positive");
    require(k >= 1, "spec: k must be positive");
    require(beta > 0.0, "spec: beta must be positive");
    for (double a : alphas) require(a > 0.0, "spec: alpha values must be positive");
    for (double p : noise_levels) require(p >= 0.0 && p < 1.0, "spec: noise level must lie in [0, 1)");
    require(!zeta || *zeta > 0.0, "spec: zeta must be positive");
    require(cells_1d >= 3 && refinement_1d >= 1, "spec: invalid 1D grid");
    require(sweep_points >= 2, "spec: sweep_points must be at least 2");
  }
};

/// Index of the coarse cell (cells per side c) containing p.
inline int cell_at(int cells, fem::Point p) {
  auto idx = [cells](double t) { return std::clamp(static_cast<int>(std::floor(t * cells)), 0, cells - 1); };
  return idx(p[1]) * cells + idx(p[0]);
}

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"example1", "example2", "example3", "example4",
                                              "figure1",  "figure2",  "weights"};
  return names;
}

inline ExperimentSpec default_spec(const std::string& name) {
  ExperimentSpec s;
  s.name = name;
  const int c = s.source_cells;
  const int interior = cell_at(c, {0.4, 0.6});
  const int mid_edge = c / 2;  // bottom edge
  if (name == "example1") {
    s.inverse_crime = true;
    s.source_sets = {{{interior, 1.0}}, {{mid_edge, 1.0}}};
    s.alphas = {1e-4, 1e-3};
  } else if (name == "example2") {
    s.surrogate = Surrogate::TruncatedSvd;
    s.k = 7;
    s.source_sets = {{{interior, 1.0}}};
    s.noise_levels = {0.05, 0.10, 0.15};
    s.k_sweep = {3, 5, 15};
    s.alpha_sweep = {1e-2, 1e-3, 1e-4};
  } else if (name == "example3") {
    s.disc = fem::DiscSource{};
    s.zeta = 1e-4;
    s.k = 5;
    s.beta = 1e-6;
    s.alphas = {1e-2, 1e-4, 1e-6};
  } else if (name == "example4") {
    s.surrogate = Surrogate::Tikhonov;
    s.beta = 1e-6;
    s.alphas = {0.01};
    auto set = [c](std::initializer_list<fem::Point> pts) {
      SourceSet out;
      for (const auto& p : pts) out.emplace_back(cell_at(c, p), 1.0);
      return out;
    };
    s.source_sets = {
        set({{0.25, 0.3}, {0.7, 0.65}}),
        set({{0.2, 0.2}, {0.8, 0.25}, {0.25, 0.8}, {0.6, 0.6}}),
        set({{0.05, 0.5}, {0.95, 0.5}, {0.5, 0.05}, {0.5, 0.95}, {0.4, 0.4}, {0.45, 0.55}, {0.6, 0.4}, {0.6, 0.6}}),
    };
  } else if (name == "figure1") {
    s.inverse_crime = true;
    s.source_sets = {{{interior, 1.0}}};
    s.alphas = {1e-4};
  } else if (name == "figure2") {
    s.inverse_crime = true;
    s.alphas = {1e-3};
    const int m = s.cells_1d / 2 - 10;
    s.source_sets = {{{m, 1.0}, {s.cells_1d - 1 - m, 1.0}}, {{m, 1.0}, {s.cells_1d - 6 - m, 1.0}}};
  } else if (name == "weights") {
    s.inverse_crime = true;
    s.weight_levels = {7, 70};
  } else {
    throw std::invalid_argument("unknown experiment '" + name + "'");
  }
  return s;
}

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

inline std::vector<int> parse_ints(const std::string& v) {
  std::vector<int> out;
  for (double d : io::parse_doubles(v)) {
    if (d != std::floor(d)) throw std::invalid_argument("expected integers, got '" + v + "'");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

/// "i:a, j:b" or "i, j" (amplitude 1).
inline SourceSet parse_sources(const std::string& v) {
  SourceSet out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    const auto colon = item.find(':');
    const int idx = std::stoi(item.substr(0, colon));
    const double amp = colon == std::string::npos ? 1.0 : std::stod(item.substr(colon + 1));
    out.emplace_back(idx, amp);
  }
  if (out.empty()) throw std::invalid_argument("sources: empty list");
  return out;
}

inline double parse_double(const std::string& v) {
  const auto vals = io::parse_doubles(v);
  if (vals.size() != 1) throw std::invalid_argument("expected one number, got '" + v + "'");
  return vals[0];
}

}  // namespace detail

/// Applies config keys on top of `spec`.  Unknown keys are an error.
inline void apply_config(ExperimentSpec& spec, const std::map<std::string, std::string>& cfg) {
  for (const auto& [key, value] : cfg) {
    if (key == "forward_nodes") spec.forward_nodes = static_cast<int>(detail::parse_double(value));
    else if (key == "inverse_nodes") spec.inverse_nodes = static_cast<int>(detail::parse_double(value));
    else if (key == "source_cells") spec.source_cells = static_cast<int>(detail::parse_double(value));
    else if (key == "epsilon") spec.epsilon = detail::parse_double(value);
    else if (key == "sources") spec.source_sets = {detail::parse_sources(value)};
    else if (key == "disc_center" || key == "disc_radius" || key == "disc_amplitude") {
      if (!spec.disc) spec.disc = fem::DiscSource{};
      if (key == "disc_center") {
        const auto v = io::parse_doubles(value);
        if (v.size() != 2) throw std::invalid_argument("disc_center: expected two coordinates");
        spec.disc->center = {v[0], v[1]};
      } else if (key == "disc_radius") {
        spec.disc->radius = detail::parse_double(value);
      } else {
        spec.disc->amplitude = detail::parse_double(value);
      }
    } else if (key == "alpha") spec.alphas = io::parse_doubles(value);
    else if (key == "surrogate") {
      if (value == "exact_pinv") spec.surrogate = Surrogate::ExactPinv;
      else if (value == "truncated_svd") spec.surrogate = Surrogate::TruncatedSvd;
      else if (value == "tikhonov") spec.surrogate = Surrogate::Tikhonov;
      else throw std::invalid_argument("surrogate: expected exact_pinv, truncated_svd or tikhonov");
    } else if (key == "k") spec.k = static_cast<int>(detail::parse_double(value));
    else if (key == "beta") spec.beta = detail::parse_double(value);
    else if (key == "noise") spec.noise_levels = value == "none" ? std::vector<double>{} : io::parse_doubles(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "zeta") spec.zeta = detail::parse_double(value);
    else if (key == "inverse_crime") spec.inverse_crime = detail::parse_bool(value);
    else if (key == "output_dir") spec.output_dir = value;
    else if (key == "alpha_factors") spec.alpha_factors = io::parse_doubles(value);
    else if (key == "k_sweep") spec.k_sweep = detail::parse_ints(value);
    else if (key == "alpha_sweep") spec.alpha_sweep = io::parse_doubles(value);
    else if (key == "morozov_level") spec.morozov_level = detail::parse_double(value);
    else if (key == "sweep_points") spec.sweep_points = static_cast<int>(detail::parse_double(value));
    else if (key == "cells_1d") spec.cells_1d = static_cast<int>(detail::parse_double(value));
    else if (key == "refinement_1d") spec.refinement_1d = static_cast<int>(detail::parse_double(value));
    else if (key == "weight_levels") spec.weight_levels = detail::parse_ints(value);
    else if (key == "max_iters") spec.solver.max_iters = static_cast<int>(detail::parse_double(value));
    else if (key == "tol") spec.solver.tol_primal = spec.solver.tol_dual = detail::parse_double(value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

struct NoiseRealization {
  Eigen::VectorXd rho;
  double delta = 0.0;
  Eigen::VectorXd eta;
  double achieved_level = 0.0;
  std::uint64_t seed = 0;
};

/// η = δρ with ρ ~ N(0, I) and δ = p ||b†|| / ||ρ||, so ||η|| / ||b†|| = p.
inline NoiseRealization make_noise(const Eigen::VectorXd& b_dagger, double level, std::uint64_t seed) {
  sparsrec::detail::require(level >= 0.0 && level < 1.0, "make_noise: level must lie in [0, 1)");
  NoiseRealization n;
  n.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  n.rho.resize(b_dagger.size());
  for (Eigen::Index i = 0; i < n.rho.size(); ++i) n.rho[i] = normal(rng);
  const double bn = b_dagger.norm();
  n.delta = level * bn / n.rho.norm();
  n.eta = n.delta * n.rho;
  n.achieved_level = bn > 0.0 ? n.eta.norm() / bn : 0.0;
  return n;
}

/// Discretization used for inversion.
struct InverseSetup {
  fem::FemSystem system;
  fem::SourceBasis basis;
  fem::TransferOperator A;
  operators::SvdFactors svd;
};

inline InverseSetup build_inverse_setup(int dim, int nodes_per_side, int source_cells, double epsilon) {
  fem::Grid grid = fem::build_grid(dim, nodes_per_side);
  InverseSetup s{fem::assemble_fem(grid, epsilon), {}, {}, {}};
  s.basis = fem::build_source_basis(s.system.grid, source_cells);
  s.A = fem::assemble_transfer(s.system, s.basis);
  s.svd = operators::svd(s.A);
  return s;
}

/// Forward model producing synthetic data on the inverse boundary nodes.
struct DataModel {
  std::optional<fem::FemSystem> forward;  // empty: inverse crime
  std::optional<fem::SourceBasis> basis;

  const fem::FemSystem& system(const InverseSetup& inv) const { return forward ? *forward : inv.system; }

  Eigen::VectorXd observe_coarse(const InverseSetup& inv, const Eigen::VectorXd& x) const {
    const auto& b = basis ? *basis : inv.basis;
    return fem::generate_boundary_data(system(inv), fem::cell_values_from_basis(b, x), inv.system);
  }

  Eigen::VectorXd observe_disc(const InverseSetup& inv, const fem::DiscSource& disc) const {
    const auto& sys = system(inv);
    return fem::generate_boundary_data(sys, fem::cell_values_from_disc(sys.grid, disc), inv.system);
  }
};

inline DataModel build_data_model(const ExperimentSpec& spec, int dim = 2) {
  DataModel d;
  if (spec.inverse_crime) return d;
  d.forward = fem::assemble_fem(fem::build_grid(dim, spec.forward_nodes), spec.epsilon);
  d.basis = fem::build_source_basis(d.forward->grid, spec.source_cells);
  return d;
}

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::string experiment;
  fs::path dir;
  std::uint64_t seed = 0;
  std::vector<Check> checks;
  std::vector<std::string> notes;
  bool all_converged = true;
  json data = json::object();

  void check(const std::string& name, bool passed, const std::string& detail = {}) {
    checks.push_back({name, passed, detail});
  }
  void note(const std::string& text) { notes.push_back(text); }
  void converged(bool ok) { all_converged = all_converged && ok; }

  bool checks_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
  bool ok() const { return all_converged && checks_passed(); }

  void write() const {
    json j;
    j["experiment"] = experiment;
    j["seed"] = seed;
    j["all_converged"] = all_converged;
    j["checks"] = json::array();
    for (const auto& c : checks) j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    j["notes"] = notes;
    j["data"] = data;
    fs::create_directories(dir);
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    out << j.dump(2) << '\n';
  }
};

inline Report make_report(const ExperimentSpec& spec) {
  Report r;
  r.experiment = spec.name;
  r.dir = spec.dir();
  r.seed = spec.seed;
  return r;
}

namespace detail {

inline std::string fmt(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// File-name tag for a parameter value, e.g. 0.0001.
inline std::string tag(double v) { return fmt(v, "%g"); }

inline Eigen::VectorXd unit(Eigen::Index n, Eigen::Index j) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e[j] = 1.0;
  return e;
}

inline Eigen::VectorXd sources_vector(Eigen::Index n, const SourceSet& set) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (auto [i, a] : set) {
    sparsrec::detail::require(i >= 0 && i < n, "source cell " + std::to_string(i) + " is out of range");
    x[i] += a;
  }
  return x;
}

struct Summary {
  std::vector<Eigen::Index> support;
  Eigen::Index peak_index = 0;
  double peak = 0.0;      // signed value at the largest |x_i|
  double off_ratio = 0.0;  // max off-peak |x_i| / |peak|
};

inline Summary summarize(const Eigen::VectorXd& x) {
  Summary s;
  s.support = solver::support(x);
  const double amax = x.cwiseAbs().maxCoeff(&s.peak_index);
  s.peak = x[s.peak_index];
  double off = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (i != s.peak_index) off = std::max(off, std::abs(x[i]));
  s.off_ratio = amax > 0.0 ? off / amax : 0.0;
  return s;
}

inline json support_json(const std::vector<Eigen::Index>& s) {
  json a = json::array();
  for (auto i : s) a.push_back(i);
  return a;
}

inline Eigen::VectorXd column_norms(const Eigen::MatrixXd& m) { return m.colwise().norm().transpose(); }

inline std::vector<double> log_space(double lo, double hi, int count) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i)
    out.push_back(std::pow(10.0, std::log10(lo) + (std::log10(hi) - std::log10(lo)) * i / (count - 1)));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Noise-free single-source recovery with the exact projector, plus an α
/// sweep of the solver peak against the closed-form γ.
inline Report run_example1(const ExperimentSpec& spec) {
  spec.validate();
  sparsrec::detail::require(!spec.source_sets.empty() && !spec.alphas.empty(), "example1: sources and alpha required");
  Report rep = make_report(spec);
  const InverseSetup inv = build_inverse_setup(2, spec.inverse_nodes, spec.source_cells, spec.epsilon);
  const DataModel data = build_data_model(spec);
  const auto P = operators::projector_and_weights(inv.svd);
  const Eigen::MatrixXd pm = P.matrix();
  const solver::SplitBregman sb(pm, spec.solver);
  const Eigen::MatrixXd pinv = operators::pseudo_inverse(inv.svd);
  const Eigen::Index n = inv.basis.size();
  rep.data["rank"] = inv.svd.numerical_rank();
  rep.data["m"] = inv.A.rows();
  rep.data["cases"] = json::array();

  for (std::size_t c = 0; c < spec.source_sets.size(); ++c) {
    const auto& set = spec.source_sets[c];
    sparsrec::detail::require(set.size() == 1, "example1: each case has a single source");
    const auto [j, amp] = set.front();
    sparsrec::detail::require(amp > 0.0, "example1: amplitude must be positive");
    const double alpha = spec.alphas[std::min(c, spec.alphas.size() - 1)];
    const std::string label = inv.basis.touches_boundary(j) ? "boundary" : "interior";
    const std::string stem = label + "_cell" + std::to_string(j);

    // Data are divided by the amplitude; the target is then P e_j.
    const Eigen::VectorXd b = data.observe_coarse(inv, detail::sources_vector(n, set)) / amp;
    const Eigen::VectorXd c_exact = P.column(j);
    const double pinv_gap = (pinv * b - c_exact).norm();

    const auto pred = theory::predict_noise_free(P, j, alpha);
    const auto mp = theory::max_property_argmax(P, j);
    const auto r = sb.solve({pm, c_exact, P.w, alpha});
    rep.converged(r.converged);
    const auto s = detail::summarize(r.x);
    io::write_heatmap(rep.dir / stem, inv.basis, r.x * amp, "x");

    const bool singleton = s.support.size() == 1 && s.support.front() == j;
    const double err = std::abs(s.peak - pred.gamma);
    rep.check(stem + ": support is {j}", singleton,
              "support size " + std::to_string(s.support.size()) + ", off/peak " + detail::fmt(s.off_ratio));
    rep.check(stem + ": peak matches gamma", err <= 1e-6, "|peak - gamma| = " + detail::fmt(err));
    rep.check(stem + ": max property", mp.argmax == j && !mp.ambiguous);
    rep.note(stem + ": ||A^+ b - P e_j|| = " + detail::fmt(pinv_gap) + " (data used: P e_j)");
    rep.data["cases"].push_back({{"j", j},
                                 {"label", label},
                                 {"alpha", alpha},
                                 {"gamma", pred.gamma},
                                 {"alpha_upper", pred.alpha_upper},
                                 {"peak", s.peak},
                                 {"peak_index", s.peak_index},
                                 {"off_ratio", s.off_ratio},
                                 {"support", detail::support_json(s.support)},
                                 {"iterations", r.iterations},
                                 {"converged", r.converged},
                                 {"pinv_gap", pinv_gap}});

    // Sweep from large to small α so every solve is warm-started.
    std::vector<double> sweep = detail::log_space(pred.alpha_upper * 1e-4, pred.alpha_upper * 0.9, spec.sweep_points);
    sweep.push_back(pred.alpha_upper * 1.5);
    std::sort(sweep.rbegin(), sweep.rend());
    io::CsvWriter csv(rep.dir / ("gamma_curve_" + stem + ".csv"),
                      {"alpha", "gamma", "solver_max", "abs_error", "feasible", "converged", "iterations"});
    std::vector<theory::RecoveryPrediction> preds;
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(n);
    double worst = 0.0;
    bool infeasible_zero = true;
    for (double a : sweep) {
      const auto pa = theory::predict_noise_free(P, j, a);
      const auto ra = sb.solve({pm, c_exact, P.w, a}, warm);
      warm = ra.x;
      rep.converged(ra.converged);
      const double mx = ra.x.maxCoeff();
      const double e = std::abs(mx - pa.gamma);
      if (pa.feasible) worst = std::max(worst, e);
      else infeasible_zero = infeasible_zero && ra.x.cwiseAbs().maxCoeff() <= 1e-10;
      csv.row(a, pa.gamma, mx, e, pa.feasible, ra.converged, ra.iterations);
      preds.push_back(pa);
    }
    theory::write_predictions_csv((rep.dir / ("predictions_" + stem + ".csv")).string(), preds);
    rep.check(stem + ": gamma curve within 1e-6", worst <= 1e-6, "worst error " + detail::fmt(worst));
    rep.check(stem + ": zero solution beyond alpha_upper", infeasible_zero);
  }
  return rep;
}

/// Noisy single-source recovery with the truncated SVD, ᾱ from the closed
/// form, rescaling, and the Morozov-selected truncation sweep.
inline Report run_example2(const ExperimentSpec& spec) {
  spec.validate();
  sparsrec::detail::require(!spec.source_sets.empty() && spec.source_sets.front().size() == 1,
                            "example2: a single true source is required");
  Report rep = make_report(spec);
  const InverseSetup inv = build_inverse_setup(2, spec.inverse_nodes, spec.source_cells, spec.epsilon);
  const DataModel data = build_data_model(spec);
  const Eigen::Index n = inv.basis.size();
  const auto [j, amp] = spec.source_sets.front().front();
  sparsrec::detail::require(amp > 0.0, "example2: amplitude must be positive");
  const Eigen::VectorXd b_dagger = data.observe_coarse(inv, detail::sources_vector(n, spec.source_sets.front()));
  const Eigen::VectorXd aej = inv.A.matrix.col(j);

  const int k = std::min(spec.k, inv.svd.numerical_rank());
  if (k != spec.k) rep.note("k clamped to the numerical rank " + std::to_string(k));
  const auto pk = operators::projector_and_weights(inv.svd, k);
  const Eigen::MatrixXd pkm = pk.matrix();
  const solver::SplitBregman sb(pkm, spec.solver);
  io::write_heatmap(rep.dir / "true_source", inv.basis, detail::sources_vector(n, spec.source_sets.front()), "x");

  rep.data["j"] = j;
  rep.data["k"] = k;
  rep.data["levels"] = json::array();
  io::CsvWriter summary(rep.dir / "summary.csv",
                        {"level", "seed", "delta", "achieved_level", "alpha_bar", "alpha_upper", "factor", "alpha",
                         "feasible", "solved", "support_size", "peak_index", "peak", "gamma", "rescaled_peak",
                         "converged"});
  const std::vector<double> levels = spec.noise_levels.empty() ? std::vector<double>{0.0} : spec.noise_levels;
  std::vector<theory::RecoveryPrediction> preds;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double p = levels[l];
    const auto noise = make_noise(b_dagger, p, spec.seed + l);
    const Eigen::VectorXd b = (b_dagger + noise.eta) / amp;
    // Everything in b that is not A e_j counts as noise, discretization error included.
    const Eigen::VectorXd eta_eff = b - aej;
    const Eigen::VectorXd nimg = operators::pseudo_apply(inv.svd, k, eta_eff);
    const Eigen::VectorXd c = operators::pseudo_apply(inv.svd, k, b);
    const auto bounds = theory::predict_with_noise(pk, nimg, j, 1.0);
    const double alpha_bar = bounds.alpha_lower;
    json lv{{"level", p},
            {"seed", noise.seed},
            {"delta", noise.delta},
            {"achieved_level", noise.achieved_level},
            {"alpha_bar", alpha_bar},
            {"alpha_upper", bounds.alpha_upper},
            {"runs", json::array()}};
    rep.note("noise " + detail::fmt(p) + ": alpha_bar = " + detail::fmt(alpha_bar) + ", alpha_upper = " +
             detail::fmt(bounds.alpha_upper));
    if (p > 0.0)
      rep.check("noise " + detail::fmt(p) + ": admissible alpha interval is non-empty",
                alpha_bar < bounds.alpha_upper,
                "alpha_bar = " + detail::fmt(alpha_bar) + ", alpha_upper = " + detail::fmt(bounds.alpha_upper));

    const std::vector<double> alphas = spec.alphas.empty() ? std::vector<double>{} : spec.alphas;
    std::vector<std::pair<double, double>> runs;  // (factor, alpha)
    if (alphas.empty())
      for (double f : spec.alpha_factors) runs.emplace_back(f, f * alpha_bar);
    else
      for (double a : alphas) runs.emplace_back(alpha_bar > 0.0 ? a / alpha_bar : 0.0, a);

    for (auto [factor, alpha] : runs) {
      if (!(alpha > 0.0)) {
        rep.note("noise " + detail::fmt(p) + ": alpha is zero, run skipped");
        continue;
      }
      const auto pred = theory::predict_with_noise(pk, nimg, j, alpha);
      preds.push_back(pred);
      const bool over = factor > 1.0;
      const std::string stem = "noise" + detail::tag(p) + "_alpha" + detail::tag(alpha);
      if (over && !(alpha < bounds.alpha_upper)) {
        rep.note(stem + ": alpha = " + detail::fmt(alpha) + " is not below alpha_upper = " +
                 detail::fmt(bounds.alpha_upper) + "; run skipped");
        summary.row(p, noise.seed, noise.delta, noise.achieved_level, alpha_bar, bounds.alpha_upper, factor, alpha,
                    false, false, 0, -1, 0.0, pred.gamma, 0.0, false);
        lv["runs"].push_back({{"factor", factor}, {"alpha", alpha}, {"feasible", false}, {"solved", false}});
        continue;
      }
      const auto r = sb.solve({pkm, c, pk.w, alpha});
      rep.converged(r.converged);
      const auto s = detail::summarize(r.x);
      io::write_heatmap(rep.dir / stem, inv.basis, r.x * amp, "x");
      double rescaled = 0.0;
      if (s.peak != 0.0 && alpha < pk.scaled_column(s.peak_index)[s.peak_index]) {
        const Eigen::VectorXd xs = theory::rescale_solution(r.x, alpha, pk);
        rescaled = xs[s.peak_index] * amp;
        io::write_heatmap(rep.dir / (stem + "_rescaled"), inv.basis, xs * amp, "x");
      }
      summary.row(p, noise.seed, noise.delta, noise.achieved_level, alpha_bar, bounds.alpha_upper, factor, alpha,
                  pred.feasible, true, s.support.size(), s.peak_index, s.peak * amp, pred.gamma * amp, rescaled,
                  r.converged);
      lv["runs"].push_back({{"factor", factor},
                            {"alpha", alpha},
                            {"feasible", pred.feasible},
                            {"solved", true},
                            {"support", detail::support_json(s.support)},
                            {"peak_index", s.peak_index},
                            {"peak", s.peak * amp},
                            {"gamma", pred.gamma * amp},
                            {"rescaled_peak", rescaled},
                            {"converged", r.converged}});
      if (pred.feasible) {
        const bool singleton = s.support.size() == 1 && s.support.front() == j;
        rep.check(stem + ": support is {j}", singleton, "support size " + std::to_string(s.support.size()));
        rep.check(stem + ": peak matches gamma", std::abs(s.peak - pred.gamma) <= 1e-6,
                  "|peak - gamma| = " + detail::fmt(std::abs(s.peak - pred.gamma)));
        rep.check(stem + ": rescaled peak in [0.8, 1.2]", rescaled >= 0.8 && rescaled <= 1.2,
                  "rescaled " + detail::fmt(rescaled));
      }
    }
    rep.data["levels"].push_back(lv);

    // Truncation level from the discrepancy principle and the (k, α) panel grid.
    if (std::abs(p - spec.morozov_level) < 1e-12 && !spec.k_sweep.empty()) {
      const int kd = operators::morozov_truncation(inv.svd, b_dagger + noise.eta, noise.eta.norm(), 1.05);
      rep.data["morozov_k"] = kd;
      rep.note("Morozov truncation at noise " + detail::fmt(p) + ": k = " + std::to_string(kd));
      io::CsvWriter sweep(rep.dir / "k_alpha_sweep.csv",
                          {"k", "alpha", "support_size", "peak_index", "peak", "value_at_j", "converged"});
      for (int ks : spec.k_sweep) {
        if (ks > inv.svd.numerical_rank()) {
          rep.note("k = " + std::to_string(ks) + " exceeds the numerical rank; skipped");
          continue;
        }
        const auto pks = operators::projector_and_weights(inv.svd, ks);
        const Eigen::MatrixXd pksm = pks.matrix();
        const solver::SplitBregman sbk(pksm, spec.solver);
        const Eigen::VectorXd ck = operators::pseudo_apply(inv.svd, ks, b);
        std::vector<double> as = spec.alpha_sweep;
        std::sort(as.rbegin(), as.rend());
        Eigen::VectorXd warm = Eigen::VectorXd::Zero(n);
        for (double a : as) {
          const auto r = sbk.solve({pksm, ck, pks.w, a}, warm);
          warm = r.x;
          rep.converged(r.converged);
          const auto s = detail::summarize(r.x);
          io::write_heatmap(rep.dir / ("sweep_k" + std::to_string(ks) + "_alpha" + detail::tag(a)), inv.basis,
                            r.x * amp, "x");
          sweep.row(ks, a, s.support.size(), s.peak_index, s.peak * amp, r.x[j] * amp, r.converged);
        }
      }
    }
  }
  theory::write_predictions_csv((rep.dir / "predictions.csv").string(), preds);
  return rep;
}

/// Disc-shaped source outside the coarse source space: l2 baseline versus
/// truncated-SVD and Tikhonov-smoothed weighted l1 over an α grid.
inline Report run_example3(const ExperimentSpec& spec) {
  spec.validate();
  const fem::DiscSource disc = spec.disc.value_or(fem::DiscSource{});
  Report rep = make_report(spec);
  const InverseSetup inv = build_inverse_setup(2, spec.inverse_nodes, spec.source_cells, spec.epsilon);
  const DataModel data = build_data_model(spec);
  const Eigen::Index n = inv.basis.size();
  const Eigen::MatrixXd& a = inv.A.matrix;
  const Eigen::VectorXd b = data.observe_disc(inv, disc);

  // L2 projection of the disc onto the coarse space, for display.
  const Eigen::VectorXd fine = fem::cell_values_from_disc(inv.system.grid, disc);
  const Eigen::VectorXd proj = Eigen::SparseMatrix<double>(inv.basis.E.transpose()) *
                               inv.basis.fine_cell_measure.cwiseProduct(fine);
  io::write_heatmap(rep.dir / "true_source", inv.basis, proj, "x");

  auto locate = [&](const Eigen::VectorXd& x) {
    Eigen::Index i = 0;
    x.cwiseAbs().maxCoeff(&i);
    const fem::Point c = inv.basis.coarse_center(static_cast<int>(i));
    return std::make_pair(i, std::hypot(c[0] - disc.center[0], c[1] - disc.center[1]));
  };

  io::CsvWriter table(rep.dir / "support_vs_alpha.csv",
                      {"method", "alpha", "support_size", "peak_index", "peak", "peak_x", "peak_y",
                       "peak_distance", "converged"});
  if (spec.zeta) {
    // min 1/2||Ax - b||^2 + ζ||x||^2.
    const Eigen::MatrixXd lhs = a.transpose() * a + 2.0 * *spec.zeta * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd x = lhs.ldlt().solve(a.transpose() * b);
    io::write_heatmap(rep.dir / ("l2_baseline_zeta" + detail::tag(*spec.zeta)), inv.basis, x, "x");
    const auto [pi, dist] = locate(x);
    const auto cc = inv.basis.coarse_coords(static_cast<int>(pi));
    table.row(std::string("l2_baseline"), *spec.zeta, solver::support(x).size(), pi, x[pi], cc[0], cc[1], dist, true);
    rep.check("l2 baseline peaks in a boundary cell", inv.basis.touches_boundary(static_cast<int>(pi)),
              "peak cell (" + std::to_string(cc[0]) + "," + std::to_string(cc[1]) + ")");
  }

  std::vector<double> alphas = spec.alphas;
  std::sort(alphas.rbegin(), alphas.rend());
  const int k = std::min(spec.k, inv.svd.numerical_rank());
  const auto pk = operators::projector_and_weights(inv.svd, k);
  const auto smoother = operators::tikhonov_smoother(inv.svd, spec.beta);
  const Eigen::MatrixXd sa = smoother.matrix() * a;

  struct Method {
    std::string name;
    Eigen::MatrixXd B;
    Eigen::VectorXd c;
    Eigen::VectorXd w;
  };
  const std::vector<Method> methods{
      {"tsvd_k" + std::to_string(k), pk.matrix(), operators::pseudo_apply(inv.svd, k, b), pk.w},
      {"tikhonov_beta" + detail::tag(spec.beta), sa, smoother.apply(b), detail::column_norms(sa)},
  };
  rep.data["methods"] = json::array();
  for (const auto& m : methods) {
    const solver::SplitBregman sb(m.B, spec.solver);
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(n);
    std::vector<std::size_t> sizes;
    json mj{{"name", m.name}, {"runs", json::array()}};
    for (double al : alphas) {
      const auto r = sb.solve({m.B, m.c, m.w, al}, warm);
      warm = r.x;
      rep.converged(r.converged);
      const auto s = detail::summarize(r.x);
      const auto [pi, dist] = locate(r.x);
      const auto cc = inv.basis.coarse_coords(static_cast<int>(pi));
      io::write_heatmap(rep.dir / (m.name + "_alpha" + detail::tag(al)), inv.basis, r.x, "x");
      table.row(m.name, al, s.support.size(), pi, r.x[pi], cc[0], cc[1], dist, r.converged);
      sizes.push_back(s.support.size());
      mj["runs"].push_back({{"alpha", al},
                            {"support_size", s.support.size()},
                            {"peak_index", pi},
                            {"peak_distance", dist},
                            {"converged", r.converged}});
      if (al == alphas.front())
        rep.check(m.name + ": peak inside the disc at the largest alpha", dist <= disc.radius,
                  "distance " + detail::fmt(dist));
    }
    // alphas run in decreasing order, so sizes must not shrink along the list.
    rep.check(m.name + ": support size non-increasing in alpha", std::is_sorted(sizes.begin(), sizes.end()));
    rep.data["methods"].push_back(mj);
  }
  return rep;
}

/// Several point sources with the Tikhonov-smoothed problem.
inline Report run_example4(const ExperimentSpec& spec) {
  spec.validate();
  sparsrec::detail::require(!spec.alphas.empty(), "example4: alpha required");
  Report rep = make_report(spec);
  const InverseSetup inv = build_inverse_setup(2, spec.inverse_nodes, spec.source_cells, spec.epsilon);
  const DataModel data = build_data_model(spec);
  const Eigen::Index n = inv.basis.size();
  const auto smoother = operators::tikhonov_smoother(inv.svd, spec.beta);
  const Eigen::MatrixXd sa = smoother.matrix() * inv.A.matrix;
  const Eigen::VectorXd w = detail::column_norms(sa);
  const solver::SplitBregman sb(sa, spec.solver);
  const double alpha = spec.alphas.front();
  rep.data["sets"] = json::array();

  for (const auto& set : spec.source_sets) {
    const std::string tagN = "N" + std::to_string(set.size());
    const Eigen::VectorXd xt = detail::sources_vector(n, set);
    const Eigen::VectorXd b = data.observe_coarse(inv, xt);
    const auto r = sb.solve({sa, smoother.apply(b), w, alpha});
    rep.converged(r.converged);
    io::write_heatmap(rep.dir / ("true_" + tagN), inv.basis, xt, "x");
    io::write_heatmap(rep.dir / ("recovered_" + tagN), inv.basis, r.x, "x");
    const auto supp = solver::support(r.x, 1e-3);
    io::CsvWriter hits(rep.dir / ("hits_" + tagN + ".csv"),
                       {"source", "cell", "cell_x", "cell_y", "amplitude", "value_at_cell", "nearest_recovered",
                        "nearest_value", "distance_cells"});
    json sj{{"N", set.size()}, {"values", json::array()}, {"support", detail::support_json(supp)}};
    bool all_hit = true;
    for (std::size_t q = 0; q < set.size(); ++q) {
      const auto [cell, amp] = set[q];
      const auto cc = inv.basis.coarse_coords(cell);
      Eigen::Index nearest = -1;
      double nd = 1e300;
      for (auto i : supp) {
        const auto ic = inv.basis.coarse_coords(static_cast<int>(i));
        const double d = std::hypot(ic[0] - cc[0], ic[1] - cc[1]);
        if (d < nd) { nd = d; nearest = i; }
      }
      hits.row(q, cell, cc[0], cc[1], amp, r.x[cell], nearest, nearest >= 0 ? r.x[nearest] : 0.0,
               nearest >= 0 ? nd : -1.0);
      sj["values"].push_back(r.x[cell]);
      all_hit = all_hit && r.x[cell] >= 0.5 * amp;
    }
    if (set.size() == 2) rep.check(tagN + ": both sources recovered with amplitude >= 0.5", all_hit);
    else rep.note(tagN + ": " + std::string(all_hit ? "all" : "not all") + " sources recovered at amplitude >= 0.5");
    rep.data["sets"].push_back(sj);
  }
  return rep;
}

/// Unweighted problem (w = 1) with the plain transfer matrix.
inline Report run_figure1(const ExperimentSpec& spec) {
  spec.validate();
  sparsrec::detail::require(!spec.source_sets.empty() && !spec.alphas.empty(), "figure1: source and alpha required");
  Report rep = make_report(spec);
  const InverseSetup inv = build_inverse_setup(2, spec.inverse_nodes, spec.source_cells, spec.epsilon);
  const DataModel data = build_data_model(spec);
  const Eigen::Index n = inv.basis.size();
  const auto& set = spec.source_sets.front();
  const int j = set.front().first;
  const Eigen::VectorXd b = data.observe_coarse(inv, detail::sources_vector(n, set));
  const auto r = solver::solve({inv.A.matrix, b, Eigen::VectorXd::Ones(n), spec.alphas.front()}, spec.solver);
  rep.converged(r.converged);
  io::write_heatmap(rep.dir / "true_source", inv.basis, detail::sources_vector(n, set), "x");
  io::write_heatmap(rep.dir / "unweighted", inv.basis, r.x, "x");
  const auto s = detail::summarize(r.x);
  int farthest = 0;
  for (auto i : s.support) farthest = std::max(farthest, inv.basis.cells_from_boundary(static_cast<int>(i)));
  const double ratio = std::abs(s.peak) > 0.0 ? std::abs(r.x[j]) / std::abs(s.peak) : 0.0;
  rep.check("support stays within one cell of the boundary", !s.support.empty() && farthest <= 1,
            "farthest support cell is " + std::to_string(farthest) + " cells in");
  rep.check("true cell coefficient <= 1e-3 peak", ratio <= 1e-3, "ratio " + detail::fmt(ratio));
  rep.data = {{"j", j}, {"support", detail::support_json(s.support)}, {"farthest", farthest}, {"ratio", ratio}};
  return rep;
}

/// 1D two-source counterexample: a mirror-symmetric pair is explained by a
/// single source at the center.
inline Report run_figure2(const ExperimentSpec& spec) {
  spec.validate();
  sparsrec::detail::require(!spec.source_sets.empty() && !spec.alphas.empty(), "figure2: sources and alpha required");
  Report rep = make_report(spec);
  const int cells = spec.cells_1d;
  const InverseSetup inv = build_inverse_setup(1, cells * spec.refinement_1d + 1, cells, spec.epsilon);
  const auto P = operators::projector_and_weights(inv.svd);
  const Eigen::MatrixXd pm = P.matrix();
  const solver::SplitBregman sb(pm, spec.solver);
  const double alpha = spec.alphas.front();
  rep.data["rank"] = inv.svd.numerical_rank();
  rep.data["pairs"] = json::array();

  for (std::size_t s = 0; s < spec.source_sets.size(); ++s) {
    const auto& set = spec.source_sets[s];
    sparsrec::detail::require(set.size() == 2, "figure2: each case is a pair of sources");
    const int m = set[0].first, q = set[1].first;
    const bool symmetric = m + q == cells - 1 && cells % 2 == 1;
    const std::string stem = std::string(symmetric ? "symmetric" : "asymmetric") + "_" + std::to_string(m) + "_" +
                             std::to_string(q);
    const Eigen::VectorXd xt = detail::sources_vector(cells, set);
    const Eigen::VectorXd target = P.apply(xt);
    const auto r = sb.solve({pm, target, P.w, alpha});
    rep.converged(r.converged);
    const auto bp = solver::solve_basis_pursuit(P, target, {}, spec.solver);
    rep.converged(bp.converged);
    const auto col = theory::two_source_collision(inv.A, m, q, 1e-8);
    io::write_heatmap(rep.dir / ("true_" + stem), inv.basis, xt, "x");
    io::write_heatmap(rep.dir / ("recovered_" + stem), inv.basis, r.x, "x");
    io::write_heatmap(rep.dir / ("basis_pursuit_" + stem), inv.basis, bp.x, "x");
    const auto sr = detail::summarize(r.x);
    const auto sbp = detail::summarize(bp.x);
    json pj{{"m", m},
            {"n", q},
            {"symmetric", symmetric},
            {"support", detail::support_json(sr.support)},
            {"bp_support", detail::support_json(sbp.support)},
            {"bp_residual", bp.constraint_residual}};
    if (col) pj["collision"] = {{"j", col->j}, {"c", col->c}, {"cosine", col->cosine}};
    rep.data["pairs"].push_back(pj);
    if (symmetric) {
      const int center = cells / 2;
      rep.check(stem + ": collision at the center", col && col->j == center && col->c > 0.0,
                col ? "j = " + std::to_string(col->j) + ", c = " + detail::fmt(col->c) + ", 1 - cos = " +
                          detail::fmt(1.0 - col->cosine)
                    : std::string("none"));
      rep.check(stem + ": recovered support is the center cell",
                sr.support.size() == 1 && sr.support.front() == center);
      rep.check(stem + ": basis pursuit returns c e_center",
                col && sbp.support.size() == 1 && sbp.support.front() == center &&
                    std::abs(bp.x[center] - col->c) <= 1e-6,
                col ? "|x - c| = " + detail::fmt(std::abs(bp.x[center] - col->c)) : std::string("no collision"));
    } else {
      rep.note(stem + ": recovered support size " + std::to_string(sr.support.size()) + ", peak cell " +
               std::to_string(sr.peak_index) + (col ? ", collision detected" : ", no collision"));
    }
  }
  return rep;
}

/// Weight fields w_i = ||P_k e_i|| over the source grid.
inline Report run_weights(const ExperimentSpec& spec) {
  spec.validate();
  Report rep = make_report(spec);
  const InverseSetup inv = build_inverse_setup(2, spec.inverse_nodes, spec.source_cells, spec.epsilon);
  const int rank = inv.svd.numerical_rank();
  rep.data["m"] = inv.A.rows();
  rep.data["rank"] = rank;
  rep.note("m = " + std::to_string(inv.A.rows()) + " boundary observations, numerical rank " + std::to_string(rank));
  const auto full = operators::projector_and_weights(inv.svd);
  std::vector<int> levels = spec.weight_levels;
  levels.push_back(rank);
  for (int k : levels) {
    int kk = k;
    if (kk > rank) {
      rep.note("k = " + std::to_string(k) + " exceeds the numerical rank; clamped to " + std::to_string(rank));
      kk = rank;
    }
    const auto pk = operators::projector_and_weights(inv.svd, kk);
    io::write_heatmap(rep.dir / ("weights_k" + std::to_string(k)), inv.basis, pk.w, "w_i");
    double bsum = 0.0, isum = 0.0;
    int bn = 0, in = 0;
    for (int i = 0; i < inv.basis.size(); ++i) {
      if (inv.basis.touches_boundary(i)) { bsum += pk.w[i]; ++bn; }
      else { isum += pk.w[i]; ++in; }
    }
    rep.check("k = " + std::to_string(k) + ": boundary mean weight exceeds interior mean", bsum / bn > isum / in,
              detail::fmt(bsum / bn) + " vs " + detail::fmt(isum / in));
    if (kk == rank)
      rep.check("k = " + std::to_string(k) + ": weights match the untruncated W",
                (pk.w - full.w).cwiseAbs().maxCoeff() <= 1e-10);
  }
  const auto np = operators::check_nonparallel(inv.A);
  io::CsvWriter csv(rep.dir / "nonparallel.csv", {"worst_i", "worst_j", "worst_cosine", "ok"});
  csv.row(np.worst_pair.first, np.worst_pair.second, np.worst_cosine, np.ok);
  rep.check("columns of A are pairwise non-parallel", np.ok, "1 - worst cosine = " + detail::fmt(1.0 - np.worst_cosine));
  return rep;
}

inline Report run(const ExperimentSpec& spec) {
  Report rep;
  if (spec.name == "example1") rep = run_example1(spec);
  else if (spec.name == "example2") rep = run_example2(spec);
  else if (spec.name == "example3") rep = run_example3(spec);
  else if (spec.name == "example4") rep = run_example4(spec);
  else if (spec.name == "figure1") rep = run_figure1(spec);
  else if (spec.name == "figure2") rep = run_figure2(spec);
  else if (spec.name == "weights") rep = run_weights(spec);
  else throw std::invalid_argument("unknown experiment '" + spec.name + "'");
  rep.write();
  return rep;
}

}  // namespace sparsrec::harness
