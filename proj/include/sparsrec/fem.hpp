#pragma once

// P1 finite elements for  -Δu + εu = f  in Ω = (0,1)^d,  ∂u/∂n = 0  on ∂Ω,
// observed through the boundary trace.  Sources live in a piecewise-constant
// space on a coarse grid nested in the fine state grid.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sparsrec/errors.hpp"

namespace sparsrec::fem {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Point = std::array<double, 2>;

/// Uniform mesh of [0,1] (intervals) or [0,1]^2 (right triangles, diagonal
/// from lower-left to upper-right).  Nodes are numbered x-fastest.
struct Grid {
  int dim = 0;
  int nodes_per_side = 0;
  std::vector<Point> node_coords;
  // Vertex indices per cell; 1D cells use the first two entries only.
  std::vector<std::array<int, 3>> cells;
  std::vector<int> boundary_nodes;

  int cells_per_side() const { return nodes_per_side - 1; }
  double spacing() const { return 1.0 / cells_per_side(); }
  int num_nodes() const { return static_cast<int>(node_coords.size()); }
  int num_cells() const { return static_cast<int>(cells.size()); }
  int vertices_per_cell() const { return dim + 1; }
  int node_index(int ix, int iy = 0) const { return iy * nodes_per_side + ix; }

  /// Signed measure of a cell (length in 1D, area in 2D).
  double cell_measure(int c) const {
    const auto& v = cells[c];
    const Point& a = node_coords[v[0]];
    const Point& b = node_coords[v[1]];
    if (dim == 1) return b[0] - a[0];
    const Point& p = node_coords[v[2]];
    return 0.5 * ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]));
  }

  Point cell_centroid(int c) const {
    Point s{0.0, 0.0};
    for (int k = 0; k < vertices_per_cell(); ++k) {
      s[0] += node_coords[cells[c][k]][0];
      s[1] += node_coords[cells[c][k]][1];
    }
    s[0] /= vertices_per_cell();
    s[1] /= vertices_per_cell();
    return s;
  }

  /// Index of the structured square (or interval) containing a fine cell.
  std::array<int, 2> cell_square(int c) const {
    if (dim == 1) return {c, 0};
    const int sq = c / 2;
    return {sq % cells_per_side(), sq / cells_per_side()};
  }
};

inline Grid build_grid(int dim, int nodes_per_side) {
  sparsrec::detail::require(dim == 1 || dim == 2, "build_grid: dim must be 1 or 2");
  sparsrec::detail::require(nodes_per_side >= 2, "build_grid: nodes_per_side must be >= 2");

  Grid g;
  g.dim = dim;
  g.nodes_per_side = nodes_per_side;
  const int k = nodes_per_side;
  const double h = 1.0 / (k - 1);
  auto coord = [&](int i) { return i == k - 1 ? 1.0 : i * h; };

  if (dim == 1) {
    g.node_coords.reserve(k);
    for (int i = 0; i < k; ++i) g.node_coords.push_back({coord(i), 0.0});
    for (int i = 0; i + 1 < k; ++i) g.cells.push_back({i, i + 1, -1});
    g.boundary_nodes = {0, k - 1};
    return g;
  }

  g.node_coords.reserve(static_cast<size_t>(k) * k);
  for (int iy = 0; iy < k; ++iy)
    for (int ix = 0; ix < k; ++ix) {
      g.node_coords.push_back({coord(ix), coord(iy)});
      if (ix == 0 || iy == 0 || ix == k - 1 || iy == k - 1)
        g.boundary_nodes.push_back(g.node_index(ix, iy));
    }
  g.cells.reserve(2 * static_cast<size_t>(k - 1) * (k - 1));
  for (int iy = 0; iy + 1 < k; ++iy)
    for (int ix = 0; ix + 1 < k; ++ix) {
      const int ll = g.node_index(ix, iy), lr = g.node_index(ix + 1, iy);
      const int ul = g.node_index(ix, iy + 1), ur = g.node_index(ix + 1, iy + 1);
      g.cells.push_back({ll, lr, ur});
      g.cells.push_back({ll, ur, ul});
    }
  return g;
}

/// Assembled operators of the state equation on one grid.
///
/// `load` is the mixed mass matrix between P1 test functions and cellwise
/// constants: load(k, c) = ∫_c ψ_k.  For a source that is constant on each
/// fine cell with values f, the right-hand side of the state equation is
/// load * f.
struct FemSystem {
  Grid grid;
  double epsilon = 1.0;
  SparseMatrix stiffness;
  SparseMatrix mass;
  SparseMatrix boundary_mass;
  SparseMatrix load;
  /// Symmetric PSD square root of boundary_mass restricted to boundary nodes
  /// (rows/columns ordered as grid.boundary_nodes).
  Eigen::MatrixXd sqrt_boundary_mass;
  /// Sparse Cholesky of stiffness + epsilon * mass.
  std::shared_ptr<const Eigen::SimplicialLLT<SparseMatrix>> state_solver;

  int num_boundary() const { return static_cast<int>(grid.boundary_nodes.size()); }

  /// Solve (L + εM) u = rhs.
  Eigen::MatrixXd solve_state(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd u = state_solver->solve(rhs);
    if (state_solver->info() != Eigen::Success) throw AssemblyError("state solve failed");
    return u;
  }

  Eigen::VectorXd restrict_to_boundary(const Eigen::VectorXd& u) const {
    Eigen::VectorXd r(num_boundary());
    for (int i = 0; i < num_boundary(); ++i) r[i] = u[grid.boundary_nodes[i]];
    return r;
  }
};

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericError("psd_sqrt: eigendecomposition failed");
  Eigen::VectorXd s = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd r = eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (r + r.transpose());
}

}  // namespace detail

inline FemSystem assemble_fem(const Grid& grid, double epsilon) {
  using T = Eigen::Triplet<double>;
  sparsrec::detail::require(epsilon > 0.0, "assemble_fem: epsilon must be positive");

  const int nn = grid.num_nodes();
  const int nc = grid.num_cells();
  std::vector<T> lt, mt, bt, ft;

  for (int c = 0; c < nc; ++c) {
    const auto& v = grid.cells[c];
    const double meas = grid.cell_measure(c);
    if (!(meas > 0.0)) throw AssemblyError("assemble_fem: degenerate cell " + std::to_string(c));

    if (grid.dim == 1) {
      const double h = meas;
      const int idx[2] = {v[0], v[1]};
      for (int a = 0; a < 2; ++a) {
        ft.emplace_back(idx[a], c, h / 2.0);
        for (int b = 0; b < 2; ++b) {
          lt.emplace_back(idx[a], idx[b], (a == b ? 1.0 : -1.0) / h);
          mt.emplace_back(idx[a], idx[b], (a == b ? 2.0 : 1.0) * h / 6.0);
        }
      }
      continue;
    }

    const Point& p0 = grid.node_coords[v[0]];
    const Point& p1 = grid.node_coords[v[1]];
    const Point& p2 = grid.node_coords[v[2]];
    // Gradients of barycentric coordinates: ∇λ_a = (y_b - y_c, x_c - x_b) / 2|T|.
    const double gx[3] = {p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]};
    const double gy[3] = {p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]};
    for (int a = 0; a < 3; ++a) {
      ft.emplace_back(v[a], c, meas / 3.0);
      for (int b = 0; b < 3; ++b) {
        lt.emplace_back(v[a], v[b], (gx[a] * gx[b] + gy[a] * gy[b]) / (4.0 * meas));
        mt.emplace_back(v[a], v[b], (a == b ? 2.0 : 1.0) * meas / 12.0);
      }
    }
  }

  const int nb = static_cast<int>(grid.boundary_nodes.size());
  std::vector<int> local(nn, -1);
  for (int i = 0; i < nb; ++i) local[grid.boundary_nodes[i]] = i;
  Eigen::MatrixXd mb_local = Eigen::MatrixXd::Zero(nb, nb);

  if (grid.dim == 1) {
    // Point evaluation at both end points.
    for (int node : grid.boundary_nodes) {
      bt.emplace_back(node, node, 1.0);
      mb_local(local[node], local[node]) = 1.0;
    }
  } else {
    const int k = grid.nodes_per_side;
    auto add_edge = [&](int a, int b) {
      const Point& pa = grid.node_coords[a];
      const Point& pb = grid.node_coords[b];
      const double len = std::hypot(pb[0] - pa[0], pb[1] - pa[1]);
      const int idx[2] = {a, b};
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const double val = (i == j ? 2.0 : 1.0) * len / 6.0;
          bt.emplace_back(idx[i], idx[j], val);
          mb_local(local[idx[i]], local[idx[j]]) += val;
        }
    };
    for (int i = 0; i + 1 < k; ++i) {
      add_edge(grid.node_index(i, 0), grid.node_index(i + 1, 0));
      add_edge(grid.node_index(i, k - 1), grid.node_index(i + 1, k - 1));
      add_edge(grid.node_index(0, i), grid.node_index(0, i + 1));
      add_edge(grid.node_index(k - 1, i), grid.node_index(k - 1, i + 1));
    }
  }

  FemSystem sys;
  sys.grid = grid;
  sys.epsilon = epsilon;
  sys.stiffness.resize(nn, nn);
  sys.stiffness.setFromTriplets(lt.begin(), lt.end());
  sys.mass.resize(nn, nn);
  sys.mass.setFromTriplets(mt.begin(), mt.end());
  sys.boundary_mass.resize(nn, nn);
  sys.boundary_mass.setFromTriplets(bt.begin(), bt.end());
  sys.load.resize(nn, nc);
  sys.load.setFromTriplets(ft.begin(), ft.end());
  sys.sqrt_boundary_mass = detail::psd_sqrt(mb_local);

  SparseMatrix k_mat = sys.stiffness + epsilon * sys.mass;
  auto llt = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>(k_mat);
  if (llt->info() != Eigen::Success)
    throw AssemblyError("assemble_fem: factorization of L + eps*M failed");
  sys.state_solver = std::move(llt);
  return sys;
}

/// Orthonormal piecewise-constant source basis φ_i = χ_{Ω_i} / ||χ_{Ω_i}||
/// on a coarse grid of coarse_cells_per_side^dim cells nested in a fine grid.
struct SourceBasis {
  int dim = 0;
  int coarse_cells_per_side = 0;
  int refinement = 0;  // fine cells per coarse cell, per direction
  std::vector<int> fine_to_coarse;
  std::vector<std::vector<int>> cell_index_map;  // coarse -> fine cells
  Eigen::VectorXd normalization;                 // 1 / ||χ_{Ω_i}||_{L2}
  /// Maps coarse coefficients to fine-cell constant values of f.
  SparseMatrix E;
  Eigen::VectorXd fine_cell_measure;

  int size() const { return static_cast<int>(cell_index_map.size()); }

  std::array<int, 2> coarse_coords(int i) const {
    if (dim == 1) return {i, 0};
    return {i % coarse_cells_per_side, i / coarse_cells_per_side};
  }
  int coarse_index(int cx, int cy = 0) const { return cy * coarse_cells_per_side + cx; }

  Point coarse_center(int i) const {
    const double hc = 1.0 / coarse_cells_per_side;
    auto [cx, cy] = coarse_coords(i);
    return {(cx + 0.5) * hc, dim == 1 ? 0.0 : (cy + 0.5) * hc};
  }

  /// True when the coarse cell touches ∂Ω.
  bool touches_boundary(int i) const {
    auto [cx, cy] = coarse_coords(i);
    const int last = coarse_cells_per_side - 1;
    if (dim == 1) return cx == 0 || cx == last;
    return cx == 0 || cy == 0 || cx == last || cy == last;
  }

  /// Chebyshev distance (in coarse cells) to the nearest boundary-touching cell.
  int cells_from_boundary(int i) const {
    auto [cx, cy] = coarse_coords(i);
    const int last = coarse_cells_per_side - 1;
    int d = std::min(cx, last - cx);
    if (dim == 2) d = std::min({d, cy, last - cy});
    return d;
  }

  /// Coarse cell whose center is closest to p.
  int nearest_cell(const Point& p) const {
    int best = 0;
    double bd = 1e300;
    for (int i = 0; i < size(); ++i) {
      const Point c = coarse_center(i);
      const double d = (c[0] - p[0]) * (c[0] - p[0]) + (c[1] - p[1]) * (c[1] - p[1]);
      if (d < bd - 1e-15) { bd = d; best = i; }
    }
    return best;
  }

  /// Gram matrix (φ_i, φ_j)_{L2}; the identity for a correct basis.
  Eigen::MatrixXd gram() const {
    SparseMatrix g = SparseMatrix(E.transpose()) * fine_cell_measure.asDiagonal() * E;
    return Eigen::MatrixXd(g);
  }
};

inline SourceBasis build_source_basis(const Grid& fine, int coarse_cells_per_side) {
  sparsrec::detail::require(coarse_cells_per_side >= 1, "build_source_basis: coarse_cells_per_side must be positive");
  const int fine_cells = fine.cells_per_side();
  sparsrec::detail::require(fine_cells % coarse_cells_per_side == 0,
                            "build_source_basis: fine resolution " + std::to_string(fine_cells) +
                                " is not a multiple of " + std::to_string(coarse_cells_per_side));

  SourceBasis b;
  b.dim = fine.dim;
  b.coarse_cells_per_side = coarse_cells_per_side;
  b.refinement = fine_cells / coarse_cells_per_side;
  const int n = fine.dim == 1 ? coarse_cells_per_side : coarse_cells_per_side * coarse_cells_per_side;
  b.cell_index_map.assign(n, {});
  b.fine_to_coarse.resize(fine.num_cells());
  b.fine_cell_measure.resize(fine.num_cells());

  for (int c = 0; c < fine.num_cells(); ++c) {
    auto [sx, sy] = fine.cell_square(c);
    const int coarse = b.coarse_index(sx / b.refinement, sy / b.refinement);
    b.fine_to_coarse[c] = coarse;
    b.cell_index_map[coarse].push_back(c);
    b.fine_cell_measure[c] = fine.cell_measure(c);
  }

  b.normalization.resize(n);
  std::vector<Eigen::Triplet<double>> et;
  for (int i = 0; i < n; ++i) {
    double measure = 0.0;
    for (int c : b.cell_index_map[i]) measure += b.fine_cell_measure[c];
    b.normalization[i] = 1.0 / std::sqrt(measure);
    for (int c : b.cell_index_map[i]) et.emplace_back(c, i, b.normalization[i]);
  }
  b.E.resize(fine.num_cells(), n);
  b.E.setFromTriplets(et.begin(), et.end());
  return b;
}

/// Dense transfer matrix: coarse source coefficients -> weighted boundary data.
struct TransferOperator {
  Eigen::MatrixXd matrix;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }
};

/// A = S · R · (L + εM)^{-1} · load · E,  with S = M_∂^{1/2} on boundary rows.
inline TransferOperator assemble_transfer(const FemSystem& system, const SourceBasis& basis) {
  sparsrec::detail::require(basis.E.rows() == system.grid.num_cells(),
                            "assemble_transfer: basis and system are on different grids");
  const Eigen::MatrixXd rhs = Eigen::MatrixXd(system.load * basis.E);
  const Eigen::MatrixXd u = system.solve_state(rhs);
  Eigen::MatrixXd trace(system.num_boundary(), u.cols());
  for (int i = 0; i < system.num_boundary(); ++i) trace.row(i) = u.row(system.grid.boundary_nodes[i]);
  return TransferOperator{system.sqrt_boundary_mass * trace};
}

/// Value of a P1 function at a point of the closed domain.
inline double evaluate_p1(const Grid& grid, const Eigen::VectorXd& u, const Point& p) {
  const int cps = grid.cells_per_side();
  const double h = grid.spacing();
  auto locate = [&](double t, int& i, double& s) {
    i = std::clamp(static_cast<int>(std::floor(t / h)), 0, cps - 1);
    s = t / h - i;
  };
  int ix, iy = 0;
  double sx, sy = 0.0;
  locate(p[0], ix, sx);
  if (grid.dim == 1) return (1.0 - sx) * u[ix] + sx * u[ix + 1];
  locate(p[1], iy, sy);
  const double ll = u[grid.node_index(ix, iy)], lr = u[grid.node_index(ix + 1, iy)];
  const double ul = u[grid.node_index(ix, iy + 1)], ur = u[grid.node_index(ix + 1, iy + 1)];
  if (sy <= sx) return ll + sx * (lr - ll) + sy * (ur - lr);  // lower triangle (ll, lr, ur)
  return ll + sy * (ul - ll) + sx * (ur - ul);                // upper triangle (ll, ur, ul)
}

/// Fine-cell source values for a coarse coefficient vector x: f = Σ x_i φ_i.
inline Eigen::VectorXd cell_values_from_basis(const SourceBasis& basis, const Eigen::VectorXd& x) {
  sparsrec::detail::require(x.size() == basis.size(), "cell_values_from_basis: coefficient size mismatch");
  return basis.E * x;
}

/// Disc indicator, the analytic source shape of the large-source experiment.
struct DiscSource {
  Point center{0.5, 0.5};
  double radius = 0.2;
  double amplitude = 1.0;
};

/// Cell averages of a point function, sampled on `subdivisions`^2 sub-cells.
inline Eigen::VectorXd cell_values_from_function(const Grid& grid, const std::function<double(const Point&)>& f,
                                                 int subdivisions = 8) {
  Eigen::VectorXd vals(grid.num_cells());
  const int s = std::max(1, subdivisions);
  for (int c = 0; c < grid.num_cells(); ++c) {
    const auto& v = grid.cells[c];
    const Point& a = grid.node_coords[v[0]];
    const Point& b = grid.node_coords[v[1]];
    double acc = 0.0;
    int count = 0;
    if (grid.dim == 1) {
      for (int i = 0; i < s; ++i) {
        const double t = (i + 0.5) / s;
        acc += f({a[0] + t * (b[0] - a[0]), 0.0});
        ++count;
      }
    } else {
      // Centroids of the uniform s^2 sub-triangulation, in barycentric form.
      const Point& p = grid.node_coords[v[2]];
      auto at = [&](double l1, double l2) {
        const double l0 = 1.0 - l1 - l2;
        return Point{l0 * a[0] + l1 * b[0] + l2 * p[0], l0 * a[1] + l1 * b[1] + l2 * p[1]};
      };
      for (int i = 0; i < s; ++i)
        for (int j = 0; i + j < s; ++j) {
          acc += f(at((i + 1.0 / 3.0) / s, (j + 1.0 / 3.0) / s));
          ++count;
          if (i + j + 1 < s) {
            acc += f(at((i + 2.0 / 3.0) / s, (j + 2.0 / 3.0) / s));
            ++count;
          }
        }
    }
    vals[c] = acc / count;
  }
  return vals;
}

inline Eigen::VectorXd cell_values_from_disc(const Grid& grid, const DiscSource& disc, int subdivisions = 8) {
  const bool inside = disc.center[0] >= 0.0 && disc.center[0] <= 1.0 &&
                      (grid.dim == 1 || (disc.center[1] >= 0.0 && disc.center[1] <= 1.0));
  sparsrec::detail::require(inside && disc.radius > 0.0, "cell_values_from_disc: disc lies outside the domain");
  const double r2 = disc.radius * disc.radius;
  return cell_values_from_function(
      grid,
      [&](const Point& p) {
        const double dx = p[0] - disc.center[0], dy = grid.dim == 1 ? 0.0 : p[1] - disc.center[1];
        return dx * dx + dy * dy <= r2 ? disc.amplitude : 0.0;
      },
      subdivisions);
}

/// Boundary observation b = M_∂^{1/2} u|_∂Ω of the state generated by a
/// cellwise constant source on `forward`, read off at the boundary nodes of
/// `observer`.  Passing the same system twice is the inverse-crime setting.
inline Eigen::VectorXd generate_boundary_data(const FemSystem& forward, const Eigen::VectorXd& cell_values,
                                              const FemSystem& observer) {
  sparsrec::detail::require(cell_values.size() == forward.grid.num_cells(),
                            "generate_boundary_data: source does not match the forward grid");
  sparsrec::detail::require(cell_values.allFinite(), "generate_boundary_data: non-finite source values");
  sparsrec::detail::require(forward.grid.dim == observer.grid.dim, "generate_boundary_data: dimension mismatch");
  const Eigen::VectorXd u = forward.solve_state(forward.load * cell_values);
  Eigen::VectorXd trace(observer.num_boundary());
  if (&forward == &observer) {
    trace = observer.restrict_to_boundary(u);
  } else {
    for (int i = 0; i < observer.num_boundary(); ++i)
      trace[i] = evaluate_p1(forward.grid, u, observer.grid.node_coords[observer.grid.boundary_nodes[i]]);
  }
  return observer.sqrt_boundary_mass * trace;
}

}  // namespace sparsrec::fem
