#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <set>

#include "sparsrec/fem.hpp"
#include "support.hpp"

using namespace sparsrec;

namespace {

double signed_area(const fem::Grid& g, int c) {
  const auto& v = g.cells[c];
  const auto& a = g.node_coords[v[0]];
  const auto& b = g.node_coords[v[1]];
  const auto& p = g.node_coords[v[2]];
  return 0.5 * ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]));
}

}  // namespace

TEST(Grid, SmallestIntervalMesh) {
  const auto g = fem::build_grid(1, 2);
  ASSERT_EQ(g.num_nodes(), 2);
  EXPECT_DOUBLE_EQ(g.node_coords[0][0], 0.0);
  EXPECT_DOUBLE_EQ(g.node_coords[1][0], 1.0);
  EXPECT_EQ(g.num_cells(), 1);
  EXPECT_EQ(g.boundary_nodes, (std::vector<int>{0, 1}));
}

TEST(Grid, ThreeByThreeCounts) {
  const auto g = fem::build_grid(2, 3);
  EXPECT_EQ(g.num_nodes(), 9);
  EXPECT_EQ(g.num_cells(), 8);
  EXPECT_EQ(g.boundary_nodes.size(), 8u);
}

TEST(Grid, CountsMatchEnumeration) {
  const int k = 65;
  const auto g = fem::build_grid(2, k);
  EXPECT_EQ(g.num_nodes(), k * k);
  EXPECT_EQ(g.num_cells(), 2 * (k - 1) * (k - 1));
  std::vector<int> boundary;
  for (int i = 0; i < g.num_nodes(); ++i) {
    const auto& p = g.node_coords[i];
    if (p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0) boundary.push_back(i);
  }
  EXPECT_EQ(static_cast<int>(boundary.size()), 4 * k - 4);
  EXPECT_EQ(g.boundary_nodes, boundary);
}

TEST(Grid, InvariantsHold) {
  for (int k : {2, 3, 9}) {
    const auto g = fem::build_grid(2, k);
    for (const auto& p : g.node_coords) {
      EXPECT_GE(p[0], 0.0);
      EXPECT_LE(p[0], 1.0);
      EXPECT_GE(p[1], 0.0);
      EXPECT_LE(p[1], 1.0);
    }
    for (int c = 0; c < g.num_cells(); ++c) {
      for (int v = 0; v < 3; ++v) {
        EXPECT_GE(g.cells[c][v], 0);
        EXPECT_LT(g.cells[c][v], g.num_nodes());
      }
      EXPECT_GT(signed_area(g, c), 0.0);
    }
  }
}

TEST(Grid, RejectsBadArguments) {
  EXPECT_THROW(fem::build_grid(2, 1), std::invalid_argument);
  EXPECT_THROW(fem::build_grid(1, 0), std::invalid_argument);
  EXPECT_THROW(fem::build_grid(3, 4), std::invalid_argument);
}

TEST(Assembly, OneDimensionalStiffness) {
  const auto sys = fem::assemble_fem(fem::build_grid(1, 3), 1.0);
  Eigen::MatrixXd expected(3, 3);
  expected << 2, -2, 0, -2, 4, -2, 0, -2, 2;  // (1/h) tridiag(-1, 2, -1), h = 1/2
  EXPECT_LE((Eigen::MatrixXd(sys.stiffness) - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ((sys.stiffness * Eigen::VectorXd::Ones(3)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Assembly, MassSumsToArea) {
  for (int k : {2, 3, 17, 65}) {
    const auto sys = fem::assemble_fem(fem::build_grid(2, k), 1.0);
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(sys.grid.num_nodes());
    EXPECT_NEAR(one.dot(sys.mass * one), 1.0, 1e-10);
  }
}

TEST(Assembly, BoundaryMassSumsToPerimeter) {
  const auto g = fem::build_grid(2, 3);
  const auto sys = fem::assemble_fem(g, 1.0);
  // Each boundary edge contributes its length; the edges follow the boundary nodes.
  double perimeter = 0.0;
  for (int i = 0; i + 1 < g.nodes_per_side; ++i) perimeter += 4.0 * (g.node_coords[i + 1][0] - g.node_coords[i][0]);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(g.num_nodes());
  EXPECT_NEAR(one.dot(sys.boundary_mass * one), perimeter, 1e-10);
  EXPECT_NEAR(perimeter, 4.0, 1e-12);
}

TEST(Assembly, OneDimensionalBoundaryIsPointEvaluation) {
  const auto sys = fem::assemble_fem(fem::build_grid(1, 5), 1.0);
  Eigen::MatrixXd mb = Eigen::MatrixXd(sys.boundary_mass);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(5, 5);
  expected(0, 0) = expected(4, 4) = 1.0;
  EXPECT_EQ(mb, expected);
}

TEST(Assembly, MatrixProperties) {
  const auto sys = fem::assemble_fem(fem::build_grid(2, 17), 1.0);
  const Eigen::MatrixXd l = sys.stiffness, m = sys.mass, mb = sys.boundary_mass;
  EXPECT_EQ((l - l.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((m - m.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((mb - mb.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((l * Eigen::VectorXd::Ones(l.rows())).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(m).info(), Eigen::Success);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> el(l), eb(mb);
  EXPECT_GE(el.eigenvalues().minCoeff(), -1e-10);
  EXPECT_GE(eb.eigenvalues().minCoeff(), -1e-12);
  // Boundary mass lives on boundary rows only.
  std::set<int> bset(sys.grid.boundary_nodes.begin(), sys.grid.boundary_nodes.end());
  for (int i = 0; i < mb.rows(); ++i)
    if (!bset.count(i)) EXPECT_EQ(mb.row(i).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Assembly, SquareRootOfBoundaryMass) {
  const auto sys = fem::assemble_fem(fem::build_grid(2, 17), 1.0);
  const Eigen::MatrixXd mb = sys.boundary_mass;
  const auto& b = sys.grid.boundary_nodes;
  Eigen::MatrixXd restricted(b.size(), b.size());
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) restricted(i, j) = mb(b[i], b[j]);
  const Eigen::MatrixXd& s = sys.sqrt_boundary_mass;
  EXPECT_LE((s * s - restricted).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Assembly, LoadIntegratesConstants) {
  const auto sys = fem::assemble_fem(fem::build_grid(2, 33), 1.0);
  const Eigen::VectorXd f = Eigen::VectorXd::Ones(sys.grid.num_cells());
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(sys.grid.num_nodes());
  EXPECT_NEAR(one.dot(sys.load * f), 1.0, 1e-12);
}

TEST(Assembly, Errors) {
  EXPECT_THROW(fem::assemble_fem(fem::build_grid(2, 3), 0.0), std::invalid_argument);
  EXPECT_THROW(fem::assemble_fem(fem::build_grid(2, 3), -1.0), std::invalid_argument);
  auto g = fem::build_grid(2, 3);
  g.cells[0] = {g.cells[0][0], g.cells[0][0], g.cells[0][1]};
  EXPECT_THROW(fem::assemble_fem(g, 1.0), AssemblyError);
}

TEST(SourceBasis, MatchingOneDimensionalGridIsOrthonormal) {
  const auto g = fem::build_grid(1, 5);
  const auto b = fem::build_source_basis(g, 4);
  EXPECT_EQ(b.size(), 4);
  EXPECT_LE((b.gram() - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::MatrixXd e = b.E;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(e(i, i), 1.0 / std::sqrt(0.25), 1e-14);
}

TEST(SourceBasis, NestedTwoDimensionalGrid) {
  const auto& s = testsupport::setup65();
  const auto& b = s.basis;
  EXPECT_EQ(b.size(), 256);
  EXPECT_LE((b.gram() - Eigen::MatrixXd::Identity(256, 256)).cwiseAbs().maxCoeff(), 1e-10);
  for (int i = 0; i < b.size(); ++i) EXPECT_NEAR(b.normalization[i], 16.0, 1e-10);  // 1/H
  // Every fine cell in column i has its centroid inside coarse cell i.
  const Eigen::MatrixXd e = b.E;
  const auto& g = s.system.grid;
  for (int i = 0; i < b.size(); ++i) {
    const auto [cx, cy] = b.coarse_coords(i);
    int count = 0;
    for (int c = 0; c < g.num_cells(); ++c) {
      if (e(c, i) == 0.0) continue;
      ++count;
      const auto p = g.cell_centroid(c);
      EXPECT_EQ(static_cast<int>(p[0] * 16), cx);
      EXPECT_EQ(static_cast<int>(p[1] * 16), cy);
    }
    EXPECT_EQ(count, 2 * 4 * 4);
  }
}

TEST(SourceBasis, CoarseCellsTileTheDomain) {
  const auto& b = testsupport::setup65().basis;
  std::vector<int> owner(b.fine_to_coarse.size(), -1);
  for (int i = 0; i < b.size(); ++i)
    for (int c : b.cell_index_map[i]) {
      EXPECT_EQ(owner[c], -1);
      owner[c] = i;
    }
  for (int o : owner) EXPECT_GE(o, 0);
}

TEST(SourceBasis, RejectsNonNestedResolutions) {
  EXPECT_THROW(fem::build_source_basis(fem::build_grid(2, 63), 16), std::invalid_argument);
  EXPECT_THROW(fem::build_source_basis(fem::build_grid(2, 9), 0), std::invalid_argument);
}

TEST(Transfer, ColumnsAreNonzeroAndRankBounded) {
  const auto& s = testsupport::setup65();
  const Eigen::MatrixXd& a = s.A.matrix;
  EXPECT_EQ(a.rows(), 256);
  EXPECT_EQ(a.cols(), 256);
  EXPECT_GT(a.colwise().norm().minCoeff(), 0.0);
  EXPECT_LE(s.svd.numerical_rank(), a.rows());
}

TEST(Transfer, CenterColumnWeakerThanCorner) {
  const auto& s = testsupport::setup65();
  const int center = s.basis.coarse_index(8, 8), corner = s.basis.coarse_index(0, 0);
  EXPECT_LT(s.A.matrix.col(center).norm(), s.A.matrix.col(corner).norm());
}

TEST(Transfer, ConsistentWithDataGeneration) {
  const auto& s = testsupport::setup65();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd x(256);
    for (auto& v : x) v = nd(rng);
    const Eigen::VectorXd b = fem::generate_boundary_data(s.system, fem::cell_values_from_basis(s.basis, x), s.system);
    EXPECT_LE((s.A.matrix * x - b).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DataGeneration, ZeroSourceGivesZeroData) {
  const auto& s = testsupport::setup65();
  const Eigen::VectorXd b =
      fem::generate_boundary_data(s.system, Eigen::VectorXd::Zero(s.system.grid.num_cells()), s.system);
  EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(DataGeneration, BasisFunctionReproducesColumn) {
  const auto& s = testsupport::setup65();
  const int j = testsupport::interior_cell();
  const Eigen::VectorXd b = fem::generate_boundary_data(
      s.system, fem::cell_values_from_basis(s.basis, Eigen::VectorXd::Unit(256, j)), s.system);
  EXPECT_LE((b - s.A.matrix.col(j)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DataGeneration, FinerForwardGridIsClose) {
  const auto& s = testsupport::setup65();
  const auto& f = testsupport::forward129();
  const int j = testsupport::interior_cell();
  const Eigen::VectorXd b = f.observe_coarse(s, Eigen::VectorXd::Unit(256, j));
  const double rel = (b - s.A.matrix.col(j)).norm() / b.norm();
  EXPECT_GT(rel, 0.0);
  EXPECT_LT(rel, 1e-2);
}

TEST(DataGeneration, DiscIsNotASingleColumn) {
  const auto& s = testsupport::setup65();
  const auto& f = testsupport::forward129();
  const Eigen::VectorXd b = f.observe_disc(s, fem::DiscSource{});
  ASSERT_GT(b.norm(), 0.0);
  for (int i = 0; i < 256; ++i) {
    const double cosine = std::abs(b.dot(s.A.matrix.col(i))) / (b.norm() * s.A.matrix.col(i).norm());
    EXPECT_LT(cosine, 1.0 - 1e-6) << "column " << i;
  }
}

TEST(DataGeneration, Errors) {
  const auto g = fem::build_grid(2, 9);
  EXPECT_THROW(fem::cell_values_from_disc(g, fem::DiscSource{{1.5, 0.5}, 0.1, 1.0}), std::invalid_argument);
  EXPECT_THROW(fem::cell_values_from_disc(g, fem::DiscSource{{0.5, 0.5}, 0.0, 1.0}), std::invalid_argument);
  const auto sys = fem::assemble_fem(g, 1.0);
  EXPECT_THROW(fem::generate_boundary_data(sys, Eigen::VectorXd::Zero(3), sys), std::invalid_argument);
}

TEST(Interpolation, ReproducesLinearFunctions) {
  const auto g = fem::build_grid(2, 9);
  Eigen::VectorXd u(g.num_nodes());
  for (int i = 0; i < g.num_nodes(); ++i) u[i] = 2.0 * g.node_coords[i][0] - 3.0 * g.node_coords[i][1] + 0.5;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const fem::Point p{ud(rng), ud(rng)};
    EXPECT_NEAR(fem::evaluate_p1(g, u, p), 2.0 * p[0] - 3.0 * p[1] + 0.5, 1e-12);
  }
}

TEST(DiscSource, CellValuesAreFractionsOfAmplitude) {
  const auto g = fem::build_grid(2, 33);
  const Eigen::VectorXd v = fem::cell_values_from_disc(g, fem::DiscSource{{0.5, 0.5}, 0.2, 2.0});
  EXPECT_GE(v.minCoeff(), 0.0);
  EXPECT_LE(v.maxCoeff(), 2.0);
  double area = 0.0;
  for (int c = 0; c < g.num_cells(); ++c) area += v[c] * g.cell_measure(c);
  EXPECT_NEAR(area, 2.0 * M_PI * 0.04, 5e-3);
}
