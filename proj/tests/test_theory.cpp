#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sparsrec/solver.hpp"
#include "sparsrec/theory.hpp"
#include "support.hpp"

using namespace sparsrec;
using operators::projector_and_weights;

namespace {

Eigen::MatrixXd small_a() {
  Eigen::MatrixXd a(2, 3);
  a << 1, 0, 1, 0, 1, 1;
  return a;
}

const operators::ProjectorWeights& full_projector() {
  static const auto p = projector_and_weights(testsupport::setup65().svd);
  return p;
}

}  // namespace

TEST(MaxProperty, Identity) {
  const auto p = projector_and_weights(operators::svd(Eigen::MatrixXd::Identity(4, 4)));
  for (int j = 0; j < 4; ++j) EXPECT_EQ(theory::max_property_argmax(p, j).argmax, j);
}

TEST(MaxProperty, SmallMatrix) {
  const auto p = projector_and_weights(operators::svd(small_a()));
  const Eigen::Vector3d expected = Eigen::Vector3d(2, -1, 1) / std::sqrt(6.0);
  EXPECT_LE((p.scaled_column(0) - expected).cwiseAbs().maxCoeff(), 1e-14);
  const auto r = theory::max_property_argmax(p, 0);
  EXPECT_EQ(r.argmax, 0);
  EXPECT_FALSE(r.ambiguous);
}

TEST(MaxProperty, AllCellsOnTransferMatrix) {
  const auto& p = full_projector();
  for (int j = 0; j < p.size(); ++j) {
    const auto r = theory::max_property_argmax(p, j);
    EXPECT_EQ(r.argmax, j);
    EXPECT_FALSE(r.ambiguous);
  }
}

TEST(MaxProperty, TieIsAmbiguous) {
  // Two equal columns give W^{-1}Pe_0 with two equal entries.
  Eigen::MatrixXd a(2, 3);
  a << 1, 1, 0, 0, 0, 1;
  const auto r = theory::max_property_argmax(projector_and_weights(operators::svd(a)), 0);
  EXPECT_TRUE(r.ambiguous);
}

TEST(NoiseFree, SmallMatrix) {
  const auto p = projector_and_weights(operators::svd(small_a()));
  const double upper = 2.0 / std::sqrt(6.0);
  const auto r = theory::predict_noise_free(p, 0, 0.2 * upper);
  EXPECT_NEAR(r.gamma, 0.8, 1e-14);
  EXPECT_NEAR(r.alpha_upper, upper, 1e-14);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.tau[0], 0.0);
  EXPECT_NEAR(r.tau[1], -0.5, 1e-14);
}

TEST(NoiseFree, LimitsAndBoundary) {
  const auto& p = full_projector();
  const int j = testsupport::interior_cell();
  EXPECT_NEAR(theory::predict_noise_free(p, j, 1e-14).gamma, 1.0, 1e-12);
  const double upper = p.scaled_column(j)[j];
  const auto at = theory::predict_noise_free(p, j, upper);
  EXPECT_FALSE(at.feasible);
  EXPECT_EQ(at.gamma, 0.0);
  EXPECT_THROW(theory::predict_noise_free(p, j, 0.0), std::invalid_argument);
  EXPECT_THROW(theory::predict_noise_free(p, 999, 0.1), std::invalid_argument);
}

TEST(NoiseFree, TausBelowOneOnTransferMatrix) {
  const auto& p = full_projector();
  for (int j = 0; j < p.size(); j += 17) {
    const auto r = theory::predict_noise_free(p, j, 1e-4);
    EXPECT_LT(r.tau.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(NoiseFree, MatchesSolverAcrossSweep) {
  const auto& p = full_projector();
  const Eigen::MatrixXd pm = p.matrix();
  const solver::SplitBregman sb(pm, {});
  for (int j : {testsupport::interior_cell(), testsupport::boundary_cell()}) {
    const double upper = p.scaled_column(j)[j];
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(p.size());
    for (double f : {0.9, 0.5, 0.1, 1e-2, 1e-3, 1e-4}) {
      const auto r = sb.solve({pm, p.column(j), p.w, f * upper}, warm);
      warm = r.x;
      ASSERT_TRUE(r.converged);
      EXPECT_NEAR(r.x.maxCoeff(), theory::predict_noise_free(p, j, f * upper).gamma, 1e-6) << "j=" << j << " f=" << f;
      EXPECT_EQ(solver::support(r.x), (std::vector<Eigen::Index>{j}));
    }
  }
}

TEST(WithNoise, ZeroNoiseReducesToNoiseFree) {
  const auto& p = full_projector();
  const int j = testsupport::interior_cell();
  const auto a = theory::predict_with_noise(p, Eigen::VectorXd::Zero(p.size()), j, 1e-3);
  const auto b = theory::predict_noise_free(p, j, 1e-3);
  EXPECT_DOUBLE_EQ(a.gamma, b.gamma);
  EXPECT_DOUBLE_EQ(a.alpha_upper, b.alpha_upper);
  EXPECT_EQ(a.alpha_lower, 0.0);
  EXPECT_TRUE(a.feasible);
}

TEST(WithNoise, SyntheticInstanceAgainstBruteForce) {
  Eigen::MatrixXd a(2, 3);
  a << 2, 0, 1, 0, 1, 1;
  const auto f = operators::svd(a);
  const auto p = projector_and_weights(f);
  const int j = 0;
  const Eigen::Vector2d eta(0.01, -0.004);
  const Eigen::VectorXd b = a.col(j) + eta;
  const Eigen::VectorXd c = operators::pseudo_apply(f, std::nullopt, b);
  const Eigen::VectorXd nimg = operators::pseudo_apply(f, std::nullopt, eta);
  const auto bounds = theory::predict_with_noise(p, nimg, j, 1.0);
  ASSERT_LT(bounds.alpha_lower, bounds.alpha_upper);
  const double alpha = 0.5 * (bounds.alpha_lower + bounds.alpha_upper);
  const auto pred = theory::predict_with_noise(p, nimg, j, alpha);
  ASSERT_TRUE(pred.feasible);
  const Eigen::MatrixXd pm = p.matrix();
  const Eigen::VectorXd ref = testsupport::brute_force_lasso(pm, c, p.w, alpha);
  EXPECT_EQ(solver::support(ref), (std::vector<Eigen::Index>{j}));
  EXPECT_NEAR(ref[j], pred.gamma, 1e-10);
  const auto r = solver::solve({pm, c, p.w, alpha});
  EXPECT_NEAR(r.x.maxCoeff(), pred.gamma, 1e-8);
}

TEST(WithNoise, LowNoiseOnTransferMatrix) {
  const auto& s = testsupport::setup65();
  const int k = 7;
  const auto pk = projector_and_weights(s.svd, k);
  const int j = testsupport::interior_cell();
  const Eigen::VectorXd aej = s.A.matrix.col(j);
  const auto noise = harness::make_noise(aej, 5e-4, 3);
  const Eigen::VectorXd b = aej + noise.eta;
  const Eigen::VectorXd nimg = operators::pseudo_apply(s.svd, k, noise.eta);
  const auto bounds = theory::predict_with_noise(pk, nimg, j, 1.0);
  ASSERT_LT(bounds.alpha_lower, bounds.alpha_upper);
  const double alpha = std::sqrt(bounds.alpha_lower * bounds.alpha_upper);
  const auto pred = theory::predict_with_noise(pk, nimg, j, alpha);
  ASSERT_TRUE(pred.feasible);
  const auto r = solver::solve({pk.matrix(), operators::pseudo_apply(s.svd, k, b), pk.w, alpha});
  ASSERT_TRUE(r.converged);
  EXPECT_EQ(solver::support(r.x), (std::vector<Eigen::Index>{j}));
  EXPECT_NEAR(r.x[j], pred.gamma, 1e-6);
}

TEST(WithNoise, ParallelColumnsViolateAssumption) {
  Eigen::MatrixXd a(2, 3);
  a << 1, 1, 0, 0, 0, 1;
  const auto p = projector_and_weights(operators::svd(a));
  EXPECT_THROW(theory::predict_with_noise(p, Eigen::Vector3d::Zero(), 0, 0.1), AssumptionViolation);
}

TEST(Rescale, Cases) {
  const auto& p = full_projector();
  const int j = testsupport::interior_cell();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p.size());
  x[j] = 0.7;
  EXPECT_LE((theory::rescale_solution(x, 1e-15, p) - x).cwiseAbs().maxCoeff(), 1e-14);
  const double alpha = 0.3 * p.scaled_column(j)[j];
  x[j] = theory::predict_noise_free(p, j, alpha).gamma;
  const Eigen::VectorXd e = theory::rescale_solution(x, alpha, p);
  EXPECT_NEAR(e[j], 1.0, 1e-8);
  EXPECT_THROW(theory::rescale_solution(x, 2.0 * p.scaled_column(j)[j], p), std::invalid_argument);
  EXPECT_THROW(theory::rescale_solution(Eigen::VectorXd::Zero(p.size()), alpha, p), std::invalid_argument);
}

TEST(Collision, IdentityHasNone) {
  EXPECT_FALSE(theory::two_source_collision(Eigen::MatrixXd::Identity(3, 3), 0, 1).has_value());
  EXPECT_THROW(theory::two_source_collision(Eigen::MatrixXd::Identity(3, 3), 1, 1), std::invalid_argument);
}

TEST(Collision, SymmetricOneDimensionalPair) {
  const auto s = harness::build_inverse_setup(1, 31 * 8 + 1, 31, 1.0);
  const auto c = theory::two_source_collision(s.A, 5, 25, 1e-8);
  ASSERT_TRUE(c.has_value());
  EXPECT_EQ(c->j, 15);
  EXPECT_GT(c->c, 0.0);
  EXPECT_GE(c->cosine, 1.0 - 1e-8);
}

TEST(Collision, AdjacentInteriorCellsInTwoDimensions) {
  const auto& s = testsupport::setup65();
  const int j = testsupport::interior_cell();
  EXPECT_FALSE(theory::two_source_collision(s.A, j, j + 1, 1e-6).has_value());
}

TEST(Collision, ConsistentWithBasisPursuit) {
  const auto s = harness::build_inverse_setup(1, 31 * 8 + 1, 31, 1.0);
  const auto p = projector_and_weights(s.svd);
  const auto c = theory::two_source_collision(s.A, 5, 25, 1e-8);
  ASSERT_TRUE(c.has_value());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(31);
  x[5] = x[25] = 1.0;
  const auto r = solver::solve_basis_pursuit(p, p.apply(x));
  EXPECT_EQ(solver::support(r.x), (std::vector<Eigen::Index>{c->j}));
  EXPECT_NEAR(r.x[c->j], c->c, 1e-6);
}

TEST(Inequality, ZeroPerturbationAndFeasibility) {
  const auto& p = full_projector();
  const int j = testsupport::interior_cell();
  Eigen::VectorXd e = Eigen::VectorXd::Zero(p.size());
  e[j] = 1.0;
  EXPECT_TRUE(theory::is_feasible(p, e, j));
  EXPECT_NEAR(theory::weighted_norm_gap(p, e, j), 0.0, 1e-15);
  Eigen::VectorXd ei = Eigen::VectorXd::Zero(p.size());
  ei[j + 1] = 1.0;
  EXPECT_FALSE(theory::is_feasible(p, ei, j));
}

TEST(Inequality, RandomNullSpacePerturbations) {
  const auto& p = full_projector();
  const auto rep = theory::verify_weighted_norm_inequality(p, testsupport::interior_cell(), 1000, 5);
  EXPECT_EQ(rep.trials, 1000);
  EXPECT_GE(rep.min_gap, 0.0);
  EXPECT_THROW(theory::verify_weighted_norm_inequality(p, 0, 0, 1), std::invalid_argument);
}

TEST(Inequality, BrokenWeightsAreCaught) {
  // With weights detached from P the inequality fails for some perturbation.
  auto p = projector_and_weights(operators::svd(small_a()));
  p.w = Eigen::Vector3d(10.0, 0.01, 0.01);
  EXPECT_THROW(theory::verify_weighted_norm_inequality(p, 0, 200, 1), TheoremViolation);
}

TEST(PredictionsCsv, Format) {
  const auto& p = full_projector();
  const auto path = std::filesystem::temp_directory_path() / "sparsrec_predictions.csv";
  theory::write_predictions_csv(path.string(), {theory::predict_noise_free(p, 3, 1e-3)});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "j,alpha,gamma,alpha_lower,alpha_upper,feasible");
  EXPECT_EQ(row.substr(0, 2), "3,");
  EXPECT_EQ(row.back(), '1');
  std::filesystem::remove(path);
}
