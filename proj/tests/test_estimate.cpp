#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "straightflow/estimate.hpp"
#include "support.hpp"

using namespace straightflow;
using namespace sftest;

namespace {

Vec x1(double x) { return Vec::Constant(1, x); }

double normal_pdf(double x, double var) {
  return std::exp(-0.5 * x * x / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

const PathEnsemble& deterministic_ensemble() {
  static const PathEnsemble ens = sample_paths(affine_deterministic(), 50000, make_time_grid(4), 11);
  return ens;
}

const PathEnsemble& independent_ensemble() {
  static const PathEnsemble ens = sample_paths(affine_independent(), 50000, make_time_grid(4), 12);
  return ens;
}

}  // namespace

TEST(Silverman, MatchesRuleOfThumb) {
  RowMat pos(4, 1);
  pos << -1.0, 0.0, 1.0, 2.0;
  const double sd = std::sqrt(5.0 / 3.0);
  EXPECT_NEAR(silverman_bandwidth(pos), sd * std::pow(4.0 / (3.0 * 4.0), 0.2), 1e-14);
}

TEST(Silverman, ZeroVarianceIsDegenerate) {
  RowMat pos = RowMat::Constant(10, 1, 3.0);
  EXPECT_THROW(silverman_bandwidth(pos), DegenerateData);
}

TEST(Silverman, EnsembleSlice) {
  const auto& ens = independent_ensemble();
  const double h = bandwidth_silverman(ens, 2);
  EXPECT_NEAR(h, std::sqrt(0.5) * std::pow(4.0 / (3.0 * 50000), 0.2), 0.01 * h);
}

TEST(KernelConfig, RejectsBadValues) {
  KernelConfig c;
  c.bandwidth = -0.1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.bandwidth = 0.1;
  c.density_floor = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Kde, MatchesGaussianDensity) {
  const auto& ens = independent_ensemble();
  for (double x : {-1.0, 0.0, 0.5}) EXPECT_NEAR(kde_density(ens, 2, x1(x), {}), normal_pdf(x, 0.5), 0.02);
}

TEST(Nw, DeterministicVelocity) {
  const auto& ens = deterministic_ensemble();
  for (double x : {-1.0, 0.0, 1.0}) {
    const auto e = nw_conditional(ens, 2, x1(x), Target::velocity, {});
    EXPECT_NEAR(e.value[0], x / 1.5, 0.03);
    EXPECT_GT(e.effective_n, 25.0);
  }
}

TEST(Nw, AffineAccelerationIsZero) {
  const auto& ens = independent_ensemble();
  EXPECT_EQ(nw_conditional(ens, 2, x1(0.3), Target::acceleration, {}).value[0], 0.0);
}

TEST(Nw, IndependentMidpointVelocity) {
  const auto& ens = independent_ensemble();
  EXPECT_NEAR(nw_conditional(ens, 2, x1(0.4), Target::velocity, {}).value[0], 0.0, 0.05);
}

TEST(Nw, SecondMomentMatchesOracle) {
  const auto& ens = independent_ensemble();
  EXPECT_NEAR(nw_second_moment(ens, 2, x1(0.0), {})(0, 0), 2.0, 0.1);
}

TEST(Nw, RefusesLowDensity) {
  const auto& ens = independent_ensemble();
  EXPECT_THROW(nw_conditional(ens, 2, x1(8.0), Target::velocity, {}), LowDensity);
}

TEST(Nw, ConvergesWithN) {
  auto err = [](std::size_t n) {
    const auto ens = sample_paths(affine_deterministic(), n, make_time_grid(2), 21);
    return std::abs(nw_conditional(ens, 1, x1(1.0), Target::velocity, {}).value[0] - 1.0 / 1.5);
  };
  EXPECT_LT(err(40000), err(1000));
}

TEST(Reynolds, SubtractsOuterProduct) {
  Mat S(2, 2);
  S << 2.0, 0.0, 0.0, 1.0;
  Vec v(2);
  v << 1.0, 0.0;
  const Mat P = reynolds_tensor(S, v);
  EXPECT_NEAR(P(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(P(1, 1), 1.0, 1e-15);
  EXPECT_NEAR(P(0, 1), 0.0, 1e-15);
}

TEST(Reynolds, ClipsRoundoffNegatives) {
  const Mat P = reynolds_tensor(Mat::Constant(1, 1, 1.0), x1(1.0 + 1e-12));
  EXPECT_EQ(P(0, 0), 0.0);
}

TEST(Reynolds, InconsistentMomentsRejected) {
  EXPECT_THROW(reynolds_tensor(Mat::Constant(1, 1, 1.0), x1(2.0)), InconsistentMoments);
}

TEST(Reynolds, NonFiniteRejected) {
  EXPECT_THROW(reynolds_tensor(Mat::Constant(1, 1, NAN), x1(0.0)), NonFiniteInput);
}

TEST(SliceEstimate, EstimatedPiMatchesOracleTrace) {
  const auto& ens = independent_ensemble();
  const KernelEstimator est(ens.slice(2), {});
  const auto e = est.estimate(x1(0.2));
  EXPECT_NEAR(e.Pi_hat(0, 0), 2.0, 0.15);
  EXPECT_NEAR(e.rho_hat, normal_pdf(0.2, 0.5), 0.02);
}

TEST(ReynoldsTrace, DeterministicNearZeroIndependentNearTwo) {
  const auto det = expected_reynolds_trace(KernelEstimator(deterministic_ensemble().slice(2), {}), 2000);
  const auto ind = expected_reynolds_trace(KernelEstimator(independent_ensemble().slice(2), {}), 2000);
  EXPECT_LT(det.mean, 0.01);
  EXPECT_NEAR(ind.mean, 2.0, 4 * ind.standard_error + 0.05);
  EXPECT_EQ(ind.used + ind.refused, 2000u);
}
