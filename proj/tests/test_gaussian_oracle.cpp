#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "straightflow/gaussian_oracle.hpp"
#include "support.hpp"

using namespace straightflow;
using namespace sftest;

namespace {

Vec x1(double x) { return Vec::Constant(1, x); }

double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace

TEST(MarginalMoments, AffineIndependentVariance) {
  const auto s = gaussian_spec(affine_independent());
  for (double t : {0.0, 0.25, 0.5, 1.0}) {
    const auto m = marginal_moments(s, t);
    EXPECT_NEAR(m.mean[0], 0.0, 1e-15);
    EXPECT_NEAR(m.cov(0, 0), (1 - t) * (1 - t) + t * t, 1e-14);
    EXPECT_FALSE(m.degenerate);
  }
}

TEST(MarginalMoments, DeterministicScaling) {
  const auto s = gaussian_spec(affine_deterministic());
  EXPECT_NEAR(marginal_moments(s, 0.5).cov(0, 0), 2.25, 1e-14);
  EXPECT_NEAR(marginal_moments(s, 1.0).cov(0, 0), 4.0, 1e-14);
}

TEST(MarginalMoments, LatentAddsBumpVariance) {
  const auto s = gaussian_spec(ProcessSpec::latent(CouplingSpec::independent(normal(0, 1), normal(0, 1)), 2.0));
  const double t = 0.5, g = 2.0 * t * (1 - t);
  EXPECT_NEAR(marginal_moments(s, t).cov(0, 0), 0.5 + g * g, 1e-14);
}

TEST(MarginalMoments, DegenerateFlagged) {
  // X1 = -X0: the affine interpolant collapses to a point at t = 1/2.
  const auto s = gaussian_spec(ProcessSpec::affine(CouplingSpec::deterministic(normal(0, 1), scale_map(-1.0))));
  EXPECT_TRUE(marginal_moments(s, 0.5).degenerate);
  EXPECT_THROW(conditional_fields(s, 0.5, x1(0.0)), DegenerateMarginal);
}

TEST(MarginalMoments, TimeOutsideUnitIntervalRejected) {
  const auto s = gaussian_spec(affine_independent());
  EXPECT_THROW(marginal_moments(s, 1.5), InvalidArgument);
}

TEST(ConditionalFields, AffineIndependentMidpoint) {
  const auto s = gaussian_spec(affine_independent());
  for (double x : {-1.0, 0.0, 0.7}) {
    const auto f = conditional_fields(s, 0.5, x1(x));
    EXPECT_NEAR(f.rho, normal_pdf(x, 0.0, 0.5), 1e-14);
    EXPECT_NEAR(f.v[0], 0.0, 1e-14);
    EXPECT_NEAR(f.a[0], 0.0, 1e-14);
    EXPECT_NEAR(f.Pi(0, 0), 2.0, 1e-13);
    EXPECT_NEAR(f.Sigma(0, 0), 2.0, 1e-13);
  }
}

TEST(ConditionalFields, AffineIndependentVelocityGain) {
  const auto s = gaussian_spec(affine_independent());
  const double t = 0.25, var = 0.75 * 0.75 + 0.25 * 0.25;
  const auto f = conditional_fields(s, t, x1(1.3));
  EXPECT_NEAR(f.v[0], (2 * t - 1) / var * 1.3, 1e-14);
}

TEST(ConditionalFields, DeterministicHasNoReynoldsStress) {
  const auto s = gaussian_spec(affine_deterministic());
  for (double t : {0.1, 0.5, 0.9}) {
    const auto f = conditional_fields(s, t, x1(0.8));
    EXPECT_NEAR(f.v[0], 0.8 / (1 + t), 1e-14);
    EXPECT_NEAR(f.Pi(0, 0), 0.0, 1e-13);
    EXPECT_NEAR(f.Sigma(0, 0), f.v[0] * f.v[0], 1e-13);
    EXPECT_EQ(f.a[0], 0.0);
  }
}

TEST(ConditionalFields, TrigIndependent) {
  const auto s = gaussian_spec(trig_independent());
  for (double t : {0.2, 0.5, 0.8}) {
    const auto f = conditional_fields(s, t, x1(1.1));
    EXPECT_NEAR(f.rho, normal_pdf(1.1, 0.0, 1.0), 1e-14);
    EXPECT_NEAR(f.v[0], 0.0, 1e-14);
    EXPECT_NEAR(f.a[0], -kPi2Over4 * 1.1, 1e-13);
    EXPECT_NEAR(f.Pi(0, 0), kPi2Over4, 1e-13);
  }
}

TEST(ConditionalFields, TrigIdentityAccelerationNonZero) {
  // X_t = (cos + sin) X0: v(x) and a(x) follow from differentiating the gain.
  const auto s = gaussian_spec(trig_identity());
  const double t = 0.3, w = std::numbers::pi / 2;
  const double c = std::cos(w * t) + std::sin(w * t);
  const double c1 = w * (std::cos(w * t) - std::sin(w * t));
  const double c2 = -w * w * c;
  const auto f = conditional_fields(s, t, x1(0.5));
  EXPECT_NEAR(f.v[0], c1 / c * 0.5, 1e-13);
  EXPECT_NEAR(f.a[0], c2 / c * 0.5, 1e-13);
  EXPECT_NEAR(f.Pi(0, 0), 0.0, 1e-12);
}

TEST(ConditionalFields, TwoDimensionalDiagonal) {
  const auto spec = ProcessSpec::affine(CouplingSpec::independent(normal2(Vec::Zero(2), Vec::Ones(2)),
                                                                  normal2(Vec::Constant(2, 1.0), Vec::Constant(2, 4.0))));
  const auto s = gaussian_spec(spec);
  const double t = 0.5;
  const Vec x = Vec::Constant(2, 0.2);
  const auto f = conditional_fields(s, t, x);
  const double var = 0.25 + 0.25 * 4.0, mean = 0.5;
  const double gain = (-(1 - t) * 1.0 + t * 4.0) / var;
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(f.v[j], 1.0 + gain * (0.2 - mean), 1e-13);
  EXPECT_NEAR(f.rho, normal_pdf(0.2, mean, var) * normal_pdf(0.2, mean, var), 1e-14);
  EXPECT_NEAR(f.Pi(0, 1), 0.0, 1e-13);
}

TEST(GaussianSpec, NonGaussianIsCapabilityError) {
  MixtureLaw mix{{0.5, 0.5}, {normal(-1, 1), normal(1, 1)}};
  EXPECT_THROW(gaussian_spec(ProcessSpec::affine(CouplingSpec::independent(mix, normal(0, 1)))), CapabilityError);
}

TEST(OtMap, OneDimensional) {
  const auto T = gaussian_ot_map(x1(0.0), Mat::Constant(1, 1, 1.0), x1(2.0), Mat::Constant(1, 1, 4.0));
  EXPECT_NEAR(T.A(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(T.b[0], 2.0, 1e-12);
}

TEST(OtMap, PushesSourceOntoTarget) {
  Mat S0(2, 2), S1(2, 2);
  S0 << 2.0, 0.5, 0.5, 1.0;
  S1 << 1.0, -0.3, -0.3, 3.0;
  Vec m0(2), m1(2);
  m0 << 1.0, -1.0;
  m1 << 0.0, 2.0;
  const auto T = gaussian_ot_map(m0, S0, m1, S1);
  EXPECT_LT((T.A * S0 * T.A.transpose() - S1).norm(), 1e-10);
  EXPECT_LT((T(m0) - m1).norm(), 1e-12);
  EXPECT_LT((T.A - T.A.transpose()).norm(), 1e-12);
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat>(T.A).eigenvalues().minCoeff(), 0.0);
}

TEST(OtMap, SingularSourceRejected) {
  EXPECT_THROW(gaussian_ot_map(x1(0.0), Mat::Zero(1, 1), x1(0.0), Mat::Identity(1, 1)), Error);
}

TEST(MaterialDerivative, AffineIndependentMidpoint) {
  const auto s = gaussian_spec(affine_independent());
  for (double x : {-1.0, 0.5, 2.0}) {
    const auto m = material_derivative_analytic(s, 0.5, x1(x));
    EXPECT_FALSE(m.one_sided);
    EXPECT_NEAR(m.value[0], 4.0 * x, 1e-5 * std::max(1.0, std::abs(x)));
  }
}

TEST(MaterialDerivative, StraightPathsHaveNone) {
  const auto s = gaussian_spec(affine_deterministic());
  for (double t : {0.2, 0.5, 0.8}) EXPECT_NEAR(material_derivative_analytic(s, t, x1(1.0)).value[0], 0.0, 1e-6);
}

TEST(MaterialDerivative, OneSidedNearEnds) {
  const auto s = gaussian_spec(affine_deterministic());
  const auto m0 = material_derivative_analytic(s, 0.0, x1(1.0));
  const auto m1 = material_derivative_analytic(s, 1.0, x1(1.0));
  EXPECT_TRUE(m0.one_sided);
  EXPECT_TRUE(m1.one_sided);
  EXPECT_NEAR(m0.value[0], 0.0, 1e-5);
  EXPECT_NEAR(m1.value[0], 0.0, 1e-5);
}

TEST(MaterialDerivative, TrigIdentityEqualsAcceleration) {
  // Deterministic coupling: the path acceleration is the material derivative.
  const auto s = gaussian_spec(trig_identity());
  const auto f = conditional_fields(s, 0.4, x1(0.9));
  EXPECT_NEAR(material_derivative_analytic(s, 0.4, x1(0.9)).value[0], f.a[0], 1e-6);
}
