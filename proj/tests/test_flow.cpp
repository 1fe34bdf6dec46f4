#include <gtest/gtest.h>

#include <cmath>

#include "straightflow/flow.hpp"
#include "support.hpp"

using namespace straightflow;
using namespace sftest;

namespace {

Vec x1(double x) { return Vec::Constant(1, x); }

const VelocityOracle kGrowth = VelocityOracle::function([](double, const Vec& x) { return Vec(x); });

double growth_error(Scheme s, std::size_t steps) {
  return std::abs(integrate(kGrowth, x1(1.0), make_time_grid(steps), s).states.back()[0] - std::exp(1.0));
}

Trajectory trajectory_of(std::function<double(double)> path, std::size_t steps) {
  Trajectory tr;
  tr.grid = make_time_grid(steps);
  for (double t : tr.grid.nodes) tr.states.push_back(x1(path(t)));
  return tr;
}

}  // namespace

TEST(Scheme, ParseAndName) {
  for (auto s : {Scheme::euler, Scheme::midpoint, Scheme::rk4}) EXPECT_EQ(parse_scheme(to_string(s)), s);
  EXPECT_FALSE(parse_scheme("rk45").has_value());
}

TEST(Integrate, ConstantFieldExactForEveryScheme) {
  const auto c = VelocityOracle::function([](double, const Vec&) { return Vec::Constant(2, 3.0); });
  for (auto s : {Scheme::euler, Scheme::midpoint, Scheme::rk4}) {
    const auto tr = integrate(c, Vec::Zero(2), make_time_grid(7), s);
    EXPECT_NEAR(tr.states.back()[0], 3.0, 1e-14);
    EXPECT_NEAR(tr.states.back()[1], 3.0, 1e-14);
    EXPECT_EQ(tr.states.size(), 8u);
    EXPECT_EQ(tr.n_evals, 7 * evals_per_step(s));
  }
}

TEST(Integrate, ConvergenceOrders) {
  EXPECT_NEAR(std::log2(growth_error(Scheme::euler, 100) / growth_error(Scheme::euler, 200)), 1.0, 0.1);
  EXPECT_NEAR(std::log2(growth_error(Scheme::midpoint, 100) / growth_error(Scheme::midpoint, 200)), 2.0, 0.1);
  EXPECT_NEAR(std::log2(growth_error(Scheme::rk4, 20) / growth_error(Scheme::rk4, 40)), 4.0, 0.2);
}

TEST(Integrate, AnalyticDeterministicPathsAreStraight) {
  const auto oracle = VelocityOracle::analytic(gaussian_spec(affine_deterministic()));
  const auto tr = integrate(oracle, x1(1.0), make_time_grid(50), Scheme::rk4);
  EXPECT_NEAR(tr.states.back()[0], 2.0, 1e-10);
  EXPECT_NEAR(tr.states[25][0], 1.5, 1e-10);
  const auto st = straightness_deviation(tr);
  EXPECT_LT(st.chord_dev, 1e-10);
  EXPECT_LT(st.second_diff, 1e-6);
}

TEST(Integrate, NonFiniteStartRejected) {
  EXPECT_THROW(integrate(kGrowth, x1(NAN), make_time_grid(3), Scheme::rk4), InvalidArgument);
}

TEST(Integrate, RefusalCarriesPartialTrajectory) {
  const auto refusing = VelocityOracle::function([](double t, const Vec& x) -> Vec {
    if (t >= 0.5) throw LowDensity("no samples here", 0.0);
    return Vec(x);
  });
  try {
    integrate(refusing, x1(1.0), make_time_grid(4), Scheme::euler);
    FAIL() << "expected TrajectoryLeftSupport";
  } catch (const TrajectoryLeftSupport& e) {
    EXPECT_EQ(e.partial().states.size(), 3u);
  }
}

TEST(FlowMap, RecordsFailuresPerPoint) {
  const auto refusing = VelocityOracle::function([](double, const Vec& x) -> Vec {
    if (x[0] > 5.0) throw LowDensity("far", 0.0);
    return Vec::Zero(1);
  });
  const auto res = flow_map(refusing, {x1(0.0), x1(10.0), x1(1.0)}, make_time_grid(5), Scheme::rk4);
  EXPECT_EQ(res.failures(), 1u);
  EXPECT_TRUE(res.trajectories[0].has_value());
  EXPECT_FALSE(res.trajectories[1].has_value());
  EXPECT_FALSE(res.errors[1].empty());
}

TEST(Straightness, LineIsStraight) {
  const auto st = straightness_deviation(trajectory_of([](double t) { return 3 * t - 1; }, 10));
  EXPECT_LT(st.chord_dev, 1e-15);
  EXPECT_LT(st.second_diff, 1e-10);
}

TEST(Straightness, Parabola) {
  const auto st = straightness_deviation(trajectory_of([](double t) { return t * t; }, 10));
  EXPECT_NEAR(st.chord_dev, 0.25, 1e-14);
  EXPECT_NEAR(st.second_diff, 2.0, 1e-9);
}

TEST(Straightness, TooShortRejected) {
  EXPECT_THROW(straightness_deviation(trajectory_of([](double t) { return t; }, 1)), InvalidArgument);
}

TEST(OneStep, ZeroForStraightFlow) {
  const auto oracle = VelocityOracle::analytic(gaussian_spec(affine_deterministic()));
  const auto r = one_step_error(oracle, {x1(-1.0), x1(0.5), x1(2.0)});
  EXPECT_LT(r.max, 1e-10);
  EXPECT_EQ(r.failures, 0u);
}

TEST(OneStep, GrowthField) {
  const auto r = one_step_error(kGrowth, {x1(1.0)});
  EXPECT_NEAR(r.max, std::exp(1.0) - 2.0, 1e-9);
}

TEST(Tabulated, LinearFieldInterpolatedExactly) {
  const auto g = SpatialGrid::uniform({{-2.0, 2.0}}, 9);
  std::vector<GridField> slices;
  for (double t : {0.0, 1.0}) {
    GridField v(g, Rank::vector, t);
    for (std::size_t n = 0; n < g.size(); ++n) v.at(n) = (1 + t) * g.coords(n)[0];
    slices.push_back(v);
  }
  const auto oracle = VelocityOracle::tabulated(slices);
  EXPECT_NEAR(oracle(0.5, x1(0.3))[0], 1.5 * 0.3, 1e-14);
  EXPECT_NEAR(oracle(0.25, x1(-1.7))[0], 1.25 * -1.7, 1e-14);
  EXPECT_NEAR(oracle(0.0, x1(5.0))[0], 2.0, 1e-14);  // clamped to the box
}

TEST(KernelField, DeterministicVelocityAndExcursions) {
  const auto spec = affine_deterministic();
  auto field = std::make_shared<KernelVelocityField>(spec, process_endpoints(spec, 20000, 3), KernelConfig{});
  const auto oracle = VelocityOracle::kernel(field);
  EXPECT_NEAR(oracle(0.5, x1(0.6))[0], 0.6 / 1.5, 0.03);
  EXPECT_EQ(field->excursions(), 0u);
  oracle(0.5, x1(50.0));
  EXPECT_EQ(field->excursions(), 1u);
}

TEST(EnergyDistance, IdenticalSamplesZero) {
  const std::vector<Vec> a{x1(0.0), x1(1.0), x1(3.0)};
  EXPECT_NEAR(energy_distance(a, a), 0.0, 1e-14);
}

TEST(EnergyDistance, PointMasses) {
  EXPECT_NEAR(energy_distance({x1(0.0)}, {x1(1.0)}), 2.0, 1e-15);
  const std::vector<Vec> a{x1(0.0), x1(2.0)}, b{x1(1.0)};
  // 2 * 1 - (0 + 2 + 2 + 0) / 4 - 0 = 1.
  EXPECT_NEAR(energy_distance(a, b), 1.0, 1e-15);
}

TEST(EnergyDistance, SortedPathMatchesPairwise) {
  std::vector<Vec> a, b;
  for (int i = 0; i < 37; ++i) a.push_back(x1(std::sin(1.3 * i)));
  for (int i = 0; i < 23; ++i) b.push_back(x1(0.5 + std::cos(0.7 * i)));
  const double brute = 2.0 * detail::mean_pair_distance(a, b) - detail::mean_pair_distance(a, a) -
                       detail::mean_pair_distance(b, b);
  EXPECT_NEAR(energy_distance(a, b), brute, 1e-12);
}

TEST(EnergyDistance, DimensionMismatchRejected) {
  EXPECT_THROW(energy_distance({x1(0.0)}, {Vec::Zero(2)}), InvalidArgument);
  EXPECT_THROW(energy_distance({}, {x1(0.0)}), InvalidArgument);
}
