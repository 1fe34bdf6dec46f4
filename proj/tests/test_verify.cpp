#include <gtest/gtest.h>

#include <cmath>

#include "straightflow/verify.hpp"
#include "support.hpp"

using namespace straightflow;
using namespace sftest;

namespace {

AffineCheckOptions quick_affine() {
  AffineCheckOptions o;
  o.times = {0.3, 0.7};
  o.grid_nodes = 30;
  o.flow_points = 3;
  o.flow_steps = 20;
  return o;
}

DeterminismThresholds quick_detector() {
  DeterminismThresholds th;
  th.max_time_nodes = 3;
  th.trace_queries = 1000;
  return th;
}

}  // namespace

TEST(Verdict, Names) {
  EXPECT_EQ(to_string(Verdict::consistent), "consistent");
  EXPECT_EQ(to_string(Verdict::violated), "violated");
  EXPECT_EQ(to_string(Verdict::inconclusive), "inconclusive");
}

TEST(TheoremReport, JsonNullsNonFinite) {
  TheoremReport r;
  r.name = "x";
  r.metric("a", 1.5);
  r.metric("b", NAN);
  r.threshold("a", 2.0);
  EXPECT_EQ(r.at("a"), 1.5);
  EXPECT_FALSE(r.find("missing").has_value());
  const auto j = r.to_json();
  EXPECT_EQ(j["metrics"]["a"], 1.5);
  EXPECT_TRUE(j["metrics"]["b"].is_null());
  EXPECT_EQ(j["verdict"], "inconclusive");
}

TEST(AffineCheck, DeterministicCouplingConsistent) {
  const auto r = affine_straightness_check(affine_deterministic(), 20000, 7, quick_affine());
  EXPECT_EQ(r.verdict, Verdict::consistent);
  EXPECT_LT(r.at("trace_pi@t=0.3"), r.at("control_trace_pi@t=0.3") * 0.05);
  EXPECT_LT(r.at("flow_chord_dev"), 1e-10);
  EXPECT_LT(r.at("flow_one_step_error"), 1e-10);
}

TEST(AffineCheck, IndependentCouplingViolated) {
  const auto r = affine_straightness_check(affine_independent(), 20000, 7, quick_affine());
  EXPECT_EQ(r.verdict, Verdict::violated);
  EXPECT_GT(r.at("flow_one_step_error"), 0.1);
}

TEST(AffineCheck, SmallSampleInconclusive) {
  const auto r = affine_straightness_check(affine_deterministic(), 50, 7, quick_affine());
  EXPECT_EQ(r.verdict, Verdict::inconclusive);
}

TEST(AffineCheck, NonAffineRejected) {
  EXPECT_THROW(affine_straightness_check(trig_independent(), 1000, 1), InvalidArgument);
}

TEST(AffineCheck, Reproducible) {
  const auto a = affine_straightness_check(affine_independent(), 5000, 3, quick_affine()).to_json();
  const auto b = affine_straightness_check(affine_independent(), 5000, 3, quick_affine()).to_json();
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Geometric, TrigIndependentIdentityHolds) {
  const auto ens = sample_paths(trig_independent(), 40000, make_time_grid(4), 5);
  const auto r = geometric_report(ens, 2);
  EXPECT_EQ(r.verdict, Verdict::consistent);
  EXPECT_NEAR(r.at("E[X.acc]"), -kPi2Over4, 4 * r.at("E[X.acc]_se"));
  EXPECT_NEAR(r.at("-E[Tr Pi]"), -kPi2Over4, 0.1);
  EXPECT_EQ(r.at("identity_holds"), 1.0);
}

TEST(Geometric, TrigIdentityViolatesIdentity) {
  const auto ens = sample_paths(trig_identity(), 20000, make_time_grid(4), 5);
  const auto r = geometric_report(ens, 2);
  EXPECT_EQ(r.verdict, Verdict::violated);
  EXPECT_EQ(r.at("identity_holds"), 0.0);
  EXPECT_EQ(r.at("inequality1_holds"), 1.0);
}

TEST(Geometric, AffineIdentityTrivial) {
  // a = 0 and Pi = 0 for straight deterministic paths.
  const auto ens = sample_paths(affine_deterministic(), 20000, make_time_grid(4), 5);
  const auto r = geometric_report(ens, 2);
  EXPECT_EQ(r.at("E[X.acc]"), 0.0);
  EXPECT_LT(std::abs(r.at("-E[Tr Pi]")), 0.01);
}

TEST(Geometric, IndexOutOfRange) {
  const auto ens = sample_paths(affine_deterministic(), 100, make_time_grid(4), 5);
  EXPECT_THROW(geometric_report(ens, 5), InvalidArgument);
}

TEST(Determinism, DeterministicCouplingDetected) {
  const auto spec = affine_deterministic();
  const auto r = determinism_detector(sample_paths(spec, 10000, make_time_grid(10), 2), spec, quick_detector());
  EXPECT_EQ(r.verdict, Verdict::consistent);
  EXPECT_LT(r.at("ratio_to_control"), 0.05);
}

TEST(Determinism, IndependentCouplingRejected) {
  const auto spec = affine_independent();
  const auto r = determinism_detector(sample_paths(spec, 10000, make_time_grid(10), 2), spec, quick_detector());
  EXPECT_EQ(r.verdict, Verdict::violated);
  EXPECT_GT(r.at("ratio_to_control"), 0.5);
}

TEST(Determinism, LatentNoiseBreaksDeterminism) {
  // Deterministic endpoints, but the latent term makes the velocity random given the position.
  const auto spec = ProcessSpec::latent(CouplingSpec::deterministic(normal(0, 1), scale_map(2.0)), 2.0);
  const auto r = determinism_detector(sample_paths(spec, 10000, make_time_grid(10), 2), spec, quick_detector());
  EXPECT_EQ(r.verdict, Verdict::violated);
}

TEST(Determinism, TooFewPathsInconclusive) {
  const auto spec = affine_deterministic();
  const auto r = determinism_detector(sample_paths(spec, 100, make_time_grid(10), 2), spec, quick_detector());
  EXPECT_EQ(r.verdict, Verdict::inconclusive);
}

TEST(Determinism, TooFewTimeNodesInconclusive) {
  const auto spec = affine_deterministic();
  const auto r = determinism_detector(sample_paths(spec, 1000, make_time_grid(2), 2), spec, quick_detector());
  EXPECT_EQ(r.verdict, Verdict::inconclusive);
}
