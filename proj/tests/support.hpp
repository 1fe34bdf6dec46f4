#pragma once

// Canonical processes shared by the unit and acceptance tests.

#include <cmath>
#include <numbers>

#include "straightflow/core.hpp"
#include "straightflow/fields.hpp"
#include "straightflow/gaussian_oracle.hpp"

namespace sftest {

using namespace straightflow;

inline GaussianLaw normal(double mean, double var) {
  return GaussianLaw{Vec::Constant(1, mean), Mat::Constant(1, 1, var)};
}

inline GaussianLaw normal2(Vec mean, Vec var) { return GaussianLaw{std::move(mean), var.asDiagonal()}; }

inline AffineMap scale_map(double a, double b = 0.0) { return AffineMap{Mat::Constant(1, 1, a), Vec::Constant(1, b)}; }

// X_t = (1-t) X0 + t 2 X0, X0 ~ N(0, 1).
inline ProcessSpec affine_deterministic() {
  return ProcessSpec::affine(CouplingSpec::deterministic(normal(0, 1), scale_map(2.0)));
}

inline ProcessSpec affine_independent(double m1 = 0.0, double v1 = 1.0) {
  return ProcessSpec::affine(CouplingSpec::independent(normal(0, 1), normal(m1, v1)));
}

inline ProcessSpec trig_independent() {
  return ProcessSpec::trig(CouplingSpec::independent(normal(0, 1), normal(0, 1)));
}

// X1 = X0: the trigonometric path bends although the coupling is trivial.
inline ProcessSpec trig_identity() {
  return ProcessSpec::trig(CouplingSpec::deterministic(normal(0, 1), scale_map(1.0)));
}

inline ProcessSpec affine_ot(const GaussianLaw& mu0, const GaussianLaw& mu1) {
  auto T = gaussian_ot_map(mu0.mean, mu0.cov, mu1.mean, mu1.cov);
  return ProcessSpec::affine(CouplingSpec::deterministic(mu0, std::move(T), mu1));
}

inline Box box1(double lo, double hi) { return Box{{lo, hi}}; }

inline constexpr double kPi2Over4 = std::numbers::pi * std::numbers::pi / 4.0;

}  // namespace sftest
