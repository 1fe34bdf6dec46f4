#pragma once

// Tabulation of (rho, v, a, Sigma, Pi) on spatial grids, either from the
// Gaussian closed form or from kernel estimates, plus the default boxes.

#include <algorithm>
#include <utility>
#include <vector>

#include "straightflow/calculus.hpp"
#include "straightflow/core.hpp"
#include "straightflow/estimate.hpp"
#include "straightflow/gaussian_oracle.hpp"

namespace straightflow {

using Box = std::vector<std::pair<double, double>>;

struct FieldSet {
  GridField rho;
  GridField v;
  GridField a;
  GridField Sigma;
  GridField Pi;
};

// mean +- n_sd marginal standard deviations per axis.
inline Box oracle_box(const GaussianProcessSpec& s, double t, double n_sd = 3.0) {
  const auto m = marginal_moments(s, t);
  Box box;
  for (Eigen::Index j = 0; j < m.mean.size(); ++j) {
    const double sd = std::sqrt(std::max(m.cov(j, j), 0.0));
    box.emplace_back(m.mean[j] - n_sd * sd, m.mean[j] + n_sd * sd);
  }
  return box;
}

// Per-axis empirical quantile box of a slice.
inline Box quantile_box(const EnsembleSlice& s, double lo_q = 0.01, double hi_q = 0.99) {
  Box box;
  const auto n = s.positions.rows();
  if (n == 0) throw InvalidArgument("quantile_box: empty slice");
  for (Eigen::Index j = 0; j < s.positions.cols(); ++j) {
    std::vector<double> col(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = s.positions(i, j);
    std::sort(col.begin(), col.end());
    auto q = [&](double p) {
      const double pos = p * static_cast<double>(col.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, col.size() - 1);
      return col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]);
    };
    double a = q(lo_q), b = q(hi_q);
    if (!(b > a)) throw DegenerateData("quantile_box: slice has no spread along an axis");
    box.emplace_back(a, b);
  }
  return box;
}

inline FieldSet tabulate_oracle(const GaussianSlice& slice, const SpatialGrid& grid) {
  FieldSet f{GridField(grid, Rank::scalar, slice.t()), GridField(grid, Rank::vector, slice.t()),
             GridField(grid, Rank::vector, slice.t()), GridField(grid, Rank::matrix, slice.t()),
             GridField(grid, Rank::matrix, slice.t())};
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const auto fv = slice.fields(grid.coords(n));
    f.rho.at(n) = fv.rho;
    f.v.set(n, fv.v);
    f.a.set(n, fv.a);
    f.Sigma.set(n, fv.Sigma);
    f.Pi.set(n, fv.Pi);
  }
  return f;
}

inline FieldSet tabulate_oracle(const GaussianProcessSpec& s, double t, const SpatialGrid& grid) {
  return tabulate_oracle(GaussianSlice(s, t), grid);
}

// Nodes where the estimator refuses (kernel mass below the floor) hold NaN
// and are masked out.
inline FieldSet tabulate_estimate(const KernelEstimator& est, const SpatialGrid& grid) {
  const double t = est.time();
  FieldSet f{GridField(grid, Rank::scalar, t), GridField(grid, Rank::vector, t), GridField(grid, Rank::vector, t),
             GridField(grid, Rank::matrix, t), GridField(grid, Rank::matrix, t)};
  std::vector<unsigned char> refused(grid.size(), 0);
  parallel_for(grid.size(), [&](std::size_t n) {
    try {
      const auto e = est.estimate(grid.coords(n));
      f.rho.at(n) = e.rho_hat;
      f.v.set(n, e.v_hat);
      f.a.set(n, e.a_hat);
      f.Sigma.set(n, e.Sigma_hat);
      f.Pi.set(n, e.Pi_hat);
    } catch (const LowDensity&) {
      refused[n] = 1;
    }
  });
  for (std::size_t n = 0; n < grid.size(); ++n) {
    if (!refused[n]) continue;
    for (GridField* g : {&f.rho, &f.v, &f.a, &f.Sigma, &f.Pi}) g->grid().exclude(n);
  }
  return f;
}

// Fraction of interior nodes refused by the estimator.
inline double refused_fraction(const FieldSet& f) {
  std::size_t interior = 0, refused = 0;
  const auto& g = f.rho.grid();
  for (std::size_t n = 0; n < g.size(); ++n) {
    if (!g.interior(n)) continue;
    ++interior;
    if (!g.admissible(n)) ++refused;
  }
  return interior == 0 ? 1.0 : static_cast<double>(refused) / static_cast<double>(interior);
}

// Fields at t - h_t, t, t + h_t (or one-sided triples at the ends).
struct FieldTimeline {
  FieldSet minus;
  FieldSet center;
  FieldSet plus;
  double h_t = 0.0;
};

inline FieldTimeline oracle_timeline(const GaussianProcessSpec& s, double t, const SpatialGrid& grid, double h_t) {
  if (t - h_t < 0.0 || t + h_t > 1.0)
    throw InvalidArgument("field timeline needs t - h_t >= 0 and t + h_t <= 1");
  return {tabulate_oracle(s, t - h_t, grid), tabulate_oracle(s, t, grid), tabulate_oracle(s, t + h_t, grid), h_t};
}

// Estimated fields from the same endpoint draws at three nearby times. The
// bandwidth chosen at t is reused at t +- h_t so the time difference does not
// pick up a change of smoothing.
inline FieldTimeline estimate_timeline(const ProcessSpec& spec, const std::vector<EndpointSample>& ends, double t,
                                       const SpatialGrid& grid, double h_t, const KernelConfig& cfg) {
  if (t - h_t < 0.0 || t + h_t > 1.0)
    throw InvalidArgument("field timeline needs t - h_t >= 0 and t + h_t <= 1");
  const KernelEstimator center(slice_at(spec, ends, t), cfg);
  KernelConfig fixed = cfg;
  fixed.bandwidth = center.bandwidth();
  const KernelEstimator minus(slice_at(spec, ends, t - h_t), fixed);
  const KernelEstimator plus(slice_at(spec, ends, t + h_t), fixed);
  return {tabulate_estimate(minus, grid), tabulate_estimate(center, grid), tabulate_estimate(plus, grid), h_t};
}

struct DiagnosticSet {
  ResidualReport continuity;
  ResidualReport momentum;
  ResidualReport balance;
  ResidualReport material;
  GridField material_field;
};

inline DiagnosticSet diagnose_timeline(const FieldTimeline& tl, StencilOrder order = kDefaultStencil) {
  DiagnosticSet out;
  out.continuity = continuity_residual({tl.minus.rho, tl.center.rho, tl.plus.rho}, {tl.minus.v, tl.center.v, tl.plus.v},
                                       tl.h_t, order);
  out.momentum = momentum_residual({tl.minus.rho, tl.center.rho, tl.plus.rho}, {tl.minus.v, tl.center.v, tl.plus.v},
                                   tl.center.Sigma, tl.center.a, tl.h_t, order);
  out.balance = balance_residual(tl.center.rho, tl.center.Pi, tl.center.a, order);
  out.material_field = material_derivative(tl.minus.v, tl.center.v, tl.plus.v, tl.h_t, order);
  out.material = material_report(out.material_field, tl.center.v, tl.center.a);
  return out;
}

}  // namespace straightflow
