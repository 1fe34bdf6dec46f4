#pragma once

// Fixed-step integration of d/dt phi_t(x) = v_t(phi_t(x)) and straightness
// measures of the resulting trajectories.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "straightflow/calculus.hpp"
#include "straightflow/core.hpp"
#include "straightflow/estimate.hpp"
#include "straightflow/fields.hpp"
#include "straightflow/gaussian_oracle.hpp"
#include "straightflow/parallel.hpp"

namespace straightflow {

enum class Scheme { euler, midpoint, rk4 };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::euler: return "euler";
    case Scheme::midpoint: return "midpoint";
    case Scheme::rk4: return "rk4";
  }
  return "?";
}

inline std::optional<Scheme> parse_scheme(const std::string& s) {
  if (s == "euler") return Scheme::euler;
  if (s == "midpoint") return Scheme::midpoint;
  if (s == "rk4") return Scheme::rk4;
  return std::nullopt;
}

inline std::size_t evals_per_step(Scheme s) {
  switch (s) {
    case Scheme::euler: return 1;
    case Scheme::midpoint: return 2;
    case Scheme::rk4: return 4;
  }
  return 1;
}

// Velocity field estimated from an ensemble by kernel regression at any t.
// Slices are rebuilt from the endpoint draws on demand and cached; queries
// outside the 1%-99% quantile box of the slice are clamped onto it and
// counted as excursions. Safe to call from several threads.
class KernelVelocityField {
 public:
  KernelVelocityField(ProcessSpec spec, std::vector<EndpointSample> ends, KernelConfig cfg)
      : spec_(std::move(spec)), ends_(std::move(ends)), cfg_(cfg) {
    cfg_.validate();
  }

  Vec operator()(double t, const Vec& x) const {
    const auto entry = slice_for(t);
    Vec q = x;
    bool clamped = false;
    for (Eigen::Index j = 0; j < q.size(); ++j) {
      const auto& [lo, hi] = entry->box[static_cast<std::size_t>(j)];
      if (q[j] < lo || q[j] > hi) {
        q[j] = std::clamp(q[j], lo, hi);
        clamped = true;
      }
    }
    if (clamped) excursions_.fetch_add(1, std::memory_order_relaxed);
    return entry->estimator.conditional(q, Target::velocity).value;
  }

  std::size_t excursions() const { return excursions_.load(); }

 private:
  struct Entry {
    KernelEstimator estimator;
    Box box;
  };

  std::shared_ptr<const Entry> slice_for(double t) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(t);
    if (it != cache_.end()) return it->second;
    const auto slice = slice_at(spec_, ends_, t);
    auto entry = std::make_shared<const Entry>(Entry{KernelEstimator(slice, cfg_), quantile_box(slice)});
    if (cache_.size() > 4096) cache_.clear();
    cache_.emplace(t, entry);
    return entry;
  }

  ProcessSpec spec_;
  std::vector<EndpointSample> ends_;
  KernelConfig cfg_;
  mutable std::mutex mutex_;
  mutable std::map<double, std::shared_ptr<const Entry>> cache_;
  mutable std::atomic<std::size_t> excursions_{0};
};

struct VelocityOracle {
  enum class Source { analytic, kernel_regression, tabulated_grid };

  Source source = Source::analytic;
  std::function<Vec(double, const Vec&)> eval;

  Vec operator()(double t, const Vec& x) const { return eval(t, x); }

  static VelocityOracle analytic(const GaussianProcessSpec& s) {
    return {Source::analytic, [s](double t, const Vec& x) { return GaussianSlice(s, t).v(x); }};
  }

  // Any closed-form field, e.g. constants or test fields.
  static VelocityOracle function(std::function<Vec(double, const Vec&)> f) {
    return {Source::analytic, std::move(f)};
  }

  static VelocityOracle kernel(std::shared_ptr<const KernelVelocityField> field) {
    return {Source::kernel_regression, [field](double t, const Vec& x) { return (*field)(t, x); }};
  }

  // Vector fields at increasing times, interpolated multilinearly in space
  // and linearly in time. Queries are clamped to the grid box.
  static VelocityOracle tabulated(std::vector<GridField> slices) {
    if (slices.empty()) throw InvalidArgument("tabulated oracle needs at least one slice");
    for (const auto& s : slices) {
      if (s.rank() != Rank::vector) throw InvalidArgument("tabulated oracle needs vector fields");
      if (!s.grid().same_nodes(slices.front().grid())) throw InvalidArgument("tabulated slices differ in grid");
    }
    auto shared = std::make_shared<const std::vector<GridField>>(std::move(slices));
    return {Source::tabulated_grid, [shared](double t, const Vec& x) { return interpolate(*shared, t, x); }};
  }

 private:
  static Vec interpolate_space(const GridField& f, const Vec& x) {
    const auto& g = f.grid();
    const std::size_t d = g.dim();
    std::vector<std::size_t> base(d);
    std::vector<double> frac(d);
    for (std::size_t j = 0; j < d; ++j) {
      const auto& ax = g.axis(j);
      const double u = std::clamp((x[static_cast<Eigen::Index>(j)] - ax.lo) / ax.step, 0.0, static_cast<double>(ax.n - 1));
      base[j] = std::min(static_cast<std::size_t>(std::floor(u)), ax.n - 2);
      frac[j] = u - static_cast<double>(base[j]);
    }
    Vec out = Vec::Zero(static_cast<Eigen::Index>(f.comps()));
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
      double w = 1.0;
      std::size_t flat = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const bool up = (corner >> j) & 1u;
        w *= up ? frac[j] : 1.0 - frac[j];
        flat += (base[j] + (up ? 1 : 0)) * g.stride(j);
      }
      if (w != 0.0) out += w * f.vector(flat);
    }
    return out;
  }

  static Vec interpolate(const std::vector<GridField>& slices, double t, const Vec& x) {
    if (slices.size() == 1 || t <= slices.front().time()) return interpolate_space(slices.front(), x);
    if (t >= slices.back().time()) return interpolate_space(slices.back(), x);
    std::size_t k = 1;
    while (slices[k].time() < t) ++k;
    const double t0 = slices[k - 1].time(), t1 = slices[k].time();
    const double w = (t - t0) / (t1 - t0);
    return (1.0 - w) * interpolate_space(slices[k - 1], x) + w * interpolate_space(slices[k], x);
  }
};

struct Trajectory {
  TimeGrid grid;
  std::vector<Vec> states;
  Scheme scheme = Scheme::rk4;
  std::size_t n_evals = 0;
};

// Raised when the velocity oracle refuses a query along the path; carries
// the trajectory up to the last completed node.
class TrajectoryLeftSupport : public Error {
 public:
  TrajectoryLeftSupport(const std::string& what, Trajectory partial) : Error(what), partial_(std::move(partial)) {}
  const Trajectory& partial() const { return partial_; }

 private:
  Trajectory partial_;
};

inline Trajectory integrate(const VelocityOracle& oracle, const Vec& x0, const TimeGrid& grid, Scheme scheme) {
  grid.validate();
  if (!x0.allFinite()) throw InvalidArgument("integrate: initial point must be finite");
  Trajectory tr;
  tr.grid = grid;
  tr.scheme = scheme;
  tr.states.reserve(grid.size());
  tr.states.push_back(x0);
  Vec x = x0;
  try {
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
      const double t = grid.nodes[k];
      const double h = grid.nodes[k + 1] - t;
      switch (scheme) {
        case Scheme::euler: {
          x = x + h * oracle(t, x);
          break;
        }
        case Scheme::midpoint: {
          const Vec k1 = oracle(t, x);
          x = x + h * oracle(t + 0.5 * h, Vec(x + 0.5 * h * k1));
          break;
        }
        case Scheme::rk4: {
          const Vec k1 = oracle(t, x);
          const Vec k2 = oracle(t + 0.5 * h, Vec(x + 0.5 * h * k1));
          const Vec k3 = oracle(t + 0.5 * h, Vec(x + 0.5 * h * k2));
          const Vec k4 = oracle(t + h, Vec(x + h * k3));
          x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
          break;
        }
      }
      tr.n_evals += evals_per_step(scheme);
      if (!x.allFinite()) throw NonFiniteInput("integrate: state became non-finite");
      tr.states.push_back(x);
    }
  } catch (const LowDensity& e) {
    throw TrajectoryLeftSupport(std::string("trajectory left the estimator support: ") + e.what(), tr);
  }
  return tr;
}

struct FlowMapResult {
  std::vector<std::optional<Trajectory>> trajectories;  // same order as the input points
  std::vector<std::string> errors;                      // empty string where the point succeeded

  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(errors.begin(), errors.end(), [](const auto& e) { return !e.empty(); }));
  }
};

inline FlowMapResult flow_map(const VelocityOracle& oracle, const std::vector<Vec>& points, const TimeGrid& grid,
                              Scheme scheme) {
  FlowMapResult out;
  out.trajectories.resize(points.size());
  out.errors.resize(points.size());
  parallel_for(points.size(), [&](std::size_t i) {
    try {
      out.trajectories[i] = integrate(oracle, points[i], grid, scheme);
    } catch (const Error& e) {
      out.errors[i] = e.what();
    }
  });
  return out;
}

struct Straightness {
  double chord_dev = 0.0;    // max distance to the chord between the endpoints
  double second_diff = 0.0;  // max |x_{k+1} - 2 x_k + x_{k-1}| / step^2
};

inline Straightness straightness_deviation(const Trajectory& tr) {
  const std::size_t K = tr.states.size();
  if (K < 3 || tr.grid.size() != K) throw InvalidArgument("straightness_deviation: need at least three nodes");
  Straightness s;
  const Vec& first = tr.states.front();
  const Vec& last = tr.states.back();
  for (std::size_t k = 0; k < K; ++k) {
    const double t = (tr.grid.nodes[k] - tr.grid.t0) / (tr.grid.t1 - tr.grid.t0);
    s.chord_dev = std::max(s.chord_dev, (tr.states[k] - ((1.0 - t) * first + t * last)).norm());
  }
  const double h2 = tr.grid.step * tr.grid.step;
  for (std::size_t k = 1; k + 1 < K; ++k)
    s.second_diff = std::max(s.second_diff, (tr.states[k + 1] - 2.0 * tr.states[k] + tr.states[k - 1]).norm() / h2);
  return s;
}

inline constexpr std::size_t kReferenceSteps = 400;

struct OneStepReport {
  std::vector<double> errors;  // NaN where integration failed
  double max = 0.0;
  double rms = 0.0;
  std::size_t failures = 0;
};

// |Euler-one-step endpoint - rk4 reference endpoint| per point.
inline OneStepReport one_step_error(const VelocityOracle& oracle, const std::vector<Vec>& points,
                                    std::size_t reference_steps = kReferenceSteps) {
  const TimeGrid one = make_time_grid(1);
  const TimeGrid ref = make_time_grid(reference_steps);
  OneStepReport r;
  r.errors.assign(points.size(), std::numeric_limits<double>::quiet_NaN());
  parallel_for(points.size(), [&](std::size_t i) {
    const Vec euler = integrate(oracle, points[i], one, Scheme::euler).states.back();
    const Vec exact = integrate(oracle, points[i], ref, Scheme::rk4).states.back();
    r.errors[i] = (euler - exact).norm();
  });
  double sq = 0.0;
  std::size_t ok = 0;
  for (double e : r.errors) {
    if (!std::isfinite(e)) {
      ++r.failures;
      continue;
    }
    r.max = std::max(r.max, e);
    sq += e * e;
    ++ok;
  }
  r.rms = ok ? std::sqrt(sq / static_cast<double>(ok)) : 0.0;
  return r;
}

namespace detail {

// sum_{i,j} |a_i - a_j| for sorted a.
inline double within_abs_sum(const std::vector<double>& a) {
  double s = 0.0;
  const double n = static_cast<double>(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * (2.0 * static_cast<double>(k) + 1.0 - n);
  return 2.0 * s;
}

// sum_{i,j} |a_i - b_j| for sorted a and b.
inline double cross_abs_sum(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> prefix(b.size() + 1, 0.0);
  for (std::size_t j = 0; j < b.size(); ++j) prefix[j + 1] = prefix[j] + b[j];
  const double total = prefix.back();
  double s = 0.0;
  std::size_t below = 0;
  for (double x : a) {
    while (below < b.size() && b[below] < x) ++below;
    const double nb = static_cast<double>(below);
    s += x * nb - prefix[below] + (total - prefix[below]) - x * (static_cast<double>(b.size()) - nb);
  }
  return s;
}

inline double mean_pair_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  std::vector<double> rows(a.size(), 0.0);
  parallel_for(a.size(), [&](std::size_t i) {
    double s = 0.0;
    for (const auto& y : b) s += (a[i] - y).norm();
    rows[i] = s;
  });
  return std::accumulate(rows.begin(), rows.end(), 0.0) / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace detail

// V-statistic 2 E|A - B| - E|A - A'| - E|B - B'|.
inline double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("energy_distance: samples must be non-empty");
  const auto d = a.front().size();
  for (const auto& x : a)
    if (x.size() != d) throw InvalidArgument("energy_distance: dimension mismatch");
  for (const auto& x : b)
    if (x.size() != d) throw InvalidArgument("energy_distance: dimension mismatch");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  if (d == 1) {
    std::vector<double> sa(a.size()), sb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) sa[i] = a[i][0];
    for (std::size_t i = 0; i < b.size(); ++i) sb[i] = b[i][0];
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    return 2.0 * detail::cross_abs_sum(sa, sb) / (na * nb) - detail::within_abs_sum(sa) / (na * na) -
           detail::within_abs_sum(sb) / (nb * nb);
  }
  return 2.0 * detail::mean_pair_distance(a, b) - detail::mean_pair_distance(a, a) - detail::mean_pair_distance(b, b);
}

}  // namespace straightflow
