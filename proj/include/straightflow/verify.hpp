#pragma once

// Theorem-level harnesses: affine straightness vs determinism of the
// coupling, the trace / radial-acceleration identity, and a permutation-
// calibrated determinism detector. Every verdict is derived from measured
// quantities against thresholds recorded in the report.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "straightflow/calculus.hpp"
#include "straightflow/core.hpp"
#include "straightflow/estimate.hpp"
#include "straightflow/fields.hpp"
#include "straightflow/flow.hpp"
#include "straightflow/gaussian_oracle.hpp"
#include "straightflow/serialization.hpp"

namespace straightflow {

enum class Verdict { consistent, violated, inconclusive };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::consistent: return "consistent";
    case Verdict::violated: return "violated";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

struct TheoremReport {
  std::string name;
  json inputs = json::object();
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::pair<std::string, double>> thresholds;
  Verdict verdict = Verdict::inconclusive;
  std::vector<std::string> notes;

  void metric(const std::string& key, double value) { metrics.emplace_back(key, value); }
  void threshold(const std::string& key, double value) { thresholds.emplace_back(key, value); }

  std::optional<double> find(const std::string& key) const {
    for (const auto& [k, v] : metrics)
      if (k == key) return v;
    for (const auto& [k, v] : thresholds)
      if (k == key) return v;
    return std::nullopt;
  }
  double at(const std::string& key) const {
    const auto v = find(key);
    if (!v) throw InvalidArgument("report has no quantity '" + key + "'");
    return *v;
  }

  json to_json() const {
    auto number = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
    json m = json::object(), th = json::object();
    for (const auto& [k, v] : metrics) m[k] = number(v);
    for (const auto& [k, v] : thresholds) th[k] = number(v);
    return json{{"name", name}, {"inputs", inputs}, {"metrics", m}, {"thresholds", th},
                {"verdict", to_string(verdict)}, {"notes", notes}};
  }
};

namespace detail {

inline std::string time_key(const std::string& base, double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s@t=%.3g", base.c_str(), t);
  return buf;
}

// Same marginals, pairing destroyed: x1 (and nothing else) is permuted.
inline std::vector<EndpointSample> shuffled_pairing(std::vector<EndpointSample> ends, std::uint64_t seed) {
  std::vector<std::size_t> perm(ends.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto eng = stream_for(seed, 0, 2);
  std::shuffle(perm.begin(), perm.end(), eng);
  std::vector<Vec> x1(ends.size());
  for (std::size_t i = 0; i < ends.size(); ++i) x1[i] = ends[perm[i]].x1;
  for (std::size_t i = 0; i < ends.size(); ++i) ends[i].x1 = std::move(x1[i]);
  return ends;
}

// Endpoint draws behind an ensemble; recovered from the path when the
// ensemble was loaded from disk.
inline std::vector<EndpointSample> recover_endpoints(const PathEnsemble& ens, const ProcessSpec& spec) {
  if (!ens.endpoints().empty()) return ens.endpoints();
  const std::size_t K = ens.nodes();
  std::vector<EndpointSample> ends(ens.paths());
  std::size_t kz = 0;
  double gz = 0.0;
  if (spec.gamma) {
    for (std::size_t k = 1; k + 1 < K; ++k) {
      const double g = std::abs(spec.gamma->value(ens.grid().nodes[k]));
      if (g > gz) gz = g, kz = k;
    }
    if (gz == 0.0) throw InvalidArgument("latent process needs an interior node to recover the latent draws");
  }
  for (std::size_t i = 0; i < ens.paths(); ++i) {
    ends[i].x0 = ens.position(i, 0);
    ends[i].x1 = ens.position(i, K - 1);
    if (spec.gamma) {
      const double t = ens.grid().nodes[kz];
      ends[i].z = Vec((ens.position(i, kz) - spec.alpha.value(t) * ends[i].x0 - spec.beta.value(t) * ends[i].x1) /
                      spec.gamma->value(t));
    }
  }
  return ends;
}

inline double mean_of(const RowMat& a, const RowMat& b, bool dot_with_b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) s += dot_with_b ? a.row(i).dot(b.row(i)) : a.row(i).squaredNorm();
  return s / static_cast<double>(a.rows());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Affine straightness check

struct AffineCheckOptions {
  std::vector<double> times{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t trace_queries = 2000;   // sample points used for E[Tr Pi]
  double control_ratio = 0.05;        // threshold = ratio * shuffled-pairing control
  double absolute_floor = 1e-6;       // ... but never below this
  std::size_t grid_nodes = 60;        // per axis, balance residual grid
  double balance_time = 0.5;
  double balance_tolerance = 0.15;    // informational
  std::size_t flow_points = 5;
  std::size_t flow_steps = 50;
  double max_refused_fraction = 0.2;
  std::size_t min_paths = 200;
  KernelConfig kernel{};
};

inline TheoremReport affine_straightness_check(const ProcessSpec& spec, std::size_t n, std::uint64_t seed,
                                               const AffineCheckOptions& opt = {}) {
  spec.validate();
  if (!spec.is_affine()) throw InvalidArgument("affine_straightness_check needs an affine process (1-t, t, no latent)");
  if (n < 2) throw InvalidArgument("affine_straightness_check needs n >= 2");
  opt.kernel.validate();

  TheoremReport r;
  r.name = "affine_straightness";
  r.inputs = json{{"spec_digest", spec_digest(spec)}, {"seed", seed}, {"n", n}, {"dim", spec.dim()},
                  {"trace_queries", opt.trace_queries}, {"grid_nodes", opt.grid_nodes}};
  r.notes.push_back("E[Tr Pi_t] is estimated as the mean of |dX - v_hat(X)|^2 (leave-one-out kernel regression), "
                    "equal to E|dX|^2 - E|v(X)|^2 by the law of total variance");
  r.notes.push_back("thresholds: control_ratio times the same statistic on a shuffled-pairing control with the "
                    "same marginals, N, and bandwidth rule");

  const auto ends = process_endpoints(spec, n, seed);
  const auto control = detail::shuffled_pairing(ends, seed);

  bool inconclusive = n < opt.min_paths;
  if (inconclusive) r.notes.push_back("sample size below min_paths");
  bool all_below = true;
  double worst = 0.0;
  for (double t : opt.times) {
    const KernelEstimator est(slice_at(spec, ends, t), opt.kernel);
    const KernelEstimator ctl(slice_at(spec, control, t), opt.kernel);
    const auto tr = expected_reynolds_trace(est, opt.trace_queries);
    const auto tc = expected_reynolds_trace(ctl, opt.trace_queries);
    const double thr = std::max(opt.control_ratio * tc.mean, opt.absolute_floor);
    r.metric(detail::time_key("trace_pi", t), tr.mean);
    r.metric(detail::time_key("trace_pi_se", t), tr.standard_error);
    r.metric(detail::time_key("control_trace_pi", t), tc.mean);
    r.metric(detail::time_key("refused_fraction", t), tr.refused_fraction());
    r.threshold(detail::time_key("trace_pi", t), thr);
    if (tr.refused_fraction() > opt.max_refused_fraction || tc.refused_fraction() > opt.max_refused_fraction ||
        tr.used < 2 || tc.used < 2)
      inconclusive = true;
    if (!(tr.mean <= thr)) all_below = false;
    worst = std::max(worst, tc.mean > 0.0 ? tr.mean / tc.mean : 0.0);
  }
  r.metric("max_trace_ratio_to_control", worst);

  // Balance law on estimated fields at one time slice.
  {
    const auto slice = slice_at(spec, ends, opt.balance_time);
    try {
      const KernelEstimator est(slice, opt.kernel);
      const auto grid = SpatialGrid::uniform(quantile_box(slice), opt.grid_nodes);
      const auto f = tabulate_estimate(est, grid);
      const double refused = refused_fraction(f);
      r.metric("balance_refused_fraction", refused);
      if (refused > opt.max_refused_fraction) inconclusive = true;
      const auto b = balance_residual(f.rho, f.Pi, f.a);
      r.metric("balance_max_abs", b.max_abs);
      r.metric("balance_rms", b.rms);
      r.metric("balance_relative", b.relative);
      r.threshold("balance_relative", opt.balance_tolerance);
      // a vanishes for affine processes, so the balance law reads
      // div(rho Pi) = 0; measure it against the momentum-flux scale.
      const auto flux = grid_divergence_matrix(multiply(f.rho, f.Sigma));
      double sq = 0.0;
      std::size_t cnt = 0;
      for (std::size_t k = 0; k < flux.nodes(); ++k) {
        if (!b.residual.grid().admissible(k) || !flux.grid().admissible(k)) continue;
        sq += flux.vector(k).squaredNorm();
        ++cnt;
      }
      const double scale = cnt ? std::sqrt(sq / static_cast<double>(cnt)) : 0.0;
      r.metric("balance_flux_scale", scale);
      r.metric("balance_relative_to_flux", b.rms / std::max(scale, 1e-30));
    } catch (const Error& e) {
      r.notes.push_back(std::string("balance residual unavailable: ") + e.what());
      inconclusive = true;
    }
  }

  // Straightness of the flow from a few source points (informational).
  {
    std::optional<VelocityOracle> oracle;
    std::shared_ptr<const KernelVelocityField> field;
    try {
      oracle = VelocityOracle::analytic(gaussian_spec(spec));
      r.notes.push_back("flow indicators use the closed-form Gaussian velocity field");
    } catch (const CapabilityError&) {
      field = std::make_shared<KernelVelocityField>(spec, ends, opt.kernel);
      oracle = VelocityOracle::kernel(field);
      r.notes.push_back("flow indicators use the kernel-regression velocity field");
    }
    std::vector<Vec> points;
    for (std::size_t i = 0; i < std::min(opt.flow_points, ends.size()); ++i) points.push_back(ends[i].x0);
    const auto fm = flow_map(*oracle, points, make_time_grid(opt.flow_steps), Scheme::rk4);
    double chord = 0.0, second = 0.0, one_step = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!fm.trajectories[i]) continue;
      const auto s = straightness_deviation(*fm.trajectories[i]);
      chord = std::max(chord, s.chord_dev);
      second = std::max(second, s.second_diff);
      const Vec euler = points[i] + (*oracle)(0.0, points[i]);
      one_step = std::max(one_step, (euler - fm.trajectories[i]->states.back()).norm());
    }
    r.metric("flow_chord_dev", chord);
    r.metric("flow_second_diff", second);
    r.metric("flow_one_step_error", one_step);
    r.metric("flow_failures", static_cast<double>(fm.failures()));
    if (field) r.metric("flow_excursions", static_cast<double>(field->excursions()));
  }

  if (inconclusive) r.verdict = Verdict::inconclusive;
  else r.verdict = all_below ? Verdict::consistent : Verdict::violated;
  r.notes.push_back("verdict: consistent means E[Tr Pi_t] is below threshold at every time node, i.e. the data "
                    "agree with a deterministic coupling; balance and flow metrics are informational");
  return r;
}

// ---------------------------------------------------------------------------
// Trace identity and radial-acceleration inequalities at one time slice

struct GeometricOptions {
  std::size_t trace_queries = 4000;
  double bias_allowance = 0.01;     // identity tolerance adds this fraction of E|dX|^2
  double n_se = 3.0;
  double max_refused_fraction = 0.2;
  double resolution = 0.25;         // inconclusive if n_se * SE exceeds this fraction of the scale
  KernelConfig kernel{};
};

inline TheoremReport geometric_report(const PathEnsemble& ens, std::size_t t_index, const GeometricOptions& opt = {}) {
  if (t_index >= ens.nodes()) throw InvalidArgument("geometric_report: time index out of range");
  opt.kernel.validate();
  const auto s = ens.slice(t_index);
  const auto N = static_cast<double>(s.size());

  TheoremReport r;
  r.name = "geometric_identity";
  r.inputs = json{{"seed", ens.seed()}, {"n", ens.paths()}, {"nodes", ens.nodes()}, {"dim", ens.dim()},
                  {"t_index", t_index}, {"t", s.t}, {"trace_queries", opt.trace_queries}};

  double sxa = 0.0, sxa2 = 0.0;
  for (Eigen::Index i = 0; i < s.positions.rows(); ++i) {
    const double q = s.positions.row(i).dot(s.accelerations.row(i));
    sxa += q;
    sxa2 += q * q;
  }
  const double xa = sxa / N;
  const double xa_se = N > 1 ? std::sqrt(std::max(0.0, (sxa2 - N * xa * xa) / (N - 1.0)) / N) : 0.0;
  const double v2 = detail::mean_of(s.velocities, s.velocities, false);
  const double xx_tt = 2.0 * xa + 2.0 * v2;

  TraceEstimate tr;
  bool inconclusive = false;
  try {
    const KernelEstimator est(s, opt.kernel);
    tr = expected_reynolds_trace(est, opt.trace_queries);
  } catch (const Error& e) {
    r.notes.push_back(std::string("trace estimate unavailable: ") + e.what());
    inconclusive = true;
  }
  if (tr.used < 2 || tr.refused_fraction() > opt.max_refused_fraction) inconclusive = true;

  const double gap = xa + tr.mean;
  const double gap_se = std::hypot(xa_se, tr.standard_error);
  const double tol = opt.n_se * gap_se + opt.bias_allowance * v2;

  r.metric("E[X.acc]", xa);
  r.metric("E[X.acc]_se", xa_se);
  r.metric("-E[Tr Pi]", -tr.mean);
  r.metric("E[Tr Pi]_se", tr.standard_error);
  r.metric("E[|vel|^2]", v2);
  r.metric("E[d2/dt2 |X|^2]", xx_tt);
  r.metric("2E[|vel|^2]", 2.0 * v2);
  r.metric("identity_gap", gap);
  r.metric("identity_gap_se", gap_se);
  r.metric("inequality1_margin", -xa);
  r.metric("inequality2_margin", 2.0 * v2 - xx_tt);
  r.metric("refused_fraction", tr.refused_fraction());
  r.threshold("identity_gap_abs", tol);
  r.threshold("inequality1_slack", opt.n_se * xa_se);
  r.threshold("inequality2_slack", 2.0 * opt.n_se * xa_se);

  const bool identity_ok = std::abs(gap) <= tol;
  const bool ineq1_ok = xa <= opt.n_se * xa_se;
  const bool ineq2_ok = xx_tt <= 2.0 * v2 + 2.0 * opt.n_se * xa_se;
  r.metric("identity_holds", identity_ok ? 1.0 : 0.0);
  r.metric("inequality1_holds", ineq1_ok ? 1.0 : 0.0);
  r.metric("inequality2_holds", ineq2_ok ? 1.0 : 0.0);

  const double scale = std::abs(xa) + std::abs(tr.mean) + v2;
  if (opt.n_se * gap_se > opt.resolution * scale) {
    r.notes.push_back("standard errors too large to resolve the identity at this sample size");
    inconclusive = true;
  }

  r.notes.push_back("identity: E[X.acc] = -E[Tr Pi]; inequality 1: E[X.acc] <= 0; inequality 2: "
                    "E[d2/dt2 |X|^2] <= 2E[|vel|^2]");
  r.notes.push_back("these are consistency checks conditioned on the process satisfying the balance law "
                    "div(rho Pi) = rho a; a violated verdict means the ensemble is inconsistent with that law");
  r.notes.push_back("E[Tr Pi] is the leave-one-out kernel estimate of E|dX - v(X)|^2 on the first trace_queries "
                    "samples; identity tolerance = n_se * SE + bias_allowance * E|dX|^2");
  if (inconclusive) r.verdict = Verdict::inconclusive;
  else r.verdict = identity_ok && ineq1_ok && ineq2_ok ? Verdict::consistent : Verdict::violated;
  return r;
}

// ---------------------------------------------------------------------------
// Determinism detector

struct DeterminismThresholds {
  double ratio = 0.05;               // deterministic iff integral <= ratio * control integral
  double absolute_floor = 1e-6;
  std::size_t trace_queries = 2000;
  std::size_t max_time_nodes = 9;    // interior nodes used, evenly subsampled
  double max_refused_fraction = 0.2;
  std::size_t min_paths = 200;
  KernelConfig kernel{};
};

inline TheoremReport determinism_detector(const PathEnsemble& ens, const ProcessSpec& spec,
                                          const DeterminismThresholds& th = {}) {
  th.kernel.validate();
  if (ens.dim() != spec.dim()) throw InvalidArgument("determinism_detector: ensemble and spec dimensions differ");
  TheoremReport r;
  r.name = "determinism_detector";
  r.inputs = json{{"spec_digest", spec_digest(spec)}, {"seed", ens.seed()}, {"n", ens.paths()},
                  {"nodes", ens.nodes()}, {"dim", ens.dim()}, {"trace_queries", th.trace_queries}};

  const std::size_t K = ens.nodes();
  bool inconclusive = ens.paths() < th.min_paths;
  if (inconclusive) r.notes.push_back("sample size below min_paths");
  if (K < 4) {
    r.notes.push_back("need at least two interior time nodes");
    r.verdict = Verdict::inconclusive;
    return r;
  }
  std::vector<std::size_t> nodes;
  const std::size_t interior = K - 2;
  const std::size_t m = std::min(th.max_time_nodes, interior);
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t k = 1 + (m == 1 ? 0 : (j * (interior - 1)) / (m - 1));
    if (nodes.empty() || nodes.back() != k) nodes.push_back(k);
  }

  const auto control = detail::shuffled_pairing(detail::recover_endpoints(ens, spec), ens.seed());
  std::vector<double> ts, main_vals, ctl_vals;
  for (std::size_t k : nodes) {
    const double t = ens.grid().nodes[k];
    try {
      const KernelEstimator est(ens.slice(k), th.kernel);
      const KernelEstimator ctl(slice_at(spec, control, t), th.kernel);
      const auto a = expected_reynolds_trace(est, th.trace_queries);
      const auto b = expected_reynolds_trace(ctl, th.trace_queries);
      if (a.refused_fraction() > th.max_refused_fraction || b.refused_fraction() > th.max_refused_fraction ||
          a.used < 2 || b.used < 2)
        inconclusive = true;
      ts.push_back(t);
      main_vals.push_back(a.mean);
      ctl_vals.push_back(b.mean);
      r.metric(detail::time_key("trace_pi", t), a.mean);
      r.metric(detail::time_key("control_trace_pi", t), b.mean);
    } catch (const Error& e) {
      r.notes.push_back(std::string("slice skipped: ") + e.what());
      inconclusive = true;
    }
  }
  auto trapezoid = [&](const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t j = 1; j < y.size(); ++j) s += 0.5 * (y[j] + y[j - 1]) * (ts[j] - ts[j - 1]);
    return s;
  };
  const double I = ts.size() >= 2 ? trapezoid(main_vals) : std::numeric_limits<double>::quiet_NaN();
  const double C = ts.size() >= 2 ? trapezoid(ctl_vals) : std::numeric_limits<double>::quiet_NaN();
  const double thr = std::max(th.ratio * C, th.absolute_floor);
  r.metric("trace_integral", I);
  r.metric("control_trace_integral", C);
  r.metric("ratio_to_control", C > 0.0 ? I / C : std::numeric_limits<double>::quiet_NaN());
  r.threshold("trace_integral", thr);
  r.threshold("ratio", th.ratio);
  if (!(std::isfinite(I) && std::isfinite(C))) inconclusive = true;
  r.notes.push_back("trapezoid integral of E[Tr Pi_t] over interior time nodes against a control with the same "
                    "marginals and shuffled endpoint pairing");
  r.notes.push_back("consistent means the coupling is detected as deterministic (Var(dX | X) vanishes)");
  if (inconclusive) r.verdict = Verdict::inconclusive;
  else r.verdict = I <= thr ? Verdict::consistent : Verdict::violated;
  return r;
}

}  // namespace straightflow
