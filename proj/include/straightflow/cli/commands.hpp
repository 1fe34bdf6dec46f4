#pragma once

// straightflow <simulate|fields|diagnose|verify|flow|sweep> --config PATH [flags]
//
// Flags mirror config keys and take precedence over them. Exit codes:
// 0 ok/consistent, 2 config error, 3 capability error, 4 violated,
// 5 inconclusive, 1 any other failure.

#include <charconv>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "straightflow/calculus.hpp"
#include "straightflow/cli/config.hpp"
#include "straightflow/core.hpp"
#include "straightflow/estimate.hpp"
#include "straightflow/fields.hpp"
#include "straightflow/flow.hpp"
#include "straightflow/gaussian_oracle.hpp"
#include "straightflow/verify.hpp"

namespace straightflow::cli {

struct Flags {
  std::string config;
  std::optional<std::string> output;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n;
  std::optional<std::size_t> time_steps;
  std::optional<std::string> bandwidth;
  std::optional<std::size_t> grid_nodes;
  std::optional<std::size_t> trace_queries;
  std::optional<std::string> source;
  std::optional<double> time;
  std::optional<std::string> theorem;
  std::optional<std::string> points;
  bool grid = false;
  std::optional<std::string> scheme;
  std::optional<std::size_t> steps;
  std::optional<std::string> param;
  std::optional<std::string> values;
};

// Applies flags over the config; returns the overrides for the manifest.
inline json apply_flags(ExperimentConfig& c, const Flags& f) {
  json o = json::object();
  auto bad = [](const std::string& flag, const std::string& msg) { throw ConfigError(flag + ": " + msg); };
  if (f.output) c.output = *f.output, o["output"] = *f.output;
  if (f.seed) c.seed = *f.seed, o["seed"] = *f.seed;
  if (f.n) {
    if (*f.n < 1) bad("--n", "must be >= 1");
    c.n = *f.n, o["n"] = *f.n;
  }
  if (f.time_steps) {
    if (*f.time_steps < 1) bad("--time-steps", "must be >= 1");
    c.time_steps = *f.time_steps, o["time_steps"] = *f.time_steps;
  }
  if (f.bandwidth) {
    if (*f.bandwidth == "silverman") {
      c.kernel.bandwidth.reset();
    } else {
      double h = 0.0;
      try {
        h = std::stod(*f.bandwidth);
      } catch (const std::exception&) {
        bad("--bandwidth", "expected a positive number or 'silverman'");
      }
      if (!(h > 0.0)) bad("--bandwidth", "must be > 0");
      c.kernel.bandwidth = h;
    }
    o["bandwidth"] = *f.bandwidth;
  }
  if (f.grid_nodes) {
    if (*f.grid_nodes < 3) bad("--grid-nodes", "must be >= 3");
    c.grid_nodes = *f.grid_nodes, o["grid_nodes"] = *f.grid_nodes;
  }
  if (f.trace_queries) {
    if (*f.trace_queries < 2) bad("--trace-queries", "must be >= 2");
    c.trace_queries = *f.trace_queries, o["trace_queries"] = *f.trace_queries;
  }
  if (f.source) {
    if (*f.source != "oracle" && *f.source != "estimate") bad("--source", "unknown source '" + *f.source + "' (oracle, estimate)");
    c.source = *f.source, o["source"] = *f.source;
  }
  if (f.time) {
    if (!(*f.time >= 0.0 && *f.time <= 1.0)) bad("--time", "must lie in [0, 1]");
    c.time = *f.time, o["time"] = *f.time;
  }
  if (f.theorem) {
    if (*f.theorem != "affine" && *f.theorem != "geometric" && *f.theorem != "determinism")
      bad("--theorem", "unknown theorem '" + *f.theorem + "' (affine, geometric, determinism)");
    c.theorem = *f.theorem, o["theorem"] = *f.theorem;
  }
  if (f.points) c.flow.points_file = *f.points, c.flow.points.reset(), o["points"] = *f.points;
  if (f.grid) c.flow.use_grid = true, o["grid"] = true;
  if (f.scheme) {
    const auto s = parse_scheme(*f.scheme);
    if (!s) bad("--scheme", "unknown scheme '" + *f.scheme + "' (euler, midpoint, rk4)");
    c.flow.scheme = *s, o["scheme"] = *f.scheme;
  }
  if (f.steps) {
    if (*f.steps < 1) bad("--steps", "must be >= 1");
    c.flow.steps = *f.steps, o["steps"] = *f.steps;
  }
  if (f.param) {
    const auto& p = sweep_params();
    if (std::find(p.begin(), p.end(), *f.param) == p.end()) {
      std::string list;
      for (const auto& s : p) list += (list.empty() ? "" : ", ") + s;
      bad("--param", "unknown parameter '" + *f.param + "' (" + list + ")");
    }
    c.sweep.param = *f.param, o["param"] = *f.param;
  }
  if (f.values) {
    c.sweep.values.clear();
    std::stringstream ss(*f.values);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell.empty()) continue;
      try {
        std::size_t used = 0;
        c.sweep.values.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        bad("--values", "not a number: '" + cell + "'");
      }
    }
    o["values"] = *f.values;
  }
  return o;
}

namespace detail {

inline std::string num(double x) {
  if (!std::isfinite(x)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

inline json num_json(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline std::string field_csv(const GridField& f, const std::string& name) {
  std::ostringstream os;
  write_field_csv(os, f, name);
  return os.str();
}

inline json report_json(const ResidualReport& r, double tol) {
  json j{{"max_abs", num_json(r.max_abs)}, {"rms", num_json(r.rms)}, {"relative", num_json(r.relative)},
         {"reference", num_json(r.reference)}, {"nodes", r.nodes}};
  if (std::isfinite(r.flux_scale)) {
    j["flux_scale"] = num_json(r.flux_scale);
    j["relative_to_flux"] = num_json(r.relative_to_flux());
    j["reference_degenerate"] = r.reference_degenerate();
  }
  j["tolerance"] = tol;
  j["within_tolerance"] = r.within(tol);
  return j;
}

inline SpatialGrid field_grid(const ExperimentConfig& c, const Box& fallback) {
  return SpatialGrid::uniform(c.box ? *c.box : fallback, c.grid_nodes);
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_simulate(const ExperimentConfig& c, const json& overrides, std::ostream& out) {
  const auto ens = sample_paths(c.process, c.n, make_time_grid(c.time_steps), c.seed);
  std::ostringstream bin(std::ios::binary);
  write_ensemble(bin, ens);
  OutputDir dir(c, "simulate", overrides);
  dir.begin({"ensemble.sflw"});
  dir.write("ensemble.sflw", bin.str());
  out << "wrote " << (dir.dir() / "ensemble.sflw").string() << " (N=" << ens.paths() << ", K=" << ens.nodes()
      << ", d=" << ens.dim() << ")\n";
  return kExitOk;
}

inline int cmd_fields(const ExperimentConfig& c, const json& overrides, std::ostream& out) {
  std::optional<FieldSet> f;
  if (c.source == "oracle") {
    const GaussianSlice slice(gaussian_spec(c.process), c.time);
    f = tabulate_oracle(slice, detail::field_grid(c, oracle_box(gaussian_spec(c.process), c.time)));
  } else {
    const auto ends = process_endpoints(c.process, c.n, c.seed);
    const auto slice = slice_at(c.process, ends, c.time);
    const KernelEstimator est(slice, c.kernel);
    f = tabulate_estimate(est, detail::field_grid(c, quantile_box(slice)));
  }
  OutputDir dir(c, "fields", overrides);
  dir.begin({"rho.csv", "v.csv", "a.csv", "Sigma.csv", "Pi.csv"});
  dir.write("rho.csv", detail::field_csv(f->rho, "rho"));
  dir.write("v.csv", detail::field_csv(f->v, "v"));
  dir.write("a.csv", detail::field_csv(f->a, "a"));
  dir.write("Sigma.csv", detail::field_csv(f->Sigma, "Sigma"));
  dir.write("Pi.csv", detail::field_csv(f->Pi, "Pi"));
  out << "wrote fields at t=" << c.time << " (" << c.source << ") to " << dir.dir().string() << "\n";
  return kExitOk;
}

inline int cmd_diagnose(const ExperimentConfig& c, const json& overrides, std::ostream& out) {
  const bool oracle = c.source == "oracle";
  const double h_t = oracle ? kAnalyticTimeStep : 1e-3;
  json j{{"time", c.time}, {"source", c.source}, {"h_t", h_t}};
  std::vector<std::pair<std::string, std::string>> csvs;
  bool failed = false;

  std::optional<FieldTimeline> tl;
  try {
    if (oracle) {
      const auto g = gaussian_spec(c.process);
      tl = oracle_timeline(g, c.time, detail::field_grid(c, oracle_box(g, c.time)), h_t);
    } else {
      const auto ends = process_endpoints(c.process, c.n, c.seed);
      const auto grid = detail::field_grid(c, quantile_box(slice_at(c.process, ends, c.time)));
      tl = estimate_timeline(c.process, ends, c.time, grid, h_t, c.kernel);
      j["refused_fraction"] = refused_fraction(tl->center);
    }
  } catch (const CapabilityError&) {
    throw;
  } catch (const Error& e) {
    failed = true;
    for (const char* s : {"continuity", "momentum", "balance", "material"}) j[s] = json{{"error", e.what()}};
  }

  if (tl) {
    auto section = [&](const char* name, double tol, const std::function<ResidualReport()>& run) {
      try {
        const auto r = run();
        j[name] = detail::report_json(r, tol);
        csvs.emplace_back(std::string(name) + ".csv", detail::field_csv(r.residual, name));
      } catch (const Error& e) {
        failed = true;
        j[name] = json{{"error", e.what()}};
      }
    };
    const FieldTimeline& T = *tl;
    section("continuity", c.tol.continuity, [&] {
      return continuity_residual({T.minus.rho, T.center.rho, T.plus.rho}, {T.minus.v, T.center.v, T.plus.v}, T.h_t);
    });
    section("momentum", c.tol.momentum, [&] {
      return momentum_residual({T.minus.rho, T.center.rho, T.plus.rho}, {T.minus.v, T.center.v, T.plus.v},
                               T.center.Sigma, T.center.a, T.h_t);
    });
    section("balance", c.tol.balance, [&] { return balance_residual(T.center.rho, T.center.Pi, T.center.a); });
    section("material", c.tol.material, [&] {
      return material_report(material_derivative(T.minus.v, T.center.v, T.plus.v, T.h_t), T.center.v, T.center.a);
    });
  }

  std::vector<std::string> files{"diagnostics.json"};
  for (const auto& [name, _] : csvs) files.push_back(name);
  OutputDir dir(c, "diagnose", overrides);
  dir.begin(files);
  dir.write("diagnostics.json", j.dump(2) + "\n");
  for (const auto& [name, body] : csvs) dir.write(name, body);
  out << j.dump(2) << "\n";
  return failed ? kExitFailure : kExitOk;
}

inline int cmd_verify(const ExperimentConfig& c, const json& overrides, std::ostream& out) {
  TheoremReport r;
  if (c.theorem == "affine") {
    if (!c.process.is_affine()) throw ConfigError("/process/coefficients: the affine theorem needs affine coefficients");
    AffineCheckOptions o;
    o.times = c.times;
    o.trace_queries = c.trace_queries;
    o.control_ratio = c.tol.trace_ratio;
    o.grid_nodes = c.grid_nodes;
    o.balance_time = c.time;
    o.balance_tolerance = c.tol.balance;
    o.kernel = c.kernel;
    r = affine_straightness_check(c.process, c.n, c.seed, o);
  } else if (c.theorem == "geometric") {
    const auto ens = sample_paths(c.process, c.n, make_time_grid(c.time_steps), c.seed);
    GeometricOptions o;
    o.trace_queries = c.trace_queries;
    o.kernel = c.kernel;
    r = geometric_report(ens, ens.grid().nearest(c.time), o);
  } else {
    const auto ens = sample_paths(c.process, c.n, make_time_grid(c.time_steps), c.seed);
    DeterminismThresholds o;
    o.ratio = c.tol.trace_ratio;
    o.trace_queries = c.trace_queries;
    o.kernel = c.kernel;
    r = determinism_detector(ens, c.process, o);
  }
  OutputDir dir(c, "verify", overrides);
  dir.begin({"report.json"});
  const auto j = r.to_json();
  dir.write("report.json", j.dump(2) + "\n");
  out << j.dump(2) << "\n";
  switch (r.verdict) {
    case Verdict::consistent: return kExitOk;
    case Verdict::violated: return kExitViolated;
    case Verdict::inconclusive: return kExitInconclusive;
  }
  return kExitInconclusive;
}

inline std::vector<Vec> grid_points(const Box& box, std::size_t nodes) {
  std::vector<Vec> pts;
  const std::size_t d = box.size();
  std::vector<std::size_t> idx(d, 0);
  while (true) {
    Vec x(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) {
      const auto [lo, hi] = box[j];
      x[static_cast<Eigen::Index>(j)] =
          nodes == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(idx[j]) / static_cast<double>(nodes - 1);
    }
    pts.push_back(x);
    std::size_t j = 0;
    while (j < d && ++idx[j] == nodes) idx[j++] = 0;
    if (j == d) break;
  }
  return pts;
}

inline int cmd_flow(const ExperimentConfig& c, const json& overrides, std::ostream& out) {
  const std::size_t d = c.process.dim();
  std::optional<VelocityOracle> oracle;
  std::shared_ptr<const KernelVelocityField> field;
  std::vector<EndpointSample> ends;
  Box box;
  if (c.source == "oracle") {
    const auto g = gaussian_spec(c.process);
    oracle = VelocityOracle::analytic(g);
    box = oracle_box(g, 0.0);
  } else {
    ends = process_endpoints(c.process, c.n, c.seed);
    field = std::make_shared<KernelVelocityField>(c.process, ends, c.kernel);
    oracle = VelocityOracle::kernel(field);
    box = quantile_box(slice_at(c.process, ends, 0.0));
  }
  if (c.box) box = *c.box;

  std::vector<Vec> points;
  if (c.flow.points_file) points = read_points_csv(*c.flow.points_file, d);
  else if (c.flow.points) points = *c.flow.points;
  else if (c.flow.use_grid) points = grid_points(box, c.flow.grid_nodes);
  else {
    for (const auto& e : process_endpoints(c.process, std::min<std::size_t>(c.n, 100), c.seed)) points.push_back(e.x0);
  }

  const TimeGrid grid = make_time_grid(c.flow.steps);
  const auto fm = flow_map(*oracle, points, grid, c.flow.scheme);

  std::ostringstream csv;
  csv << "point,t";
  for (std::size_t j = 0; j < d; ++j) csv << ",x" << (j + 1);
  csv << "\n";
  json per = json::array();
  double chord_max = 0.0, second_max = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    json p{{"index", i}};
    if (!fm.trajectories[i]) {
      p["error"] = fm.errors[i];
      per.push_back(p);
      continue;
    }
    const auto& tr = *fm.trajectories[i];
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
      csv << i << "," << detail::num(tr.grid.nodes[k]);
      for (std::size_t j = 0; j < d; ++j) csv << "," << detail::num(tr.states[k][static_cast<Eigen::Index>(j)]);
      csv << "\n";
    }
    p["n_evals"] = tr.n_evals;
    if (tr.states.size() >= 3) {
      const auto s = straightness_deviation(tr);
      p["chord_dev"] = s.chord_dev;
      p["second_diff"] = s.second_diff;
      chord_max = std::max(chord_max, s.chord_dev);
      second_max = std::max(second_max, s.second_diff);
    }
    per.push_back(p);
  }

  json j{{"scheme", to_string(c.flow.scheme)}, {"steps", c.flow.steps},        {"source", c.source},
         {"points", points.size()},             {"failures", fm.failures()}, {"chord_dev_max", chord_max},
         {"second_diff_max", second_max}};
  bool failed = false;
  try {
    const auto os = one_step_error(*oracle, points, kReferenceSteps);
    j["one_step"] = json{{"max", detail::num_json(os.max)},     {"rms", detail::num_json(os.rms)},
                         {"failures", os.failures},              {"reference_steps", kReferenceSteps},
                         {"tolerance", c.tol.one_step},          {"within_tolerance", os.max <= c.tol.one_step},
                         {"errors", [&] {
                            json e = json::array();
                            for (double x : os.errors) e.push_back(detail::num_json(x));
                            return e;
                          }()}};
  } catch (const Error& e) {
    failed = true;
    j["one_step"] = json{{"error", e.what()}};
  }
  if (field) j["excursions"] = field->excursions();
  j["per_point"] = per;

  OutputDir dir(c, "flow", overrides);
  dir.begin({"trajectories.csv", "straightness.json"});
  dir.write("trajectories.csv", csv.str());
  dir.write("straightness.json", j.dump(2) + "\n");
  out << "flow: " << points.size() << " points, chord_dev_max=" << chord_max;
  if (j["one_step"].contains("max")) out << ", one_step_max=" << j["one_step"]["max"].dump();
  out << "\n";
  return failed ? kExitFailure : kExitOk;
}

// Velocity RMSE of the kernel estimate against the Gaussian oracle on nine
// points spanning mean +- 1.5 marginal sd along the first axis.
inline double velocity_rmse(const GaussianProcessSpec& g, const KernelEstimator& est, double t) {
  const GaussianSlice slice(g, t);
  const double sd = std::sqrt(slice.cov()(0, 0));
  double sq = 0.0;
  std::size_t used = 0;
  for (int k = -4; k <= 4; ++k) {
    Vec x = slice.mean();
    x[0] += 1.5 * sd * static_cast<double>(k) / 4.0;
    try {
      sq += (est.conditional(x, Target::velocity).value - slice.v(x)).squaredNorm();
      ++used;
    } catch (const LowDensity&) {
    }
  }
  return used ? std::sqrt(sq / static_cast<double>(used)) : std::numeric_limits<double>::quiet_NaN();
}

inline int cmd_sweep(const ExperimentConfig& c, const json& overrides, std::ostream& out) {
  if (c.sweep.param.empty()) throw ConfigError("--param: no sweep parameter given (flag or /sweep/param)");
  if (c.sweep.values.empty()) throw ConfigError("--values: the sweep needs at least one value");
  const std::string& p = c.sweep.param;
  auto integral = [&](double v, double lo) {
    if (!(v == std::floor(v)) || v < lo) throw ConfigError("--values: '" + detail::num(v) + "' is not a valid " + p);
    return static_cast<std::uint64_t>(v);
  };
  for (double v : c.sweep.values) {
    if (p == "n") integral(v, 1);
    else if (p == "seed") integral(v, 0);
    else if (p == "trace_queries") integral(v, 2);
    else if (p == "bandwidth" && !(v > 0.0)) throw ConfigError("--values: bandwidth must be > 0");
    else if (p == "density_floor" && !(v >= 0.0)) throw ConfigError("--values: density_floor must be >= 0");
    else if (p == "time" && !(v >= 0.0 && v <= 1.0)) throw ConfigError("--values: time must lie in [0, 1]");
  }

  std::optional<GaussianProcessSpec> g;
  try {
    g = gaussian_spec(c.process);
  } catch (const CapabilityError&) {
  }

  std::ostringstream csv;
  csv << "param,value,seed,metric,result\n";
  const bool seed_sweep = p == "seed";
  std::vector<std::uint64_t> seeds = c.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.seeds;
  for (double v : c.sweep.values) {
    ExperimentConfig run = c;
    if (p == "n") run.n = integral(v, 1);
    else if (p == "bandwidth") run.kernel.bandwidth = v;
    else if (p == "density_floor") run.kernel.density_floor = v;
    else if (p == "time") run.time = v;
    else if (p == "trace_queries") run.trace_queries = integral(v, 2);
    const auto run_seeds = seed_sweep ? std::vector<std::uint64_t>{integral(v, 0)} : seeds;
    for (auto seed : run_seeds) {
      std::vector<std::pair<std::string, double>> m;
      const auto ends = process_endpoints(run.process, run.n, seed);
      try {
        const KernelEstimator est(slice_at(run.process, ends, run.time), run.kernel);
        m.emplace_back("bandwidth", est.bandwidth());
        if (g) m.emplace_back("v_rmse", velocity_rmse(*g, est, run.time));
        const auto tr = expected_reynolds_trace(est, run.trace_queries);
        m.emplace_back("trace_pi", tr.mean);
        m.emplace_back("trace_pi_se", tr.standard_error);
        m.emplace_back("refused_fraction", tr.refused_fraction());
      } catch (const Error&) {
        m.emplace_back("trace_pi", std::numeric_limits<double>::quiet_NaN());
      }
      for (const auto& [name, value] : m)
        csv << p << "," << (seed_sweep ? std::string("-") : detail::num(v)) << "," << seed << "," << name << ","
            << detail::num(value) << "\n";
    }
  }
  OutputDir dir(c, "sweep", overrides);
  dir.begin({"sweep.csv"});
  dir.write("sweep.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"straightflow: stochastic interpolants, Reynolds stress and straight flows"};
  app.require_subcommand(1);
  Flags f;
  std::string which;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "experiment config (JSON)")->required();
    sub->add_option("--output", f.output, "output directory");
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--n", f.n, "number of sampled paths");
    sub->add_option("--time-steps", f.time_steps, "time grid steps");
    sub->add_option("--bandwidth", f.bandwidth, "kernel bandwidth or 'silverman'");
    sub->add_option("--grid-nodes", f.grid_nodes, "spatial grid nodes per axis");
    sub->add_option("--trace-queries", f.trace_queries, "sample points used for E[Tr Pi]");
  };
  auto* sim = app.add_subcommand("simulate", "sample a path ensemble");
  common(sim);
  auto* fld = app.add_subcommand("fields", "tabulate rho, v, a, Sigma, Pi on a grid");
  common(fld);
  fld->add_option("--source", f.source, "oracle | estimate");
  fld->add_option("--time", f.time, "time slice");
  auto* dia = app.add_subcommand("diagnose", "continuity, momentum, balance and material residuals");
  common(dia);
  dia->add_option("--source", f.source, "oracle | estimate");
  dia->add_option("--time", f.time, "time slice");
  auto* ver = app.add_subcommand("verify", "theorem harnesses");
  common(ver);
  ver->add_option("--theorem", f.theorem, "affine | geometric | determinism");
  ver->add_option("--time", f.time, "time slice (geometric, balance)");
  auto* flw = app.add_subcommand("flow", "integrate the flow ODE and measure straightness");
  common(flw);
  flw->add_option("--points", f.points, "CSV file of initial points");
  flw->add_flag("--grid", f.grid, "use a grid of initial points");
  flw->add_option("--scheme", f.scheme, "euler | midpoint | rk4");
  flw->add_option("--steps", f.steps, "integration steps");
  flw->add_option("--source", f.source, "oracle | estimate");
  auto* swp = app.add_subcommand("sweep", "parameter sweep, long-format CSV");
  common(swp);
  swp->add_option("--param", f.param, "parameter to sweep");
  swp->add_option("--values", f.values, "comma-separated values");
  swp->add_option("--time", f.time, "time slice");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "straightflow: " << e.what() << "\n";
    return kExitConfig;
  }
  for (auto* s : {sim, fld, dia, ver, flw, swp})
    if (s->parsed()) which = s->get_name();

  try {
    auto cfg = load_config(f.config);
    const json overrides = apply_flags(cfg, f);
    if (which == "simulate") return cmd_simulate(cfg, overrides, out);
    if (which == "fields") return cmd_fields(cfg, overrides, out);
    if (which == "diagnose") return cmd_diagnose(cfg, overrides, out);
    if (which == "verify") return cmd_verify(cfg, overrides, out);
    if (which == "flow") return cmd_flow(cfg, overrides, out);
    return cmd_sweep(cfg, overrides, out);
  } catch (const ConfigError& e) {
    err << "straightflow: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CapabilityError& e) {
    err << "straightflow: capability error: " << e.what() << "\n";
    return kExitCapability;
  } catch (const std::exception& e) {
    err << "straightflow: error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace straightflow::cli
