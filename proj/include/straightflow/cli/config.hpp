#pragma once

// Experiment configuration: JSON parsing with line-precise errors, the run
// manifest, and atomic file output.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "straightflow/errors.hpp"
#include "straightflow/estimate.hpp"
#include "straightflow/fields.hpp"
#include "straightflow/flow.hpp"
#include "straightflow/serialization.hpp"

namespace straightflow::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit codes (stable contract).
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCapability = 3;
inline constexpr int kExitViolated = 4;
inline constexpr int kExitInconclusive = 5;

// Invalid configuration or flag; message is ready for the user.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Line lookup for JSON pointers. nlohmann does not keep source positions, so
// a small scanner walks the (already validated) text once and records the
// line on which every value, or the key introducing it, starts.

class JsonLocator {
 public:
  explicit JsonLocator(const std::string& text) : s_(text) {
    try {
      skip();
      value("");
    } catch (...) {
      // Best effort: lines recorded so far remain usable.
    }
  }

  // Line of the pointer, or of its nearest recorded ancestor.
  int line(std::string pointer) const {
    while (true) {
      auto it = lines_.find(pointer);
      if (it != lines_.end()) return it->second;
      if (pointer.empty()) return 1;
      pointer.erase(pointer.rfind('/'));
    }
  }

  static int line_of_offset(const std::string& text, std::size_t offset) {
    int line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    return line;
  }

 private:
  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }

  void skip() {
    while (i_ < s_.size()) {
      const char c = s_[i_];
      if (c == '\n') ++line_;
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') ++i_;
      else break;
    }
  }

  std::string string() {
    std::string out;
    ++i_;  // opening quote
    while (i_ < s_.size() && s_[i_] != '"') {
      if (s_[i_] == '\\') {
        ++i_;
        if (i_ < s_.size() && s_[i_] == 'u') {
          out += '?';
          i_ += 5;
          continue;
        }
      }
      if (i_ < s_.size()) out += s_[i_++];
    }
    ++i_;  // closing quote
    return out;
  }

  void value(const std::string& ptr) {
    if (!lines_.count(ptr)) lines_[ptr] = line_;
    if (i_ >= s_.size()) throw 0;
    const char c = s_[i_];
    if (c == '{') {
      ++i_;
      skip();
      if (s_[i_] == '}') {
        ++i_;
        return;
      }
      while (true) {
        skip();
        const int key_line = line_;
        const std::string child = ptr + "/" + escape(string());
        lines_[child] = key_line;
        skip();
        ++i_;  // colon
        skip();
        value(child);
        skip();
        if (s_[i_] == ',') {
          ++i_;
          continue;
        }
        ++i_;  // closing brace
        return;
      }
    }
    if (c == '[') {
      ++i_;
      skip();
      if (s_[i_] == ']') {
        ++i_;
        return;
      }
      for (std::size_t k = 0;; ++k) {
        skip();
        value(ptr + "/" + std::to_string(k));
        skip();
        if (s_[i_] == ',') {
          ++i_;
          continue;
        }
        ++i_;
        return;
      }
    }
    if (c == '"') {
      string();
      return;
    }
    while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != '}' && s_[i_] != ']' && s_[i_] != '\n' && s_[i_] != ' ')
      ++i_;
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int line_ = 1;
  std::map<std::string, int> lines_;
};

// ---------------------------------------------------------------------------
// Config

struct Tolerances {
  double continuity = 1e-3;
  double momentum = 1e-3;
  double balance = 1e-3;
  double material = 1e-3;
  double trace_ratio = 0.05;
  double one_step = 1e-6;
};

struct FlowSettings {
  Scheme scheme = Scheme::rk4;
  std::size_t steps = 100;
  std::optional<std::vector<Vec>> points;
  std::optional<std::string> points_file;
  bool use_grid = false;
  std::size_t grid_nodes = 11;
};

struct SweepSettings {
  std::string param;
  std::vector<double> values;
};

inline const std::vector<std::string>& sweep_params() {
  static const std::vector<std::string> p{"n", "seed", "bandwidth", "density_floor", "time", "trace_queries"};
  return p;
}

// Allowed keys per object, in schema order. The published JSON schema is
// checked against these in the test suite.
inline const std::map<std::string, std::vector<std::string>>& config_keys() {
  static const std::map<std::string, std::vector<std::string>> k{
      {"", {"process", "n", "seed", "seeds", "time_steps", "time", "times", "source", "theorem", "grid", "kernel",
            "tolerances", "trace_queries", "flow", "sweep", "output"}},
      {"grid", {"nodes", "box"}},
      {"kernel", {"bandwidth", "density_floor"}},
      {"tolerances", {"continuity", "momentum", "balance", "material", "trace_ratio", "one_step"}},
      {"flow", {"scheme", "steps", "points", "use_grid", "grid_nodes"}},
      {"sweep", {"param", "values"}},
  };
  return k;
}

struct ExperimentConfig {
  std::string path;
  std::string bytes;  // raw config text, hashed into the manifest
  ProcessSpec process;
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // sweep replicates; defaults to {seed}
  std::size_t time_steps = 100;
  double time = 0.5;
  std::vector<double> times{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::string source = "oracle";
  std::string theorem = "affine";
  std::size_t grid_nodes = 60;
  std::optional<Box> box;
  KernelConfig kernel;
  Tolerances tol;
  std::size_t trace_queries = 2000;
  FlowSettings flow;
  SweepSettings sweep;
  std::string output = "straightflow-out";
};

namespace detail {

inline void check_keys(const json& j, const std::string& at, const std::string& section) {
  if (!j.is_object()) throw FieldError(at.empty() ? "/" : at, "expected an object");
  const auto& allowed = config_keys().at(section);
  for (const auto& [k, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) throw FieldError(at + "/" + k, "unknown key");
}

inline std::uint64_t count(const json& j, const std::string& at, std::uint64_t min_value) {
  if (!j.is_number()) throw FieldError(at, "expected an integer");
  const double x = j.get<double>();
  if (!(x == std::floor(x)) || x < 0 || x > 1.8e19) throw FieldError(at, "expected a non-negative integer");
  const auto v = j.is_number_unsigned() ? j.get<std::uint64_t>() : static_cast<std::uint64_t>(x);
  if (v < min_value) throw FieldError(at, "must be >= " + std::to_string(min_value));
  return v;
}

inline double positive(const json& j, const std::string& at) {
  const double x = serial::number(j, at);
  if (!(x > 0.0)) throw FieldError(at, "must be > 0");
  return x;
}

inline double unit_time(const json& j, const std::string& at) {
  const double x = serial::number(j, at);
  if (x < 0.0 || x > 1.0) throw FieldError(at, "must lie in [0, 1]");
  return x;
}

inline std::string choice(const json& j, const std::string& at, const std::vector<std::string>& options) {
  if (!j.is_string()) throw FieldError(at, "expected a string");
  const auto s = j.get<std::string>();
  if (std::find(options.begin(), options.end(), s) == options.end()) {
    std::string list;
    for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
    throw FieldError(at, "unknown value '" + s + "' (" + list + ")");
  }
  return s;
}

inline std::vector<Vec> points_from(const json& j, const std::string& at, std::size_t d) {
  if (!j.is_array() || j.empty()) throw FieldError(at, "expected a non-empty array of points");
  std::vector<Vec> pts;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = at + "/" + std::to_string(i);
    Vec v = serial::vec_from(j[i], p);
    if (static_cast<std::size_t>(v.size()) != d) throw FieldError(p, "point dimension differs from the process");
    pts.push_back(std::move(v));
  }
  return pts;
}

inline void apply(ExperimentConfig& c, const json& j) {
  check_keys(j, "", "");
  c.process = process_from_json(serial::need(j, "", "process"), "/process");
  const std::size_t d = c.process.dim();
  if (j.contains("n")) c.n = count(j["n"], "/n", 1);
  if (j.contains("seed")) c.seed = count(j["seed"], "/seed", 0);
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    if (!s.is_array() || s.empty()) throw FieldError("/seeds", "expected a non-empty array of integers");
    for (std::size_t i = 0; i < s.size(); ++i) c.seeds.push_back(count(s[i], "/seeds/" + std::to_string(i), 0));
  }
  if (j.contains("time_steps")) c.time_steps = count(j["time_steps"], "/time_steps", 1);
  if (j.contains("time")) c.time = unit_time(j["time"], "/time");
  if (j.contains("times")) {
    const auto& t = j["times"];
    if (!t.is_array() || t.empty()) throw FieldError("/times", "expected a non-empty array of times");
    c.times.clear();
    for (std::size_t i = 0; i < t.size(); ++i) c.times.push_back(unit_time(t[i], "/times/" + std::to_string(i)));
  }
  if (j.contains("source")) c.source = choice(j["source"], "/source", {"oracle", "estimate"});
  if (j.contains("theorem")) c.theorem = choice(j["theorem"], "/theorem", {"affine", "geometric", "determinism"});
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    check_keys(g, "/grid", "grid");
    if (g.contains("nodes")) c.grid_nodes = count(g["nodes"], "/grid/nodes", 3);
    if (g.contains("box")) {
      const auto& b = g["box"];
      if (!b.is_array() || b.size() != d) throw FieldError("/grid/box", "expected one [lo, hi] pair per dimension");
      Box box;
      for (std::size_t i = 0; i < d; ++i) {
        const std::string p = "/grid/box/" + std::to_string(i);
        const Vec lh = serial::vec_from(b[i], p);
        if (lh.size() != 2 || !(lh[1] > lh[0])) throw FieldError(p, "expected [lo, hi] with lo < hi");
        box.emplace_back(lh[0], lh[1]);
      }
      c.box = box;
    }
  }
  if (j.contains("kernel")) {
    const auto& k = j["kernel"];
    check_keys(k, "/kernel", "kernel");
    if (k.contains("bandwidth")) {
      const auto& b = k["bandwidth"];
      if (b.is_string()) {
        if (b.get<std::string>() != "silverman")
          throw FieldError("/kernel/bandwidth", "expected a positive number or \"silverman\"");
        c.kernel.bandwidth.reset();
      } else {
        c.kernel.bandwidth = positive(b, "/kernel/bandwidth");
      }
    }
    if (k.contains("density_floor")) {
      const double f = serial::number(k["density_floor"], "/kernel/density_floor");
      if (!(f >= 0.0)) throw FieldError("/kernel/density_floor", "must be >= 0");
      c.kernel.density_floor = f;
    }
  }
  if (j.contains("tolerances")) {
    const auto& t = j["tolerances"];
    check_keys(t, "/tolerances", "tolerances");
    auto tol = [&](const char* key, double& out) {
      if (t.contains(key)) out = positive(t[key], std::string("/tolerances/") + key);
    };
    tol("continuity", c.tol.continuity);
    tol("momentum", c.tol.momentum);
    tol("balance", c.tol.balance);
    tol("material", c.tol.material);
    tol("trace_ratio", c.tol.trace_ratio);
    tol("one_step", c.tol.one_step);
  }
  if (j.contains("trace_queries")) c.trace_queries = count(j["trace_queries"], "/trace_queries", 2);
  if (j.contains("flow")) {
    const auto& f = j["flow"];
    check_keys(f, "/flow", "flow");
    if (f.contains("scheme")) c.flow.scheme = *parse_scheme(choice(f["scheme"], "/flow/scheme", {"euler", "midpoint", "rk4"}));
    if (f.contains("steps")) c.flow.steps = count(f["steps"], "/flow/steps", 1);
    if (f.contains("points")) {
      if (f["points"].is_string()) c.flow.points_file = f["points"].get<std::string>();
      else c.flow.points = points_from(f["points"], "/flow/points", d);
    }
    if (f.contains("use_grid")) {
      if (!f["use_grid"].is_boolean()) throw FieldError("/flow/use_grid", "expected true or false");
      c.flow.use_grid = f["use_grid"].get<bool>();
    }
    if (f.contains("grid_nodes")) c.flow.grid_nodes = count(f["grid_nodes"], "/flow/grid_nodes", 1);
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    check_keys(s, "/sweep", "sweep");
    if (s.contains("param")) c.sweep.param = choice(s["param"], "/sweep/param", sweep_params());
    if (s.contains("values")) {
      const auto& v = s["values"];
      if (!v.is_array() || v.empty()) throw FieldError("/sweep/values", "expected a non-empty array of numbers");
      for (std::size_t i = 0; i < v.size(); ++i)
        c.sweep.values.push_back(serial::number(v[i], "/sweep/values/" + std::to_string(i)));
    }
  }
  if (j.contains("output")) {
    if (!j["output"].is_string() || j["output"].get<std::string>().empty())
      throw FieldError("/output", "expected a non-empty path string");
    c.output = j["output"].get<std::string>();
  }
}

}  // namespace detail

// Parses config text; errors carry "<path>:<line>: <pointer>: <message>".
inline ExperimentConfig parse_config(const std::string& text, const std::string& path = "<config>") {
  ExperimentConfig c;
  c.path = path;
  c.bytes = text;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const int line = JsonLocator::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError(path + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  try {
    detail::apply(c, j);
  } catch (const FieldError& e) {
    const JsonLocator loc(text);
    throw ConfigError(path + ":" + std::to_string(loc.line(e.pointer())) + ": " + e.pointer() + ": " + e.message());
  } catch (const Error& e) {
    throw ConfigError(path + ":1: " + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

// Reads points from a CSV file: one point per line, comma-separated
// coordinates; blank lines and lines starting with '#' are skipped.
inline std::vector<Vec> read_points_csv(const std::string& path, std::size_t d) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open points file");
  std::vector<Vec> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> xs;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        xs.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (xs.size() != d)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(d) + " coordinates");
    pts.push_back(Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(d)));
  }
  if (pts.empty()) throw ConfigError(path + ": no points");
  return pts;
}

// ---------------------------------------------------------------------------
// Output: manifest first, then result files, each written atomically.

inline std::string manifest_timestamp() {
  std::time_t t;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

class OutputDir {
 public:
  OutputDir(const ExperimentConfig& cfg, std::string command, json overrides)
      : dir_(cfg.output), cfg_(&cfg), command_(std::move(command)), overrides_(std::move(overrides)) {}

  const std::filesystem::path& dir() const { return dir_; }

  // Writes the manifest listing every file the command will produce.
  void begin(std::vector<std::string> files) {
    std::filesystem::create_directories(dir_);
    files_ = std::move(files);
    json m{{"tool", "straightflow"},
           {"version", kToolVersion},
           {"command", command_},
           {"config", cfg_->path},
           {"config_sha256", sha256_hex(cfg_->bytes)},
           {"timestamp", manifest_timestamp()},
           {"seed", cfg_->seed},
           {"flags", overrides_},
           {"files", files_}};
    write_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
  }

  void write(const std::string& name, const std::string& bytes) const {
    if (std::find(files_.begin(), files_.end(), name) == files_.end())
      throw Error("internal: " + name + " missing from the manifest");
    write_atomic(dir_ / name, bytes);
  }

 private:
  std::filesystem::path dir_;
  const ExperimentConfig* cfg_;
  std::string command_;
  json overrides_;
  std::vector<std::string> files_;
};

}  // namespace straightflow::cli
