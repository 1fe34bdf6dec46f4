#pragma once

// JSON representation of process specs, config hashing.
//
//   process := { "coefficients": "affine" | "trig" | "latent",
//                "latent_scale": number,            (latent only)
//                "coupling": coupling }
//   coupling := { "kind": "independent" | "deterministic_map" | "gaussian_joint",
//                 "mu0": law, "mu1": law,
//                 "map": { "A": matrix, "b": vector } | "ot",
//                 "joint": { "mean": vector, "cov": matrix } }
//   law := { "family": "gaussian", "mean": vector, "cov": matrix }
//        | { "family": "mixture", "weights": vector, "components": [ {mean, cov}, ... ] }
//        | { "family": "empirical", "points": [ vector, ... ] }

#include <openssl/evp.h>

#include <cstdio>
#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "straightflow/core.hpp"
#include "straightflow/errors.hpp"
#include "straightflow/gaussian_oracle.hpp"

namespace straightflow {

using json = nlohmann::ordered_json;

// Schema violation at a JSON pointer.
class FieldError : public Error {
 public:
  FieldError(std::string pointer, const std::string& message)
      : Error(pointer + ": " + message), pointer_(std::move(pointer)), message_(message) {}
  const std::string& pointer() const { return pointer_; }
  const std::string& message() const { return message_; }

 private:
  std::string pointer_;
  std::string message_;
};

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace serial {

inline json vec_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline json mat_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

inline void only_keys(const json& j, const std::string& at, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw FieldError(at, "expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) throw FieldError(at + "/" + k, "unknown key");
}

inline const json& need(const json& j, const std::string& at, const char* key) {
  if (!j.contains(key)) throw FieldError(at + "/" + key, "required key is missing");
  return j.at(key);
}

inline double number(const json& j, const std::string& at) {
  if (!j.is_number()) throw FieldError(at, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) throw FieldError(at, "expected a finite number");
  return x;
}

inline Vec vec_from(const json& j, const std::string& at) {
  if (!j.is_array() || j.empty()) throw FieldError(at, "expected a non-empty array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], at + "/" + std::to_string(i));
  return v;
}

inline Mat mat_from(const json& j, const std::string& at) {
  if (!j.is_array() || j.empty()) throw FieldError(at, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  Mat m;
  for (std::size_t i = 0; i < rows; ++i) {
    const Vec r = vec_from(j[i], at + "/" + std::to_string(i));
    if (i == 0) m.resize(static_cast<Eigen::Index>(rows), r.size());
    if (r.size() != m.cols()) throw FieldError(at + "/" + std::to_string(i), "rows differ in length");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

inline json law_json(const Distribution& law) {
  return std::visit(
      [](const auto& l) -> json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, GaussianLaw>) {
          return json{{"family", "gaussian"}, {"mean", vec_json(l.mean)}, {"cov", mat_json(l.cov)}};
        } else if constexpr (std::is_same_v<T, MixtureLaw>) {
          json comps = json::array();
          for (const auto& c : l.components) comps.push_back(json{{"mean", vec_json(c.mean)}, {"cov", mat_json(c.cov)}});
          return json{{"family", "mixture"}, {"weights", l.weights}, {"components", comps}};
        } else {
          json pts = json::array();
          for (const auto& p : l.points) pts.push_back(vec_json(p));
          return json{{"family", "empirical"}, {"points", pts}};
        }
      },
      law);
}

inline GaussianLaw gaussian_from(const json& j, const std::string& at, bool with_family) {
  if (with_family) only_keys(j, at, {"family", "mean", "cov"});
  else only_keys(j, at, {"mean", "cov"});
  GaussianLaw g{vec_from(need(j, at, "mean"), at + "/mean"), mat_from(need(j, at, "cov"), at + "/cov")};
  if (g.cov.rows() != g.mean.size() || g.cov.cols() != g.mean.size())
    throw FieldError(at + "/cov", "covariance shape does not match the mean");
  if (!linalg::is_psd(g.cov, 1e-9)) throw FieldError(at + "/cov", "covariance must be symmetric positive semidefinite");
  return g;
}

inline Distribution law_from(const json& j, const std::string& at) {
  if (!j.is_object()) throw FieldError(at, "expected an object");
  const auto& fam = need(j, at, "family");
  if (!fam.is_string()) throw FieldError(at + "/family", "expected a string");
  const auto f = fam.get<std::string>();
  if (f == "gaussian") return gaussian_from(j, at, true);
  if (f == "mixture") {
    only_keys(j, at, {"family", "weights", "components"});
    MixtureLaw m;
    const Vec w = vec_from(need(j, at, "weights"), at + "/weights");
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (!(w[i] >= 0.0)) throw FieldError(at + "/weights/" + std::to_string(i), "weights must be >= 0");
      m.weights.push_back(w[i]);
    }
    const auto& comps = need(j, at, "components");
    if (!comps.is_array() || comps.size() != m.weights.size())
      throw FieldError(at + "/components", "expected one component per weight");
    for (std::size_t i = 0; i < comps.size(); ++i)
      m.components.push_back(gaussian_from(comps[i], at + "/components/" + std::to_string(i), false));
    return m;
  }
  if (f == "empirical") {
    only_keys(j, at, {"family", "points"});
    const auto& pts = need(j, at, "points");
    if (!pts.is_array() || pts.empty()) throw FieldError(at + "/points", "expected a non-empty array of points");
    EmpiricalLaw e;
    for (std::size_t i = 0; i < pts.size(); ++i) e.points.push_back(vec_from(pts[i], at + "/points/" + std::to_string(i)));
    return e;
  }
  throw FieldError(at + "/family", "unknown family '" + f + "' (gaussian, mixture, empirical)");
}

inline json coupling_json(const CouplingSpec& c) {
  json j{{"kind", to_string(c.kind)}};
  switch (c.kind) {
    case CouplingKind::independent:
      j["mu0"] = law_json(c.mu0);
      j["mu1"] = law_json(c.mu1);
      break;
    case CouplingKind::deterministic_map:
      j["mu0"] = law_json(c.mu0);
      j["mu1"] = law_json(c.mu1);
      j["map"] = json{{"A", mat_json(c.map->A)}, {"b", vec_json(c.map->b)}};
      break;
    case CouplingKind::gaussian_joint:
      j["joint"] = json{{"mean", vec_json(c.joint->mean)}, {"cov", mat_json(c.joint->cov)}};
      break;
  }
  return j;
}

inline CouplingSpec coupling_from(const json& j, const std::string& at) {
  only_keys(j, at, {"kind", "mu0", "mu1", "map", "joint"});
  const auto& kind_j = need(j, at, "kind");
  if (!kind_j.is_string()) throw FieldError(at + "/kind", "expected a string");
  const auto kind = kind_j.get<std::string>();
  try {
    if (kind == "independent") {
      if (j.contains("map")) throw FieldError(at + "/map", "not allowed for independent couplings");
      if (j.contains("joint")) throw FieldError(at + "/joint", "not allowed for independent couplings");
      return CouplingSpec::independent(law_from(need(j, at, "mu0"), at + "/mu0"), law_from(need(j, at, "mu1"), at + "/mu1"));
    }
    if (kind == "deterministic_map") {
      if (j.contains("joint")) throw FieldError(at + "/joint", "not allowed for deterministic_map couplings");
      Distribution mu0 = law_from(need(j, at, "mu0"), at + "/mu0");
      const auto& m = need(j, at, "map");
      if (m.is_string()) {
        if (m.get<std::string>() != "ot") throw FieldError(at + "/map", "expected an {A, b} object or \"ot\"");
        if (!j.contains("mu1")) throw FieldError(at + "/mu1", "the \"ot\" map needs a Gaussian mu1");
        Distribution mu1 = law_from(j.at("mu1"), at + "/mu1");
        if (!is_gaussian(mu0) || !is_gaussian(mu1)) throw FieldError(at + "/map", "the \"ot\" map needs Gaussian mu0 and mu1");
        const auto& g0 = std::get<GaussianLaw>(mu0);
        const auto& g1 = std::get<GaussianLaw>(mu1);
        if (g0.mean.size() != g1.mean.size()) throw FieldError(at + "/mu1", "dimension differs from mu0");
        AffineMap T;
        try {
          T = gaussian_ot_map(g0.mean, g0.cov, g1.mean, g1.cov);
        } catch (const InvalidArgument& e) {
          throw FieldError(at + "/mu0/cov", e.what());
        }
        return CouplingSpec::deterministic(std::move(mu0), std::move(T), std::move(mu1));
      }
      only_keys(m, at + "/map", {"A", "b"});
      AffineMap T{mat_from(need(m, at + "/map", "A"), at + "/map/A"), vec_from(need(m, at + "/map", "b"), at + "/map/b")};
      if (j.contains("mu1"))
        return CouplingSpec::deterministic(std::move(mu0), std::move(T), law_from(j.at("mu1"), at + "/mu1"));
      return CouplingSpec::deterministic(std::move(mu0), std::move(T));
    }
    if (kind == "gaussian_joint") {
      for (const char* k : {"mu0", "mu1", "map"})
        if (j.contains(k)) throw FieldError(at + "/" + k, "not allowed for gaussian_joint couplings (use joint)");
      const auto& jj = need(j, at, "joint");
      only_keys(jj, at + "/joint", {"mean", "cov"});
      return CouplingSpec::gaussian_joint(
          {vec_from(need(jj, at + "/joint", "mean"), at + "/joint/mean"), mat_from(need(jj, at + "/joint", "cov"), at + "/joint/cov")});
    }
  } catch (const InvalidCoupling& e) {
    throw FieldError(at, e.what());
  }
  throw FieldError(at + "/kind", "unknown coupling kind '" + kind + "' (independent, deterministic_map, gaussian_joint)");
}

}  // namespace serial

inline json to_json(const ProcessSpec& p) {
  json j{{"coefficients", p.tag}};
  if (p.gamma) j["latent_scale"] = p.gamma->scale();
  j["coupling"] = serial::coupling_json(p.coupling);
  return j;
}

inline ProcessSpec process_from_json(const json& j, const std::string& at = "/process") {
  serial::only_keys(j, at, {"coefficients", "latent_scale", "coupling"});
  const auto& c = serial::need(j, at, "coefficients");
  if (!c.is_string()) throw FieldError(at + "/coefficients", "expected a string");
  const auto tag = c.get<std::string>();
  CouplingSpec coupling = serial::coupling_from(serial::need(j, at, "coupling"), at + "/coupling");
  if (tag != "latent" && j.contains("latent_scale"))
    throw FieldError(at + "/latent_scale", "only allowed with latent coefficients");
  if (tag == "affine") return ProcessSpec::affine(std::move(coupling));
  if (tag == "trig") return ProcessSpec::trig(std::move(coupling));
  if (tag == "latent") {
    double scale = 1.0;
    if (j.contains("latent_scale")) {
      scale = serial::number(j.at("latent_scale"), at + "/latent_scale");
      if (!(scale > 0.0)) throw FieldError(at + "/latent_scale", "must be > 0");
    }
    return ProcessSpec::latent(std::move(coupling), scale);
  }
  throw FieldError(at + "/coefficients", "unknown coefficients '" + tag + "' (affine, trig, latent)");
}

// Stable digest of a spec, recorded in report inputs.
inline std::string spec_digest(const ProcessSpec& p) { return sha256_hex(to_json(p).dump()); }

}  // namespace straightflow
