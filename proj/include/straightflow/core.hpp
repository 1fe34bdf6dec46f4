#pragma once

// Processes, couplings, time grids and path ensembles.
//
// A process is X_t = alpha(t) X0 + beta(t) X1 + gamma(t) Z with (X0, X1)
// drawn from a coupling of two endpoint laws and Z a standard Gaussian
// latent. Velocities and accelerations of every sampled path come from the
// closed-form coefficient derivatives, never from differencing.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "straightflow/errors.hpp"
#include "straightflow/linalg.hpp"
#include "straightflow/parallel.hpp"

namespace straightflow {

// ---------------------------------------------------------------------------
// Time grid

struct TimeGrid {
  double t0 = 0.0;
  double t1 = 1.0;
  std::vector<double> nodes;
  double step = 1.0;

  std::size_t size() const { return nodes.size(); }
  std::size_t steps() const { return nodes.size() - 1; }

  // Index of the node closest to t.
  std::size_t nearest(double t) const {
    const double k = std::round((t - t0) / step);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(steps())));
  }

  void validate() const {
    if (nodes.size() < 2) throw InvalidArgument("time grid needs at least two nodes");
    if (nodes.front() != t0 || nodes.back() != t1)
      throw InvalidArgument("time grid must span [t0, t1]");
    for (std::size_t k = 1; k < nodes.size(); ++k) {
      const double gap = nodes[k] - nodes[k - 1];
      if (!(gap > 0.0)) throw InvalidArgument("time grid nodes must increase strictly");
      if (std::abs(gap - step) > 1e-12 * std::max(1.0, step) + 1e-15)
        throw InvalidArgument("time grid spacing must be uniform");
    }
  }
};

inline TimeGrid make_time_grid(std::size_t n_steps) {
  if (n_steps == 0) throw InvalidArgument("make_time_grid: n_steps must be >= 1");
  TimeGrid g;
  g.step = 1.0 / static_cast<double>(n_steps);
  g.nodes.resize(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k)
    g.nodes[k] = static_cast<double>(k) / static_cast<double>(n_steps);
  g.nodes.back() = 1.0;
  return g;
}

// ---------------------------------------------------------------------------
// Time coefficients

// Closed-form coefficient with its first and second derivatives.
class Coefficient {
 public:
  enum class Shape { zero, one_minus_t, t, cos_half_pi, sin_half_pi, bump };

  constexpr Coefficient() = default;
  constexpr explicit Coefficient(Shape shape, double scale = 1.0) : shape_(shape), scale_(scale) {}

  static constexpr Coefficient one_minus_t() { return Coefficient(Shape::one_minus_t); }
  static constexpr Coefficient identity() { return Coefficient(Shape::t); }
  static constexpr Coefficient cos_half_pi() { return Coefficient(Shape::cos_half_pi); }
  static constexpr Coefficient sin_half_pi() { return Coefficient(Shape::sin_half_pi); }
  // scale * t (1 - t): vanishes at both ends, smooth on [0, 1].
  static constexpr Coefficient bump(double scale) { return Coefficient(Shape::bump, scale); }

  Shape shape() const { return shape_; }
  double scale() const { return scale_; }

  double value(double t) const {
    constexpr double w = std::numbers::pi / 2.0;
    switch (shape_) {
      case Shape::zero: return 0.0;
      case Shape::one_minus_t: return scale_ * (1.0 - t);
      case Shape::t: return scale_ * t;
      case Shape::cos_half_pi: return scale_ * std::cos(w * t);
      case Shape::sin_half_pi: return scale_ * std::sin(w * t);
      case Shape::bump: return scale_ * t * (1.0 - t);
    }
    return 0.0;
  }

  double d1(double t) const {
    constexpr double w = std::numbers::pi / 2.0;
    switch (shape_) {
      case Shape::zero: return 0.0;
      case Shape::one_minus_t: return -scale_;
      case Shape::t: return scale_;
      case Shape::cos_half_pi: return -scale_ * w * std::sin(w * t);
      case Shape::sin_half_pi: return scale_ * w * std::cos(w * t);
      case Shape::bump: return scale_ * (1.0 - 2.0 * t);
    }
    return 0.0;
  }

  double d2(double t) const {
    constexpr double w = std::numbers::pi / 2.0;
    switch (shape_) {
      case Shape::zero: return 0.0;
      case Shape::one_minus_t: return 0.0;
      case Shape::t: return 0.0;
      case Shape::cos_half_pi: return -scale_ * w * w * std::cos(w * t);
      case Shape::sin_half_pi: return -scale_ * w * w * std::sin(w * t);
      case Shape::bump: return -2.0 * scale_;
    }
    return 0.0;
  }

  std::string name() const {
    switch (shape_) {
      case Shape::zero: return "zero";
      case Shape::one_minus_t: return "one_minus_t";
      case Shape::t: return "t";
      case Shape::cos_half_pi: return "cos_half_pi";
      case Shape::sin_half_pi: return "sin_half_pi";
      case Shape::bump: return "bump";
    }
    return "?";
  }

  bool operator==(const Coefficient&) const = default;

 private:
  Shape shape_ = Shape::zero;
  double scale_ = 1.0;
};

// ---------------------------------------------------------------------------
// Endpoint laws

struct GaussianLaw {
  Vec mean;
  Mat cov;
};

struct MixtureLaw {
  std::vector<double> weights;
  std::vector<GaussianLaw> components;
};

// Uniform law over a finite list of points; the entry point for arbitrary
// samplers and tabulated maps.
struct EmpiricalLaw {
  std::vector<Vec> points;
};

using Distribution = std::variant<GaussianLaw, MixtureLaw, EmpiricalLaw>;

inline std::size_t dim_of(const Distribution& law) {
  return std::visit(
      [](const auto& l) -> std::size_t {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, GaussianLaw>) return static_cast<std::size_t>(l.mean.size());
        else if constexpr (std::is_same_v<T, MixtureLaw>)
          return l.components.empty() ? 0 : static_cast<std::size_t>(l.components.front().mean.size());
        else return l.points.empty() ? 0 : static_cast<std::size_t>(l.points.front().size());
      },
      law);
}

inline bool is_gaussian(const Distribution& law) { return std::holds_alternative<GaussianLaw>(law); }

inline void validate_law(const Distribution& law, const char* label) {
  const std::string who(label);
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        auto check_gauss = [&](const GaussianLaw& g) {
          if (g.mean.size() == 0) throw InvalidCoupling(who + ": empty mean");
          if (g.cov.rows() != g.mean.size() || g.cov.cols() != g.mean.size())
            throw InvalidCoupling(who + ": covariance shape does not match mean");
          if (!g.mean.allFinite() || !linalg::is_psd(g.cov, 1e-9))
            throw InvalidCoupling(who + ": covariance must be symmetric PSD and finite");
        };
        if constexpr (std::is_same_v<T, GaussianLaw>) {
          check_gauss(l);
        } else if constexpr (std::is_same_v<T, MixtureLaw>) {
          if (l.components.empty() || l.components.size() != l.weights.size())
            throw InvalidCoupling(who + ": mixture needs one weight per component");
          double total = 0.0;
          for (double w : l.weights) {
            if (!(w >= 0.0)) throw InvalidCoupling(who + ": mixture weights must be >= 0");
            total += w;
          }
          if (!(total > 0.0)) throw InvalidCoupling(who + ": mixture weights sum to zero");
          for (const auto& c : l.components) {
            check_gauss(c);
            if (c.mean.size() != l.components.front().mean.size())
              throw InvalidCoupling(who + ": mixture components differ in dimension");
          }
        } else {
          if (l.points.empty()) throw InvalidCoupling(who + ": empirical law has no points");
          for (const auto& p : l.points)
            if (p.size() != l.points.front().size() || !p.allFinite())
              throw InvalidCoupling(who + ": empirical points must be finite and equal-sized");
        }
      },
      law);
}

// ---------------------------------------------------------------------------
// Affine maps and couplings

struct AffineMap {
  Mat A;
  Vec b;

  Vec operator()(const Vec& x) const { return A * x + b; }
};

// Law of T(X) for X ~ law and T affine. Closed under all three families.
inline Distribution pushforward(const Distribution& law, const AffineMap& map) {
  return std::visit(
      [&](const auto& l) -> Distribution {
        using T = std::decay_t<decltype(l)>;
        auto push = [&](const GaussianLaw& g) {
          return GaussianLaw{map.A * g.mean + map.b, linalg::symmetrize(map.A * g.cov * map.A.transpose())};
        };
        if constexpr (std::is_same_v<T, GaussianLaw>) {
          return push(l);
        } else if constexpr (std::is_same_v<T, MixtureLaw>) {
          MixtureLaw out{l.weights, {}};
          for (const auto& c : l.components) out.components.push_back(push(c));
          return out;
        } else {
          EmpiricalLaw out;
          for (const auto& p : l.points) out.points.push_back(map(p));
          return out;
        }
      },
      law);
}

enum class CouplingKind { independent, deterministic_map, gaussian_joint };

inline std::string to_string(CouplingKind k) {
  switch (k) {
    case CouplingKind::independent: return "independent";
    case CouplingKind::deterministic_map: return "deterministic_map";
    case CouplingKind::gaussian_joint: return "gaussian_joint";
  }
  return "?";
}

struct JointGaussian {
  Vec mean;  // 2d: (m0, m1)
  Mat cov;   // 2d x 2d: [[S00, S01], [S10, S11]]
};

struct CouplingSpec {
  CouplingKind kind = CouplingKind::independent;
  Distribution mu0;
  Distribution mu1;
  std::optional<AffineMap> map;
  std::optional<JointGaussian> joint;

  std::size_t dim() const { return dim_of(mu0); }

  static CouplingSpec independent(Distribution mu0, Distribution mu1) {
    CouplingSpec c;
    c.kind = CouplingKind::independent;
    c.mu0 = std::move(mu0);
    c.mu1 = std::move(mu1);
    c.validate();
    return c;
  }

  // mu1 is the pushforward of mu0 under the map.
  static CouplingSpec deterministic(Distribution mu0, AffineMap map) {
    CouplingSpec c;
    c.kind = CouplingKind::deterministic_map;
    c.mu1 = pushforward(mu0, map);
    c.mu0 = std::move(mu0);
    c.map = std::move(map);
    c.validate();
    return c;
  }

  // Explicit target; validate() checks the pushforward when both are Gaussian.
  static CouplingSpec deterministic(Distribution mu0, AffineMap map, Distribution mu1) {
    CouplingSpec c;
    c.kind = CouplingKind::deterministic_map;
    c.mu0 = std::move(mu0);
    c.mu1 = std::move(mu1);
    c.map = std::move(map);
    c.validate();
    return c;
  }

  static CouplingSpec gaussian_joint(JointGaussian joint) {
    const Eigen::Index n = joint.mean.size();
    if (n == 0 || n % 2 != 0 || joint.cov.rows() != n || joint.cov.cols() != n)
      throw InvalidCoupling("joint Gaussian needs an even-sized mean and matching covariance");
    const Eigen::Index d = n / 2;
    CouplingSpec c;
    c.kind = CouplingKind::gaussian_joint;
    c.mu0 = GaussianLaw{joint.mean.head(d), joint.cov.topLeftCorner(d, d)};
    c.mu1 = GaussianLaw{joint.mean.tail(d), joint.cov.bottomRightCorner(d, d)};
    c.joint = std::move(joint);
    c.validate();
    return c;
  }

  void validate() const {
    validate_law(mu0, "mu0");
    validate_law(mu1, "mu1");
    const std::size_t d = dim_of(mu0);
    if (dim_of(mu1) != d) throw InvalidCoupling("mu0 and mu1 differ in dimension");
    switch (kind) {
      case CouplingKind::independent:
        break;
      case CouplingKind::deterministic_map: {
        if (!map) throw InvalidCoupling("deterministic_map coupling needs a map");
        const auto dd = static_cast<Eigen::Index>(d);
        if (map->A.rows() != dd || map->A.cols() != dd || map->b.size() != dd)
          throw InvalidCoupling("map shape does not match the dimension");
        if (!map->A.allFinite() || !map->b.allFinite()) throw InvalidCoupling("map must be finite");
        if (is_gaussian(mu0) && is_gaussian(mu1)) {
          const auto& g0 = std::get<GaussianLaw>(mu0);
          const auto& g1 = std::get<GaussianLaw>(mu1);
          const Mat pushed = map->A * g0.cov * map->A.transpose();
          const double cov_scale = std::max(1.0, g1.cov.cwiseAbs().maxCoeff());
          const double mean_scale = std::max(1.0, g1.mean.cwiseAbs().maxCoeff());
          if ((pushed - g1.cov).cwiseAbs().maxCoeff() > 1e-9 * cov_scale ||
              (map->A * g0.mean + map->b - g1.mean).cwiseAbs().maxCoeff() > 1e-9 * mean_scale)
            throw InvalidCoupling("map does not push mu0 forward to mu1");
        }
        break;
      }
      case CouplingKind::gaussian_joint: {
        if (!joint) throw InvalidCoupling("gaussian_joint coupling needs a joint law");
        if (!linalg::is_psd(joint->cov, 1e-9))
          throw InvalidCoupling("joint covariance must be symmetric positive semidefinite");
        break;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Process specification

struct ProcessSpec {
  std::string tag;  // "affine", "trig", "latent" or "custom"
  Coefficient alpha;
  Coefficient beta;
  std::optional<Coefficient> gamma;
  CouplingSpec coupling;

  std::size_t dim() const { return coupling.dim(); }

  // X_t = (1 - t) X0 + t X1
  static ProcessSpec affine(CouplingSpec c) {
    ProcessSpec p{"affine", Coefficient::one_minus_t(), Coefficient::identity(), std::nullopt, std::move(c)};
    p.validate();
    return p;
  }

  // X_t = cos(pi t / 2) X0 + sin(pi t / 2) X1
  static ProcessSpec trig(CouplingSpec c) {
    ProcessSpec p{"trig", Coefficient::cos_half_pi(), Coefficient::sin_half_pi(), std::nullopt, std::move(c)};
    p.validate();
    return p;
  }

  // Affine interpolant plus scale * t (1 - t) Z with Z ~ N(0, I).
  static ProcessSpec latent(CouplingSpec c, double scale) {
    ProcessSpec p{"latent", Coefficient::one_minus_t(), Coefficient::identity(), Coefficient::bump(scale),
                  std::move(c)};
    p.validate();
    return p;
  }

  bool is_affine() const {
    return alpha == Coefficient::one_minus_t() && beta == Coefficient::identity() &&
           (!gamma || gamma->shape() == Coefficient::Shape::zero || gamma->scale() == 0.0);
  }

  void validate() const {
    coupling.validate();
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    if (!near(alpha.value(0.0), 1.0) || !near(beta.value(0.0), 0.0) || !near(alpha.value(1.0), 0.0) ||
        !near(beta.value(1.0), 1.0))
      throw InvalidArgument("coefficients must satisfy alpha(0)=1, beta(0)=0, alpha(1)=0, beta(1)=1");
    if (gamma && (!near(gamma->value(0.0), 0.0) || !near(gamma->value(1.0), 0.0)))
      throw InvalidArgument("latent coefficient must vanish at t=0 and t=1");
  }
};

struct EndpointSample {
  Vec x0;
  Vec x1;
  std::optional<Vec> z;
};

// ---------------------------------------------------------------------------
// Random streams

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Independent engine per (master seed, path index, stream id). Sampling order
// across paths does not affect any path's draws.
inline std::mt19937_64 stream_for(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0) {
  const std::uint64_t a = detail::splitmix64(seed ^ detail::splitmix64(stream + 0x5851f42d4c957f2dULL));
  const std::uint64_t b = detail::splitmix64(a ^ detail::splitmix64(index));
  std::seed_seq seq{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
  return std::mt19937_64(seq);
}

// Precomputed sampler for one endpoint law.
class LawSampler {
 public:
  explicit LawSampler(const Distribution& law) : law_(&law) {
    if (const auto* g = std::get_if<GaussianLaw>(&law)) {
      factors_.push_back(linalg::sqrtm_psd(g->cov));
    } else if (const auto* m = std::get_if<MixtureLaw>(&law)) {
      for (const auto& c : m->components) factors_.push_back(linalg::sqrtm_psd(c.cov));
    }
  }

  template <typename Engine>
  Vec draw(Engine& eng) const {
    if (const auto* g = std::get_if<GaussianLaw>(law_)) return g->mean + factors_[0] * normals(eng, g->mean.size());
    if (const auto* m = std::get_if<MixtureLaw>(law_)) {
      std::discrete_distribution<std::size_t> pick(m->weights.begin(), m->weights.end());
      const std::size_t c = pick(eng);
      return m->components[c].mean + factors_[c] * normals(eng, m->components[c].mean.size());
    }
    const auto& e = std::get<EmpiricalLaw>(*law_);
    std::uniform_int_distribution<std::size_t> pick(0, e.points.size() - 1);
    return e.points[pick(eng)];
  }

  template <typename Engine>
  static Vec normals(Engine& eng, Eigen::Index n) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(eng);
    return v;
  }

 private:
  const Distribution* law_;
  std::vector<Mat> factors_;
};

namespace detail {

struct CouplingSampler {
  explicit CouplingSampler(const CouplingSpec& c) : spec(c), s0(c.mu0), s1(c.mu1) {
    if (c.kind == CouplingKind::gaussian_joint) joint_factor = linalg::sqrtm_psd(c.joint->cov);
  }

  EndpointSample draw(std::uint64_t seed, std::uint64_t i) const {
    auto eng = stream_for(seed, i, 0);
    EndpointSample s;
    switch (spec.kind) {
      case CouplingKind::independent:
        s.x0 = s0.draw(eng);
        s.x1 = s1.draw(eng);
        break;
      case CouplingKind::deterministic_map:
        s.x0 = s0.draw(eng);
        s.x1 = (*spec.map)(s.x0);
        break;
      case CouplingKind::gaussian_joint: {
        const Eigen::Index d = spec.joint->mean.size() / 2;
        const Vec pair = spec.joint->mean + joint_factor * LawSampler::normals(eng, 2 * d);
        s.x0 = pair.head(d);
        s.x1 = pair.tail(d);
        break;
      }
    }
    return s;
  }

  const CouplingSpec& spec;
  LawSampler s0;
  LawSampler s1;
  Mat joint_factor;
};

}  // namespace detail

inline std::vector<EndpointSample> coupling_sample(const CouplingSpec& coupling, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("coupling_sample: n must be >= 1");
  coupling.validate();
  detail::CouplingSampler sampler(coupling);
  std::vector<EndpointSample> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = sampler.draw(seed, i); });
  return out;
}

// Endpoints plus latent draws for a process (latent uses stream 1).
inline std::vector<EndpointSample> process_endpoints(const ProcessSpec& spec, std::size_t n, std::uint64_t seed) {
  auto ends = coupling_sample(spec.coupling, n, seed);
  if (spec.gamma) {
    const auto d = static_cast<Eigen::Index>(spec.dim());
    parallel_for(n, [&](std::size_t i) {
      auto eng = stream_for(seed, i, 1);
      ends[i].z = LawSampler::normals(eng, d);
    });
  }
  return ends;
}

// ---------------------------------------------------------------------------
// Ensembles

// Positions, velocities and accelerations of all paths at one time.
struct EnsembleSlice {
  double t = 0.0;
  RowMat positions;      // N x d
  RowMat velocities;     // N x d
  RowMat accelerations;  // N x d

  std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(positions.cols()); }
};

inline EnsembleSlice slice_at(const ProcessSpec& spec, const std::vector<EndpointSample>& ends, double t) {
  const auto n = static_cast<Eigen::Index>(ends.size());
  const auto d = static_cast<Eigen::Index>(spec.dim());
  EnsembleSlice s;
  s.t = t;
  s.positions.resize(n, d);
  s.velocities.resize(n, d);
  s.accelerations.resize(n, d);
  const double a0 = spec.alpha.value(t), a1 = spec.alpha.d1(t), a2 = spec.alpha.d2(t);
  const double b0 = spec.beta.value(t), b1 = spec.beta.d1(t), b2 = spec.beta.d2(t);
  const double g0 = spec.gamma ? spec.gamma->value(t) : 0.0;
  const double g1 = spec.gamma ? spec.gamma->d1(t) : 0.0;
  const double g2 = spec.gamma ? spec.gamma->d2(t) : 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = ends[static_cast<std::size_t>(i)];
    s.positions.row(i) = (a0 * e.x0 + b0 * e.x1).transpose();
    s.velocities.row(i) = (a1 * e.x0 + b1 * e.x1).transpose();
    s.accelerations.row(i) = (a2 * e.x0 + b2 * e.x1).transpose();
    if (e.z) {
      s.positions.row(i) += g0 * e.z->transpose();
      s.velocities.row(i) += g1 * e.z->transpose();
      s.accelerations.row(i) += g2 * e.z->transpose();
    }
  }
  return s;
}

// N paths on a shared grid; arrays are row-major (path, node, coordinate).
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::size_t n, std::size_t d, std::uint64_t seed)
      : grid_(std::move(grid)), n_(n), d_(d), seed_(seed),
        positions_(n * grid_.size() * d), velocities_(positions_.size()), accelerations_(positions_.size()) {}

  const TimeGrid& grid() const { return grid_; }
  std::size_t paths() const { return n_; }
  std::size_t nodes() const { return grid_.size(); }
  std::size_t dim() const { return d_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t offset(std::size_t i, std::size_t k) const { return (i * grid_.size() + k) * d_; }

  Eigen::Map<const Vec> position(std::size_t i, std::size_t k) const {
    return {positions_.data() + offset(i, k), static_cast<Eigen::Index>(d_)};
  }
  Eigen::Map<const Vec> velocity(std::size_t i, std::size_t k) const {
    return {velocities_.data() + offset(i, k), static_cast<Eigen::Index>(d_)};
  }
  Eigen::Map<const Vec> acceleration(std::size_t i, std::size_t k) const {
    return {accelerations_.data() + offset(i, k), static_cast<Eigen::Index>(d_)};
  }

  const std::vector<double>& positions() const { return positions_; }
  const std::vector<double>& velocities() const { return velocities_; }
  const std::vector<double>& accelerations() const { return accelerations_; }
  std::vector<double>& positions() { return positions_; }
  std::vector<double>& velocities() { return velocities_; }
  std::vector<double>& accelerations() { return accelerations_; }

  // Endpoint draws behind the ensemble; empty when loaded from disk.
  const std::vector<EndpointSample>& endpoints() const { return endpoints_; }
  void set_endpoints(std::vector<EndpointSample> e) { endpoints_ = std::move(e); }

  EnsembleSlice slice(std::size_t k) const {
    if (k >= grid_.size()) throw InvalidArgument("slice index out of range");
    EnsembleSlice s;
    s.t = grid_.nodes[k];
    const auto n = static_cast<Eigen::Index>(n_), d = static_cast<Eigen::Index>(d_);
    s.positions.resize(n, d);
    s.velocities.resize(n, d);
    s.accelerations.resize(n, d);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      s.positions.row(r) = position(i, k).transpose();
      s.velocities.row(r) = velocity(i, k).transpose();
      s.accelerations.row(r) = acceleration(i, k).transpose();
    }
    return s;
  }

 private:
  TimeGrid grid_;
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> positions_;
  std::vector<double> velocities_;
  std::vector<double> accelerations_;
  std::vector<EndpointSample> endpoints_;
};

inline PathEnsemble ensemble_from_endpoints(const ProcessSpec& spec, std::vector<EndpointSample> ends,
                                            const TimeGrid& grid, std::uint64_t seed) {
  grid.validate();
  const std::size_t n = ends.size(), d = spec.dim(), K = grid.size();
  PathEnsemble ens(grid, n, d, seed);
  auto& P = ens.positions();
  auto& V = ens.velocities();
  auto& A = ens.accelerations();
  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid.nodes[k];
    const double a0 = spec.alpha.value(t), a1 = spec.alpha.d1(t), a2 = spec.alpha.d2(t);
    const double b0 = spec.beta.value(t), b1 = spec.beta.d1(t), b2 = spec.beta.d2(t);
    const double g0 = spec.gamma ? spec.gamma->value(t) : 0.0;
    const double g1 = spec.gamma ? spec.gamma->d1(t) : 0.0;
    const double g2 = spec.gamma ? spec.gamma->d2(t) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = ends[i];
      const std::size_t off = ens.offset(i, k);
      for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double z = e.z ? (*e.z)[jj] : 0.0;
        P[off + j] = a0 * e.x0[jj] + b0 * e.x1[jj] + g0 * z;
        V[off + j] = a1 * e.x0[jj] + b1 * e.x1[jj] + g1 * z;
        A[off + j] = a2 * e.x0[jj] + b2 * e.x1[jj] + g2 * z;
      }
    }
  }
  ens.set_endpoints(std::move(ends));
  return ens;
}

inline PathEnsemble sample_paths(const ProcessSpec& spec, std::size_t n, const TimeGrid& grid, std::uint64_t seed) {
  spec.validate();
  return ensemble_from_endpoints(spec, process_endpoints(spec, n, seed), grid, seed);
}

// ---------------------------------------------------------------------------
// Binary ensemble cache: "SFLW1", then N, K, d as little-endian u64, then
// row-major f64 positions, velocities, accelerations.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw InvalidArgument("ensemble file truncated in header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline void put_f64s(std::ostream& os, const std::vector<double>& xs) {
  for (double x : xs) put_u64(os, std::bit_cast<std::uint64_t>(x));
}

inline void get_f64s(std::istream& is, std::vector<double>& xs) {
  for (double& x : xs) x = std::bit_cast<double>(get_u64(is));
}

}  // namespace detail

inline constexpr char kEnsembleMagic[5] = {'S', 'F', 'L', 'W', '1'};

inline void write_ensemble(std::ostream& os, const PathEnsemble& ens) {
  os.write(kEnsembleMagic, sizeof(kEnsembleMagic));
  detail::put_u64(os, ens.paths());
  detail::put_u64(os, ens.nodes());
  detail::put_u64(os, ens.dim());
  detail::put_f64s(os, ens.positions());
  detail::put_f64s(os, ens.velocities());
  detail::put_f64s(os, ens.accelerations());
}

inline PathEnsemble read_ensemble(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kEnsembleMagic, 5) != 0) throw InvalidArgument("not an SFLW1 ensemble file");
  const std::uint64_t n = detail::get_u64(is), K = detail::get_u64(is), d = detail::get_u64(is);
  if (K < 2 || d == 0) throw InvalidArgument("ensemble file has invalid dimensions");
  PathEnsemble ens(make_time_grid(K - 1), n, d, 0);
  try {
    detail::get_f64s(is, ens.positions());
    detail::get_f64s(is, ens.velocities());
    detail::get_f64s(is, ens.accelerations());
  } catch (const InvalidArgument&) {
    throw InvalidArgument("ensemble file truncated in payload");
  }
  return ens;
}

}  // namespace straightflow
