#pragma once

// Grid calculus on tensor-product uniform grids and the transport residuals
// built from it:
//
//   continuity  d/dt rho + div(rho v)                    = 0
//   momentum    d/dt (rho v) + div(rho Sigma) - rho a    = 0
//   balance     div(rho Pi) - rho a                      = 0   (straight flows)
//
// Matrix divergence contracts the first index: (div T)_j = sum_i d_i T_ij.
// Matrix fields are stored row-major, entry (i, j) at component i * d + j.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "straightflow/errors.hpp"
#include "straightflow/linalg.hpp"

namespace straightflow {

struct Axis {
  double lo = 0.0;
  double step = 1.0;
  std::size_t n = 0;

  double node(std::size_t i) const { return lo + step * static_cast<double>(i); }
  double hi() const { return node(n - 1); }
  bool operator==(const Axis&) const = default;
};

class SpatialGrid {
 public:
  SpatialGrid() = default;

  explicit SpatialGrid(std::vector<Axis> axes) : axes_(std::move(axes)) {
    if (axes_.empty()) throw InvalidGrid("grid needs at least one axis");
    total_ = 1;
    for (const auto& a : axes_) {
      if (a.n < 3) throw InvalidGrid("grid needs at least 3 nodes per axis");
      if (!(a.step > 0.0) || !std::isfinite(a.lo)) throw InvalidGrid("grid spacing must be positive");
      total_ *= a.n;
    }
    mask_.assign(total_, 0);
    for (std::size_t f = 0; f < total_; ++f) mask_[f] = interior(f) ? 1 : 0;
  }

  // n nodes per axis spanning [lo_j, hi_j].
  static SpatialGrid uniform(const std::vector<std::pair<double, double>>& box, std::size_t n) {
    std::vector<Axis> axes;
    for (const auto& [lo, hi] : box) {
      if (n < 3) throw InvalidGrid("grid needs at least 3 nodes per axis");
      if (!(hi > lo)) throw InvalidGrid("grid box must have hi > lo");
      axes.push_back({lo, (hi - lo) / static_cast<double>(n - 1), n});
    }
    return SpatialGrid(std::move(axes));
  }

  // Nodes every `spacing` from lo; the upper end is the last node <= hi.
  static SpatialGrid with_spacing(const std::vector<std::pair<double, double>>& box, double spacing) {
    std::vector<Axis> axes;
    for (const auto& [lo, hi] : box) {
      const auto n = static_cast<std::size_t>(std::floor((hi - lo) / spacing + 1e-9)) + 1;
      axes.push_back({lo, spacing, n});
    }
    return SpatialGrid(std::move(axes));
  }

  // Explicit per-axis node lists; each list must be uniformly spaced.
  static SpatialGrid from_nodes(const std::vector<std::vector<double>>& nodes) {
    std::vector<Axis> axes;
    for (const auto& list : nodes) {
      if (list.size() < 3) throw InvalidGrid("grid needs at least 3 nodes per axis");
      const double h = (list.back() - list.front()) / static_cast<double>(list.size() - 1);
      for (std::size_t i = 1; i < list.size(); ++i)
        if (std::abs((list[i] - list[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)))
          throw InvalidGrid("grid nodes must be uniformly spaced");
      axes.push_back({list.front(), h, list.size()});
    }
    return SpatialGrid(std::move(axes));
  }

  std::size_t dim() const { return axes_.size(); }
  std::size_t size() const { return total_; }
  const Axis& axis(std::size_t j) const { return axes_[j]; }
  const std::vector<Axis>& axes() const { return axes_; }

  // Flat index -> per-axis index; axis 0 varies slowest.
  std::size_t index_along(std::size_t flat, std::size_t j) const {
    std::size_t stride = 1;
    for (std::size_t k = axes_.size(); k-- > j + 1;) stride *= axes_[k].n;
    return (flat / stride) % axes_[j].n;
  }

  std::size_t stride(std::size_t j) const {
    std::size_t s = 1;
    for (std::size_t k = axes_.size(); k-- > j + 1;) s *= axes_[k].n;
    return s;
  }

  Vec coords(std::size_t flat) const {
    Vec x(static_cast<Eigen::Index>(axes_.size()));
    for (std::size_t j = 0; j < axes_.size(); ++j) x[static_cast<Eigen::Index>(j)] = axes_[j].node(index_along(flat, j));
    return x;
  }

  bool interior(std::size_t flat) const {
    for (std::size_t j = 0; j < axes_.size(); ++j) {
      const auto i = index_along(flat, j);
      if (i == 0 || i + 1 == axes_[j].n) return false;
    }
    return true;
  }

  bool admissible(std::size_t flat) const { return mask_[flat] != 0; }
  const std::vector<unsigned char>& mask() const { return mask_; }
  std::size_t admissible_count() const { return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1)); }

  // Masks out a node; interior-only is the invariant, narrowing is allowed.
  void exclude(std::size_t flat) { mask_[flat] = 0; }

  bool same_nodes(const SpatialGrid& other) const { return axes_ == other.axes_; }

 private:
  std::vector<Axis> axes_;
  std::size_t total_ = 0;
  std::vector<unsigned char> mask_;
};

enum class Rank { scalar, vector, matrix };

class GridField {
 public:
  GridField() = default;
  GridField(SpatialGrid grid, Rank rank, double t)
      : grid_(std::move(grid)), rank_(rank), t_(t),
        values_(grid_.size() * components(rank, grid_.dim()), std::numeric_limits<double>::quiet_NaN()) {}

  static std::size_t components(Rank r, std::size_t d) {
    switch (r) {
      case Rank::scalar: return 1;
      case Rank::vector: return d;
      case Rank::matrix: return d * d;
    }
    return 1;
  }

  const SpatialGrid& grid() const { return grid_; }
  SpatialGrid& grid() { return grid_; }
  Rank rank() const { return rank_; }
  double time() const { return t_; }
  std::size_t dim() const { return grid_.dim(); }
  std::size_t comps() const { return components(rank_, grid_.dim()); }
  std::size_t nodes() const { return grid_.size(); }

  double& at(std::size_t node, std::size_t c = 0) { return values_[node * comps() + c]; }
  double at(std::size_t node, std::size_t c = 0) const { return values_[node * comps() + c]; }

  Vec vector(std::size_t node) const {
    return Eigen::Map<const Vec>(values_.data() + node * comps(), static_cast<Eigen::Index>(comps()));
  }
  Mat matrix(std::size_t node) const {
    const auto d = static_cast<Eigen::Index>(dim());
    return Eigen::Map<const RowMat>(values_.data() + node * comps(), d, d);
  }
  void set(std::size_t node, const Vec& v) {
    for (std::size_t c = 0; c < comps(); ++c) at(node, c) = v[static_cast<Eigen::Index>(c)];
  }
  void set(std::size_t node, const Mat& m) {
    const auto d = dim();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        at(node, i * d + j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  bool finite_at(std::size_t node) const {
    for (std::size_t c = 0; c < comps(); ++c)
      if (!std::isfinite(at(node, c))) return false;
    return true;
  }

  const std::vector<double>& values() const { return values_; }

 private:
  SpatialGrid grid_;
  Rank rank_ = Rank::scalar;
  double t_ = 0.0;
  std::vector<double> values_;
};

enum class StencilOrder { second, fourth };

namespace detail {

inline void require_same_grid(const GridField& a, const GridField& b, const char* op) {
  if (!a.grid().same_nodes(b.grid())) throw InvalidArgument(std::string(op) + ": fields live on different grids");
}

inline void require_rank(const GridField& f, Rank r, const char* op) {
  if (f.rank() != r) throw InvalidArgument(std::string(op) + ": field has the wrong rank");
}

// d/dx_axis of component c at node. With the fourth-order option, nodes with
// two neighbours on each side use the centred five-point stencil and the
// first interior layer an off-centre five-point stencil of the same order, so
// the error constant does not jump next to the boundary. The boundary layer
// itself is one-sided second order (and masked out by default).
inline double partial(const GridField& f, std::size_t c, std::size_t axis, std::size_t node, StencilOrder order) {
  const auto& ax = f.grid().axis(axis);
  const std::size_t i = f.grid().index_along(node, axis);
  const std::size_t s = f.grid().stride(axis);
  const double h = ax.step;
  auto val = [&](long off) { return f.at(static_cast<std::size_t>(static_cast<long>(node) + off * static_cast<long>(s)), c); };
  if (i == 0) return (-3.0 * val(0) + 4.0 * val(1) - val(2)) / (2.0 * h);
  if (i + 1 == ax.n) return (3.0 * val(0) - 4.0 * val(-1) + val(-2)) / (2.0 * h);
  if (order == StencilOrder::fourth && ax.n >= 5) {
    if (i >= 2 && i + 2 < ax.n) return (-val(2) + 8.0 * val(1) - 8.0 * val(-1) + val(-2)) / (12.0 * h);
    if (i == 1) return (-3.0 * val(-1) - 10.0 * val(0) + 18.0 * val(1) - 6.0 * val(2) + val(3)) / (12.0 * h);
    return (3.0 * val(1) + 10.0 * val(0) - 18.0 * val(-1) + 6.0 * val(-2) - val(-3)) / (12.0 * h);
  }
  return (val(1) - val(-1)) / (2.0 * h);
}

// Output mask: input mask and finite result.
inline void finalize_mask(GridField& out, const SpatialGrid& in) {
  for (std::size_t n = 0; n < out.nodes(); ++n)
    if (!in.admissible(n) || !out.finite_at(n)) out.grid().exclude(n);
}

inline SpatialGrid merged_mask(std::initializer_list<const GridField*> fields) {
  SpatialGrid g = (*fields.begin())->grid();
  for (const GridField* f : fields)
    for (std::size_t n = 0; n < g.size(); ++n)
      if (!f->grid().admissible(n)) g.exclude(n);
  return g;
}

}  // namespace detail

inline constexpr StencilOrder kDefaultStencil = StencilOrder::fourth;

inline GridField grid_gradient(const GridField& f, StencilOrder order = kDefaultStencil) {
  detail::require_rank(f, Rank::scalar, "grid_gradient");
  GridField out(f.grid(), Rank::vector, f.time());
  for (std::size_t n = 0; n < f.nodes(); ++n)
    for (std::size_t j = 0; j < f.dim(); ++j) out.at(n, j) = detail::partial(f, 0, j, n, order);
  detail::finalize_mask(out, f.grid());
  return out;
}

// Jacobian J_ij = d_j v_i of a vector field.
inline GridField grid_jacobian(const GridField& v, StencilOrder order = kDefaultStencil) {
  detail::require_rank(v, Rank::vector, "grid_jacobian");
  const std::size_t d = v.dim();
  GridField out(v.grid(), Rank::matrix, v.time());
  for (std::size_t n = 0; n < v.nodes(); ++n)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) out.at(n, i * d + j) = detail::partial(v, i, j, n, order);
  detail::finalize_mask(out, v.grid());
  return out;
}

inline GridField grid_divergence_vector(const GridField& v, StencilOrder order = kDefaultStencil) {
  detail::require_rank(v, Rank::vector, "grid_divergence_vector");
  GridField out(v.grid(), Rank::scalar, v.time());
  for (std::size_t n = 0; n < v.nodes(); ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.dim(); ++i) s += detail::partial(v, i, i, n, order);
    out.at(n) = s;
  }
  detail::finalize_mask(out, v.grid());
  return out;
}

// (div T)_j = sum_i d_i T_ij
inline GridField grid_divergence_matrix(const GridField& T, StencilOrder order = kDefaultStencil) {
  detail::require_rank(T, Rank::matrix, "grid_divergence_matrix");
  const std::size_t d = T.dim();
  GridField out(T.grid(), Rank::vector, T.time());
  for (std::size_t n = 0; n < T.nodes(); ++n)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += detail::partial(T, i * d + j, i, n, order);
      out.at(n, j) = s;
    }
  detail::finalize_mask(out, T.grid());
  return out;
}

// Central difference (f_plus - f_minus) / (2 h_t).
inline GridField time_derivative(const GridField& f_minus, const GridField& f_center, const GridField& f_plus,
                                 double h_t) {
  detail::require_same_grid(f_minus, f_center, "time_derivative");
  detail::require_same_grid(f_plus, f_center, "time_derivative");
  if (f_minus.rank() != f_center.rank() || f_plus.rank() != f_center.rank())
    throw InvalidArgument("time_derivative: slices differ in rank");
  if (!(h_t > 0.0)) throw InvalidArgument("time_derivative: h_t must be positive");
  GridField out(detail::merged_mask({&f_minus, &f_center, &f_plus}), f_center.rank(), f_center.time());
  for (std::size_t n = 0; n < out.nodes(); ++n)
    for (std::size_t c = 0; c < out.comps(); ++c) out.at(n, c) = (f_plus.at(n, c) - f_minus.at(n, c)) / (2.0 * h_t);
  detail::finalize_mask(out, out.grid());
  return out;
}

// Second-order one-sided difference from slices at t, t + s h_t, t + 2 s h_t
// where s = +1 (forward, for t = 0) or -1 (backward, for t = 1).
inline GridField time_derivative_one_sided(const GridField& f0, const GridField& f1, const GridField& f2, double h_t,
                                           bool forward) {
  detail::require_same_grid(f0, f1, "time_derivative_one_sided");
  detail::require_same_grid(f0, f2, "time_derivative_one_sided");
  GridField out(detail::merged_mask({&f0, &f1, &f2}), f0.rank(), f0.time());
  const double sign = forward ? 1.0 : -1.0;
  for (std::size_t n = 0; n < out.nodes(); ++n)
    for (std::size_t c = 0; c < out.comps(); ++c)
      out.at(n, c) = sign * (-3.0 * f0.at(n, c) + 4.0 * f1.at(n, c) - f2.at(n, c)) / (2.0 * h_t);
  detail::finalize_mask(out, out.grid());
  return out;
}

// Pointwise product of a scalar field with a field of any rank.
inline GridField multiply(const GridField& scalar, const GridField& f) {
  detail::require_rank(scalar, Rank::scalar, "multiply");
  detail::require_same_grid(scalar, f, "multiply");
  GridField out(detail::merged_mask({&scalar, &f}), f.rank(), f.time());
  for (std::size_t n = 0; n < out.nodes(); ++n)
    for (std::size_t c = 0; c < out.comps(); ++c) out.at(n, c) = scalar.at(n) * f.at(n, c);
  return out;
}

// a + s * b
inline GridField axpy(const GridField& a, double s, const GridField& b) {
  detail::require_same_grid(a, b, "axpy");
  if (a.rank() != b.rank()) throw InvalidArgument("axpy: ranks differ");
  GridField out(detail::merged_mask({&a, &b}), a.rank(), a.time());
  for (std::size_t n = 0; n < out.nodes(); ++n)
    for (std::size_t c = 0; c < out.comps(); ++c) out.at(n, c) = a.at(n, c) + s * b.at(n, c);
  return out;
}

// D_t v = d/dt v + (v . grad) v, with the Jacobian taken on the centre slice.
inline GridField material_derivative(const GridField& v_minus, const GridField& v_center, const GridField& v_plus,
                                     double h_t, StencilOrder order = kDefaultStencil) {
  detail::require_rank(v_center, Rank::vector, "material_derivative");
  const GridField dvdt = time_derivative(v_minus, v_center, v_plus, h_t);
  const GridField J = grid_jacobian(v_center, order);
  GridField out(detail::merged_mask({&dvdt, &J}), Rank::vector, v_center.time());
  for (std::size_t n = 0; n < out.nodes(); ++n) out.set(n, Vec(dvdt.vector(n) + J.matrix(n) * v_center.vector(n)));
  detail::finalize_mask(out, out.grid());
  return out;
}

struct ResidualReport {
  GridField residual;
  double max_abs = 0.0;
  double rms = 0.0;
  double reference = 0.0;
  double relative = 0.0;
  std::size_t nodes = 0;
  // rms of the flux term (momentum, balance). When fields such as v and a
  // vanish identically the pointwise reference is zero while the residual
  // still carries discretization error of the flux; tolerance is then judged
  // against the flux scale instead.
  double flux_scale = std::numeric_limits<double>::quiet_NaN();

  double relative_to_flux() const { return rms / std::max(flux_scale, 1e-30); }
  bool reference_degenerate() const { return std::isfinite(flux_scale) && reference <= 1e-8 * flux_scale; }
  bool within(double tol) const { return (reference_degenerate() ? relative_to_flux() : relative) <= tol; }
};

namespace detail {

inline double rms_norm(const GridField& f) {
  double sq = 0.0;
  std::size_t m = 0;
  for (std::size_t n = 0; n < f.nodes(); ++n) {
    if (!f.grid().admissible(n) || !f.finite_at(n)) continue;
    sq += f.vector(n).squaredNorm();
    ++m;
  }
  return m ? std::sqrt(sq / static_cast<double>(m)) : 0.0;
}

}  // namespace detail

// Norms of a residual over admissible nodes. `reference_pointwise` supplies
// the per-node scale whose rms is the relative denominator.
template <typename RefFn>
ResidualReport make_report(GridField residual, RefFn&& reference_pointwise) {
  ResidualReport r;
  double sq = 0.0, ref_sq = 0.0;
  for (std::size_t n = 0; n < residual.nodes(); ++n) {
    if (!residual.grid().admissible(n) || !residual.finite_at(n)) continue;
    const double mag = residual.vector(n).norm();
    r.max_abs = std::max(r.max_abs, mag);
    sq += mag * mag;
    const double ref = reference_pointwise(n);
    ref_sq += ref * ref;
    ++r.nodes;
  }
  if (r.nodes > 0) {
    r.rms = std::sqrt(sq / static_cast<double>(r.nodes));
    r.reference = std::sqrt(ref_sq / static_cast<double>(r.nodes));
  }
  r.relative = r.rms / std::max(r.reference, 1e-30);
  r.residual = std::move(residual);
  return r;
}

struct FieldTriple {
  const GridField& minus;
  const GridField& center;
  const GridField& plus;
};

// d/dt (rho v) + div(rho Sigma) - rho a.
// Reference scale: rho |a| + rho |v| (velocity over unit time).
inline ResidualReport momentum_residual(FieldTriple rho, FieldTriple v, const GridField& Sigma, const GridField& a,
                                        double h_t, StencilOrder order = kDefaultStencil) {
  detail::require_rank(Sigma, Rank::matrix, "momentum_residual");
  detail::require_rank(a, Rank::vector, "momentum_residual");
  detail::require_same_grid(Sigma, rho.center, "momentum_residual");
  detail::require_same_grid(a, rho.center, "momentum_residual");
  const GridField momentum_rate =
      time_derivative(multiply(rho.minus, v.minus), multiply(rho.center, v.center), multiply(rho.plus, v.plus), h_t);
  const GridField flux = grid_divergence_matrix(multiply(rho.center, Sigma), order);
  const GridField force = multiply(rho.center, a);
  GridField res = axpy(axpy(momentum_rate, 1.0, flux), -1.0, force);
  detail::finalize_mask(res, res.grid());
  auto r = make_report(std::move(res), [&](std::size_t n) {
    return rho.center.at(n) * (a.vector(n).norm() + v.center.vector(n).norm());
  });
  r.flux_scale = detail::rms_norm(flux);
  return r;
}

// div(rho Pi) - rho a. Reference scale: rho |a|.
inline ResidualReport balance_residual(const GridField& rho, const GridField& Pi, const GridField& a,
                                       StencilOrder order = kDefaultStencil) {
  detail::require_rank(rho, Rank::scalar, "balance_residual");
  detail::require_rank(Pi, Rank::matrix, "balance_residual");
  detail::require_rank(a, Rank::vector, "balance_residual");
  detail::require_same_grid(rho, Pi, "balance_residual");
  detail::require_same_grid(rho, a, "balance_residual");
  const GridField stress = grid_divergence_matrix(multiply(rho, Pi), order);
  GridField res = axpy(stress, -1.0, multiply(rho, a));
  detail::finalize_mask(res, res.grid());
  auto r = make_report(std::move(res), [&](std::size_t n) { return rho.at(n) * a.vector(n).norm(); });
  r.flux_scale = detail::rms_norm(stress);
  return r;
}

// d/dt rho + div(rho v). Reference scale: |d/dt rho| + rho (density over
// unit time), which stays positive when both terms vanish identically.
inline ResidualReport continuity_residual(FieldTriple rho, FieldTriple v, double h_t,
                                          StencilOrder order = kDefaultStencil) {
  detail::require_rank(rho.center, Rank::scalar, "continuity_residual");
  detail::require_rank(v.center, Rank::vector, "continuity_residual");
  detail::require_same_grid(rho.center, v.center, "continuity_residual");
  const GridField drho = time_derivative(rho.minus, rho.center, rho.plus, h_t);
  const GridField flux = grid_divergence_vector(multiply(rho.center, v.center), order);
  GridField res = axpy(drho, 1.0, flux);
  detail::finalize_mask(res, res.grid());
  return make_report(std::move(res), [&](std::size_t n) { return std::abs(drho.at(n)) + rho.center.at(n); });
}

// Norms of a material-derivative field. Reference scale: |a| + |v|.
inline ResidualReport material_report(const GridField& Dv, const GridField& v, const GridField& a) {
  GridField res = Dv;
  return make_report(std::move(res), [&](std::size_t n) { return a.vector(n).norm() + v.vector(n).norm(); });
}

// ---------------------------------------------------------------------------
// CSV export: one row per node, coordinates then components. Masked nodes
// carry the literal "nan".

namespace detail {

inline void put_double(std::ostream& os, double x) {
  if (!std::isfinite(x)) {
    os << "nan";
    return;
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  os.write(buf, res.ptr - buf);
}

}  // namespace detail

inline std::vector<std::string> component_names(const std::string& base, Rank rank, std::size_t d) {
  std::vector<std::string> names;
  switch (rank) {
    case Rank::scalar: names.push_back(base); break;
    case Rank::vector:
      for (std::size_t i = 0; i < d; ++i) names.push_back(base + std::to_string(i + 1));
      break;
    case Rank::matrix:
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) names.push_back(base + std::to_string(i + 1) + std::to_string(j + 1));
      break;
  }
  return names;
}

inline void write_field_csv(std::ostream& os, const GridField& f, const std::string& name) {
  const std::size_t d = f.dim();
  for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << "x" << (j + 1);
  for (const auto& c : component_names(name, f.rank(), d)) os << "," << c;
  os << "\n";
  for (std::size_t n = 0; n < f.nodes(); ++n) {
    const Vec x = f.grid().coords(n);
    for (std::size_t j = 0; j < d; ++j) {
      if (j) os << ",";
      detail::put_double(os, x[static_cast<Eigen::Index>(j)]);
    }
    const bool ok = f.grid().admissible(n);
    for (std::size_t c = 0; c < f.comps(); ++c) {
      os << ",";
      if (ok) detail::put_double(os, f.at(n, c));
      else os << "nan";
    }
    os << "\n";
  }
}

}  // namespace straightflow
