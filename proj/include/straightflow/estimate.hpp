#pragma once

// Kernel estimates of rho_t, v_t, a_t, Sigma_t and Pi_t from one ensemble
// slice: Gaussian product kernel with an isotropic bandwidth, Nadaraya-Watson
// ratios for the conditional moments.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

#include "straightflow/core.hpp"
#include "straightflow/errors.hpp"
#include "straightflow/linalg.hpp"
#include "straightflow/parallel.hpp"

namespace straightflow {

struct KernelConfig {
  std::optional<double> bandwidth;  // empty: Silverman rule
  double density_floor = 25.0;      // minimum effective sample weight

  void validate() const {
    if (bandwidth && !(*bandwidth > 0.0 && std::isfinite(*bandwidth)))
      throw InvalidArgument("kernel bandwidth must be positive");
    if (!(density_floor >= 0.0)) throw InvalidArgument("density_floor must be >= 0");
  }
};

enum class Target { velocity, acceleration };

struct ConditionalEstimate {
  Vec value;
  double effective_n = 0.0;
};

struct SliceEstimate {
  Vec x;
  double rho_hat = 0.0;
  Vec v_hat;
  Vec a_hat;
  Mat Sigma_hat;
  Mat Pi_hat;
  double effective_n = 0.0;
};

// Pi = Sigma - v v^T, symmetrized. Eigenvalues in [-1e-8 tr(Sigma), 0) are
// clipped to zero; anything more negative means the moments cannot come from
// one distribution.
inline Mat reynolds_tensor(const Mat& Sigma, const Vec& v) {
  if (Sigma.rows() != Sigma.cols() || Sigma.rows() != v.size())
    throw InvalidArgument("reynolds_tensor: shapes disagree");
  if (!Sigma.allFinite() || !v.allFinite()) throw NonFiniteInput("reynolds_tensor: non-finite input");
  const Mat P = linalg::symmetrize(Sigma - v * v.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(P);
  Vec ev = es.eigenvalues();
  const double tol = 1e-8 * std::abs(Sigma.trace());
  if (ev.minCoeff() < -tol) throw InconsistentMoments("second moment is smaller than the squared mean");
  if (ev.minCoeff() >= 0.0) return P;
  ev = ev.cwiseMax(0.0);
  return linalg::symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

inline double silverman_bandwidth(const RowMat& positions) {
  const auto n = positions.rows();
  const auto d = positions.cols();
  if (n < 2) throw InvalidArgument("bandwidth_silverman: need at least two samples");
  double sd_sum = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = positions.col(j).mean();
    const double var = (positions.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
    sd_sum += std::sqrt(var);
  }
  const double sigma = sd_sum / static_cast<double>(d);
  if (!(sigma > 0.0)) throw DegenerateData("bandwidth_silverman: slice has zero variance");
  return sigma * std::pow(4.0 / ((static_cast<double>(d) + 2.0) * static_cast<double>(n)),
                          1.0 / (static_cast<double>(d) + 4.0));
}

inline double bandwidth_silverman(const PathEnsemble& ens, std::size_t t_index) {
  return silverman_bandwidth(ens.slice(t_index).positions);
}

// Kernel estimator bound to one slice. Samples are sorted by their first
// coordinate so a query only visits samples within kCutoff bandwidths along
// that axis; the weights dropped there are below exp(-kCutoff^2 / 2).
class KernelEstimator {
 public:
  static constexpr double kCutoff = 7.0;

  KernelEstimator(const EnsembleSlice& slice, const KernelConfig& cfg) : cfg_(cfg), t_(slice.t) {
    cfg_.validate();
    n_ = static_cast<std::size_t>(slice.positions.rows());
    d_ = static_cast<std::size_t>(slice.positions.cols());
    if (n_ == 0) throw InvalidArgument("kernel estimator needs samples");
    if (!slice.positions.allFinite() || !slice.velocities.allFinite() || !slice.accelerations.allFinite())
      throw NonFiniteInput("ensemble slice contains non-finite values");
    h_ = cfg_.bandwidth ? *cfg_.bandwidth : silverman_bandwidth(slice.positions);

    std::vector<std::size_t> order(n_);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return slice.positions(static_cast<Eigen::Index>(a), 0) < slice.positions(static_cast<Eigen::Index>(b), 0);
    });
    key_.resize(n_);
    pos_.resize(n_ * d_);
    vel_.resize(n_ * d_);
    acc_.resize(n_ * d_);
    rank_.resize(n_);
    for (std::size_t r = 0; r < n_; ++r) {
      const auto i = static_cast<Eigen::Index>(order[r]);
      rank_[order[r]] = r;
      key_[r] = slice.positions(i, 0);
      for (std::size_t j = 0; j < d_; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        pos_[r * d_ + j] = slice.positions(i, jj);
        vel_[r * d_ + j] = slice.velocities(i, jj);
        acc_[r * d_ + j] = slice.accelerations(i, jj);
      }
    }
  }

  double bandwidth() const { return h_; }
  double time() const { return t_; }
  std::size_t size() const { return n_; }
  std::size_t dim() const { return d_; }
  const KernelConfig& config() const { return cfg_; }

  // Sum of unnormalized kernel weights exp(-|x - X_i|^2 / 2h^2).
  double effective_n(const Vec& x) const { return accumulate(x, false, false, false).weight; }

  double density(const Vec& x) const {
    const double w = effective_n(x);
    return w / (static_cast<double>(n_) * std::pow(2.0 * std::numbers::pi * h_ * h_, 0.5 * static_cast<double>(d_)));
  }

  ConditionalEstimate conditional(const Vec& x, Target target) const {
    const auto s = accumulate(x, target == Target::velocity, target == Target::acceleration, false);
    require_mass(s.weight);
    return {(target == Target::velocity ? s.vel : s.acc) / s.weight, s.weight};
  }

  Mat second_moment(const Vec& x) const {
    const auto s = accumulate(x, false, false, true);
    require_mass(s.weight);
    return linalg::symmetrize(s.vel2 / s.weight);
  }

  SliceEstimate estimate(const Vec& x) const {
    const auto s = accumulate(x, true, true, true);
    require_mass(s.weight);
    SliceEstimate e;
    e.x = x;
    e.effective_n = s.weight;
    e.rho_hat =
        s.weight / (static_cast<double>(n_) * std::pow(2.0 * std::numbers::pi * h_ * h_, 0.5 * static_cast<double>(d_)));
    e.v_hat = s.vel / s.weight;
    e.a_hat = s.acc / s.weight;
    e.Sigma_hat = linalg::symmetrize(s.vel2 / s.weight);
    e.Pi_hat = reynolds_tensor(e.Sigma_hat, e.v_hat);
    if (!e.Pi_hat.allFinite()) throw NonFiniteInput("non-finite Reynolds tensor estimate");
    return e;
  }

  // Velocity regression at sample i with sample i left out. Returns the
  // estimate and the remaining kernel mass.
  ConditionalEstimate velocity_leave_one_out(std::size_t i) const {
    const std::size_t r = rank_[i];
    const Eigen::Map<const Vec> x(pos_.data() + r * d_, static_cast<Eigen::Index>(d_));
    auto s = accumulate(Vec(x), true, false, false);
    const Eigen::Map<const Vec> vi(vel_.data() + r * d_, static_cast<Eigen::Index>(d_));
    s.weight -= 1.0;
    s.vel -= vi;
    require_mass(s.weight);
    return {s.vel / s.weight, s.weight};
  }

  Vec sample_velocity(std::size_t i) const {
    const std::size_t r = rank_[i];
    return Eigen::Map<const Vec>(vel_.data() + r * d_, static_cast<Eigen::Index>(d_));
  }

 private:
  struct Sums {
    double weight = 0.0;
    Vec vel;
    Vec acc;
    Mat vel2;
  };

  void require_mass(double w) const {
    if (!(w >= cfg_.density_floor) || !(w > 0.0))
      throw LowDensity("kernel mass " + std::to_string(w) + " below density floor", w);
  }

  Sums accumulate(const Vec& x, bool want_vel, bool want_acc, bool want_vel2) const {
    if (static_cast<std::size_t>(x.size()) != d_) throw InvalidArgument("query dimension mismatch");
    if (!x.allFinite()) throw NonFiniteInput("non-finite query point");
    const double reach = kCutoff * h_;
    const auto lo = std::lower_bound(key_.begin(), key_.end(), x[0] - reach) - key_.begin();
    const auto hi = std::upper_bound(key_.begin(), key_.end(), x[0] + reach) - key_.begin();
    const double inv2h2 = 1.0 / (2.0 * h_ * h_);
    Sums s;
    const auto d = static_cast<Eigen::Index>(d_);
    s.vel = Vec::Zero(d);
    s.acc = Vec::Zero(d);
    s.vel2 = Mat::Zero(d, d);
    const double* xp = x.data();
    for (auto r = static_cast<std::size_t>(lo); r < static_cast<std::size_t>(hi); ++r) {
      const double* p = pos_.data() + r * d_;
      double r2 = 0.0;
      for (std::size_t j = 0; j < d_; ++j) {
        const double diff = p[j] - xp[j];
        r2 += diff * diff;
      }
      const double w = std::exp(-r2 * inv2h2);
      s.weight += w;
      const double* v = vel_.data() + r * d_;
      if (want_vel)
        for (std::size_t j = 0; j < d_; ++j) s.vel[static_cast<Eigen::Index>(j)] += w * v[j];
      if (want_acc) {
        const double* a = acc_.data() + r * d_;
        for (std::size_t j = 0; j < d_; ++j) s.acc[static_cast<Eigen::Index>(j)] += w * a[j];
      }
      if (want_vel2)
        for (std::size_t j = 0; j < d_; ++j)
          for (std::size_t k = 0; k < d_; ++k)
            s.vel2(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) += w * v[j] * v[k];
    }
    return s;
  }

  KernelConfig cfg_;
  double t_ = 0.0;
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  double h_ = 0.0;
  std::vector<double> key_;
  std::vector<double> pos_;
  std::vector<double> vel_;
  std::vector<double> acc_;
  std::vector<std::size_t> rank_;  // original index -> sorted row
};

inline double kde_density(const PathEnsemble& ens, std::size_t t_index, const Vec& x, const KernelConfig& cfg) {
  return KernelEstimator(ens.slice(t_index), cfg).density(x);
}

inline ConditionalEstimate nw_conditional(const PathEnsemble& ens, std::size_t t_index, const Vec& x, Target target,
                                          const KernelConfig& cfg) {
  return KernelEstimator(ens.slice(t_index), cfg).conditional(x, target);
}

inline Mat nw_second_moment(const PathEnsemble& ens, std::size_t t_index, const Vec& x, const KernelConfig& cfg) {
  return KernelEstimator(ens.slice(t_index), cfg).second_moment(x);
}

// Monte Carlo estimate of E[Tr Pi_t(X_t)] through the law of total variance,
// E[Tr Pi] = E|dX - v(X)|^2, with v estimated leave-one-out at sample points.
// Only the first `max_queries` samples serve as query points (samples are
// i.i.d., so this is a uniform subsample); points refused for low density are
// counted and skipped.
struct TraceEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t used = 0;
  std::size_t refused = 0;

  double refused_fraction() const {
    const auto total = used + refused;
    return total == 0 ? 1.0 : static_cast<double>(refused) / static_cast<double>(total);
  }
};

inline TraceEstimate expected_reynolds_trace(const KernelEstimator& est, std::size_t max_queries) {
  const std::size_t m = std::min(max_queries, est.size());
  std::vector<double> vals(m, 0.0);
  std::vector<unsigned char> ok(m, 0);
  parallel_for(m, [&](std::size_t i) {
    try {
      const auto c = est.velocity_leave_one_out(i);
      vals[i] = (est.sample_velocity(i) - c.value).squaredNorm();
      ok[i] = 1;
    } catch (const LowDensity&) {
    }
  });
  TraceEstimate out;
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!ok[i]) {
      ++out.refused;
      continue;
    }
    ++out.used;
    sum += vals[i];
    sum2 += vals[i] * vals[i];
  }
  if (out.used == 0) return out;
  const double n = static_cast<double>(out.used);
  out.mean = sum / n;
  const double var = out.used > 1 ? std::max(0.0, (sum2 - n * out.mean * out.mean) / (n - 1.0)) : 0.0;
  out.standard_error = std::sqrt(var / n);
  if (!std::isfinite(out.mean)) throw NonFiniteInput("non-finite Reynolds trace estimate");
  return out;
}

}  // namespace straightflow
