#pragma once

// Closed-form ensemble fields for jointly Gaussian interpolants.
//
// With (X0, X1, Z) jointly Gaussian, the triple (X_t, dX_t, ddX_t) is jointly
// Gaussian for every t, so conditioning on X_t = x is linear regression:
//
//   m_t   = alpha m0 + beta m1
//   S_t   = alpha^2 S00 + alpha beta (S01 + S10) + beta^2 S11 + gamma^2 I
//   C_v   = Cov(dX_t, X_t)
//         = alpha' alpha S00 + alpha' beta S01 + beta' alpha S10 + beta' beta S11 + gamma' gamma I
//   C_a   = Cov(ddX_t, X_t)   (same with second derivatives in the left slot)
//   v(x)  = E[dX_t] + C_v S_t^{-1} (x - m_t)
//   a(x)  = E[ddX_t] + C_a S_t^{-1} (x - m_t)
//   Pi    = Cov(dX_t) - C_v S_t^{-1} C_v^T          (independent of x)
//   Sigma = Pi + v v^T
//
// where S10 = S01^T and Cov(dX_t) = alpha'^2 S00 + alpha' beta' (S01 + S10)
// + beta'^2 S11 + gamma'^2 I.

#include <cmath>
#include <numbers>
#include <optional>

#include "straightflow/core.hpp"
#include "straightflow/errors.hpp"
#include "straightflow/linalg.hpp"

namespace straightflow {

struct GaussianProcessSpec {
  Vec mean0;
  Vec mean1;
  Mat S00;
  Mat S01;  // Cov(X0, X1)
  Mat S11;
  Coefficient alpha = Coefficient::one_minus_t();
  Coefficient beta = Coefficient::identity();
  std::optional<Coefficient> gamma;  // latent covariance is the identity

  std::size_t dim() const { return static_cast<std::size_t>(mean0.size()); }

  Mat joint_cov() const {
    const auto d = mean0.size();
    Mat J(2 * d, 2 * d);
    J << S00, S01, S01.transpose(), S11;
    return J;
  }

  void validate() const {
    const auto d = mean0.size();
    if (d == 0 || mean1.size() != d || S00.rows() != d || S00.cols() != d || S01.rows() != d ||
        S01.cols() != d || S11.rows() != d || S11.cols() != d)
      throw InvalidArgument("Gaussian process blocks have inconsistent shapes");
    if (!linalg::is_psd(joint_cov(), 1e-9)) throw InvalidCoupling("joint endpoint covariance is not PSD");
  }
};

// Gaussian description of a process, available when the coupling is Gaussian
// end to end. Throws CapabilityError otherwise.
inline GaussianProcessSpec gaussian_spec(const ProcessSpec& p) {
  const auto& c = p.coupling;
  GaussianProcessSpec g;
  g.alpha = p.alpha;
  g.beta = p.beta;
  g.gamma = p.gamma;
  switch (c.kind) {
    case CouplingKind::independent: {
      if (!is_gaussian(c.mu0) || !is_gaussian(c.mu1))
        throw CapabilityError("closed-form fields need Gaussian endpoint laws");
      const auto& g0 = std::get<GaussianLaw>(c.mu0);
      const auto& g1 = std::get<GaussianLaw>(c.mu1);
      g.mean0 = g0.mean;
      g.mean1 = g1.mean;
      g.S00 = g0.cov;
      g.S11 = g1.cov;
      g.S01 = Mat::Zero(g0.cov.rows(), g1.cov.cols());
      break;
    }
    case CouplingKind::deterministic_map: {
      if (!is_gaussian(c.mu0)) throw CapabilityError("closed-form fields need a Gaussian source law");
      const auto& g0 = std::get<GaussianLaw>(c.mu0);
      const auto& T = *c.map;
      g.mean0 = g0.mean;
      g.mean1 = T(g0.mean);
      g.S00 = g0.cov;
      g.S01 = g0.cov * T.A.transpose();
      g.S11 = linalg::symmetrize(T.A * g0.cov * T.A.transpose());
      break;
    }
    case CouplingKind::gaussian_joint: {
      const auto d = c.joint->mean.size() / 2;
      g.mean0 = c.joint->mean.head(d);
      g.mean1 = c.joint->mean.tail(d);
      g.S00 = c.joint->cov.topLeftCorner(d, d);
      g.S01 = c.joint->cov.topRightCorner(d, d);
      g.S11 = c.joint->cov.bottomRightCorner(d, d);
      break;
    }
  }
  g.validate();
  return g;
}

struct FieldValues {
  double rho = 0.0;
  Vec v;
  Vec a;
  Mat Sigma;
  Mat Pi;
};

struct MarginalMoments {
  Vec mean;
  Mat cov;
  bool degenerate = false;
};

inline MarginalMoments marginal_moments(const GaussianProcessSpec& s, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("marginal_moments: t must lie in [0, 1]");
  const double al = s.alpha.value(t), be = s.beta.value(t);
  const double ga = s.gamma ? s.gamma->value(t) : 0.0;
  const auto d = s.mean0.size();
  MarginalMoments m;
  m.mean = al * s.mean0 + be * s.mean1;
  m.cov = al * al * s.S00 + al * be * (s.S01 + s.S01.transpose()) + be * be * s.S11 +
          ga * ga * Mat::Identity(d, d);
  m.cov = linalg::symmetrize(m.cov);
  m.degenerate = linalg::is_degenerate_cov(m.cov);
  return m;
}

// Everything at one time that does not depend on x. Building it once and
// evaluating many points is how grids and flows use the oracle.
class GaussianSlice {
 public:
  GaussianSlice(const GaussianProcessSpec& s, double t) : t_(t) {
    const auto mm = marginal_moments(s, t);
    if (mm.degenerate) throw DegenerateMarginal("marginal covariance is singular at t=" + std::to_string(t));
    const auto d = s.mean0.size();
    const Mat I = Mat::Identity(d, d);
    const Mat S10 = s.S01.transpose();
    const double a0 = s.alpha.value(t), a1 = s.alpha.d1(t), a2 = s.alpha.d2(t);
    const double b0 = s.beta.value(t), b1 = s.beta.d1(t), b2 = s.beta.d2(t);
    const double g0 = s.gamma ? s.gamma->value(t) : 0.0;
    const double g1 = s.gamma ? s.gamma->d1(t) : 0.0;
    const double g2 = s.gamma ? s.gamma->d2(t) : 0.0;

    mean_ = mm.mean;
    cov_ = mm.cov;
    Eigen::LLT<Mat> llt(cov_);
    if (llt.info() != Eigen::Success) throw DegenerateMarginal("marginal covariance is not positive definite");
    cov_inv_ = llt.solve(I);
    log_norm_ = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                Eigen::Matrix<double, Eigen::Dynamic, 1>(llt.matrixLLT().diagonal()).array().log().sum();

    const Mat Cv = a1 * a0 * s.S00 + a1 * b0 * s.S01 + b1 * a0 * S10 + b1 * b0 * s.S11 + g1 * g0 * I;
    const Mat Ca = a2 * a0 * s.S00 + a2 * b0 * s.S01 + b2 * a0 * S10 + b2 * b0 * s.S11 + g2 * g0 * I;
    const Mat cov_vel = a1 * a1 * s.S00 + a1 * b1 * (s.S01 + S10) + b1 * b1 * s.S11 + g1 * g1 * I;
    vel_mean_ = a1 * s.mean0 + b1 * s.mean1;
    acc_mean_ = a2 * s.mean0 + b2 * s.mean1;
    vel_gain_ = Cv * cov_inv_;
    acc_gain_ = Ca * cov_inv_;
    Pi_ = linalg::symmetrize(cov_vel - vel_gain_ * Cv.transpose());
  }

  double t() const { return t_; }
  const Vec& mean() const { return mean_; }
  const Mat& cov() const { return cov_; }
  const Mat& Pi() const { return Pi_; }
  // Jacobian of v in x.
  const Mat& velocity_gain() const { return vel_gain_; }
  const Mat& acceleration_gain() const { return acc_gain_; }

  double rho(const Vec& x) const {
    const Vec r = x - mean_;
    return std::exp(log_norm_ - 0.5 * r.dot(cov_inv_ * r));
  }
  Vec v(const Vec& x) const { return vel_mean_ + vel_gain_ * (x - mean_); }
  Vec a(const Vec& x) const { return acc_mean_ + acc_gain_ * (x - mean_); }

  FieldValues fields(const Vec& x) const {
    FieldValues f;
    f.rho = rho(x);
    f.v = v(x);
    f.a = a(x);
    f.Pi = Pi_;
    f.Sigma = Pi_ + f.v * f.v.transpose();
    return f;
  }

 private:
  double t_;
  Vec mean_;
  Mat cov_;
  Mat cov_inv_;
  double log_norm_ = 0.0;
  Vec vel_mean_;
  Vec acc_mean_;
  Mat vel_gain_;
  Mat acc_gain_;
  Mat Pi_;
};

inline FieldValues conditional_fields(const GaussianProcessSpec& s, double t, const Vec& x) {
  return GaussianSlice(s, t).fields(x);
}

// Bures-Wasserstein map between N(m0, S0) and N(m1, S1):
//   A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2},  b = m1 - A m0.
inline AffineMap gaussian_ot_map(const Vec& m0, const Mat& S0, const Vec& m1, const Mat& S1) {
  if (S0.rows() != S0.cols() || S1.rows() != S1.cols() || S0.rows() != S1.rows() || m0.size() != S0.rows() ||
      m1.size() != S1.rows())
    throw InvalidArgument("gaussian_ot_map: shapes disagree");
  if (!linalg::is_psd(S0, 1e-9) || !linalg::is_psd(S1, 1e-9))
    throw InvalidArgument("gaussian_ot_map: covariances must be symmetric PSD");
  const Mat r0 = linalg::sqrtm_psd(S0);
  const Mat r0_inv = linalg::inv_sqrtm_pd(S0);  // throws when S0 is singular
  const Mat middle = linalg::sqrtm_psd(r0 * S1 * r0);
  AffineMap T;
  T.A = linalg::symmetrize(r0_inv * middle * r0_inv);
  T.b = m1 - T.A * m0;
  return T;
}

struct MaterialDerivative {
  Vec value;
  bool one_sided = false;  // lower-accuracy stencil near t in {0, 1}
};

inline constexpr double kAnalyticTimeStep = 1e-5;

// D_t v = d/dt v + (v . grad) v. The time part is differenced with step
// h_t; the spatial part is exact because v is affine in x.
inline MaterialDerivative material_derivative_analytic(const GaussianProcessSpec& s, double t, const Vec& x,
                                                       double h_t = kAnalyticTimeStep) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("material_derivative_analytic: t must lie in [0, 1]");
  const GaussianSlice here(s, t);
  MaterialDerivative out;
  Vec dvdt;
  if (t - h_t >= 0.0 && t + h_t <= 1.0) {
    dvdt = (GaussianSlice(s, t + h_t).v(x) - GaussianSlice(s, t - h_t).v(x)) / (2.0 * h_t);
  } else if (t - h_t < 0.0) {
    out.one_sided = true;
    dvdt = (-3.0 * here.v(x) + 4.0 * GaussianSlice(s, t + h_t).v(x) - GaussianSlice(s, t + 2 * h_t).v(x)) /
           (2.0 * h_t);
  } else {
    out.one_sided = true;
    dvdt = (3.0 * here.v(x) - 4.0 * GaussianSlice(s, t - h_t).v(x) + GaussianSlice(s, t - 2 * h_t).v(x)) /
           (2.0 * h_t);
  }
  const Vec v = here.v(x);
  out.value = dvdt + here.velocity_gain() * v;
  return out;
}

}  // namespace straightflow
