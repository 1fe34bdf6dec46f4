#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "straightflow/errors.hpp"

namespace straightflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace linalg {

// Relative eigenvalue floor applied when taking roots of PSD matrices.
inline constexpr double kEigenFloor = 1e-12;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// PSD up to a tolerance relative to the largest eigenvalue magnitude.
inline bool is_psd(const Mat& m, double rel_tol = 1e-10) {
  if (m.rows() != m.cols() || !m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() >
      rel_tol * std::max(1.0, m.cwiseAbs().maxCoeff()))
    return false;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  return ev.minCoeff() >= -rel_tol * scale;
}

// Symmetric square root through the eigendecomposition. Eigenvalues below
// kEigenFloor * lambda_max are clamped to zero.
inline Mat sqrtm_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues();
  const double floor = kEigenFloor * std::max(0.0, ev.maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > floor ? std::sqrt(ev[i]) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Inverse symmetric square root; throws when the matrix is singular at the
// same relative floor.
inline Mat inv_sqrtm_pd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues();
  const double floor = kEigenFloor * std::max(0.0, ev.maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (!(ev[i] > floor)) throw InvalidArgument("matrix is singular or not positive definite");
    ev[i] = 1.0 / std::sqrt(ev[i]);
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// True when min eigenvalue < 1e-12 * trace (the degeneracy rule for marginals).
inline bool is_degenerate_cov(const Mat& cov) {
  const double tr = cov.trace();
  if (!(tr > 0.0)) return true;
  return min_eigenvalue(cov) < 1e-12 * tr;
}

}  // namespace linalg
}  // namespace straightflow
