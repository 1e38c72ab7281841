#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "errors.hpp"

namespace lifenorm {

/// Eigenvalue floors applied before inverting the covariance estimate:
/// each eigenvalue is raised to max(eig, abs_floor, rel_floor * eig_max).
struct FloorConfig {
  double abs_floor = 1e-10;
  double rel_floor = 1e-8;
};

/// Centering vector plus the symmetric inverse square root of the floored
/// covariance estimate, with the spectral facts recorded for diagnostics.
struct WhiteningTransform {
  Eigen::VectorXd mu_hat;
  Eigen::MatrixXd w;
  int floored_count = 0;
  double lambda_max = 0.0;      // largest eigenvalue before flooring
  double lambda_min_raw = 0.0;  // smallest eigenvalue before flooring
};

struct SpectralReport {
  double condition_number = 0.0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
};

namespace detail {

inline void check_square_symmetric(const Eigen::MatrixXd& a,
                                   const std::string& who) {
  if (a.rows() != a.cols()) throw DimensionError(who + ": matrix not square");
  if (!a.allFinite()) throw NumericalError(who + ": non-finite entries");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw NumericalError(who + ": matrix is not symmetric");
}

/// Deterministic eigenvector orientation: the first nonzero component of
/// every eigenvector is made positive.
inline void fix_eigenvector_signs(Eigen::MatrixXd& vecs) {
  for (Eigen::Index c = 0; c < vecs.cols(); ++c) {
    for (Eigen::Index r = 0; r < vecs.rows(); ++r) {
      const double x = vecs(r, c);
      if (x != 0.0) {
        if (x < 0.0) vecs.col(c) = -vecs.col(c);
        break;
      }
    }
  }
}

struct EigenDecomposition {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

inline EigenDecomposition symmetric_eigs(const Eigen::MatrixXd& a,
                                         const std::string& who) {
  check_square_symmetric(a, who);
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success)
    throw NumericalError(who + ": eigendecomposition failed (matrix norm " +
                         std::to_string(sym.norm()) + ")");
  EigenDecomposition out{es.eigenvalues(), es.eigenvectors()};
  fix_eigenvector_signs(out.vectors);
  return out;
}

}  // namespace detail

/// Builds the whitening map v -> w (v - mu_hat) with
/// w = Q diag(floored eigs)^{-1/2} Q^T from a symmetric eigendecomposition
/// of sigma_hat.
inline WhiteningTransform build_transform(const Eigen::VectorXd& mu_hat,
                                          const Eigen::MatrixXd& sigma_hat,
                                          const FloorConfig& floor = {}) {
  if (mu_hat.size() != sigma_hat.rows())
    throw DimensionError("build_transform: mu_hat and sigma_hat disagree");
  if (!mu_hat.allFinite())
    throw NumericalError("build_transform: non-finite mean estimate");
  if (!(floor.abs_floor > 0.0) || floor.rel_floor < 0.0)
    throw ConfigError("build_transform: floors must be positive");
  const auto eig = detail::symmetric_eigs(sigma_hat, "build_transform");
  WhiteningTransform t;
  t.mu_hat = mu_hat;
  t.lambda_max = eig.values.maxCoeff();
  t.lambda_min_raw = eig.values.minCoeff();
  const double cut = std::max(floor.abs_floor, floor.rel_floor * t.lambda_max);
  Eigen::VectorXd inv_sqrt(eig.values.size());
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    double lam = eig.values[i];
    if (lam < cut) {
      lam = cut;
      ++t.floored_count;
    }
    inv_sqrt[i] = 1.0 / std::sqrt(lam);
  }
  Eigen::MatrixXd w =
      eig.vectors * inv_sqrt.asDiagonal() * eig.vectors.transpose();
  t.w = 0.5 * (w + w.transpose());
  return t;
}

inline Eigen::VectorXd whiten(const WhiteningTransform& t,
                              const Eigen::VectorXd& v) {
  if (v.size() != t.mu_hat.size())
    throw DimensionError("whiten: vector dimension mismatch");
  return t.w * (v - t.mu_hat);
}

/// Column-wise whitening of a batch.
inline Eigen::MatrixXd whiten(const WhiteningTransform& t,
                              const Eigen::MatrixXd& batch) {
  if (batch.rows() != t.mu_hat.size())
    throw DimensionError("whiten: batch dimension mismatch");
  return t.w * (batch.colwise() - t.mu_hat);
}

/// Extreme eigenvalues of the covariance estimate and the condition number
/// lambda_max / max(lambda_min, abs_floor).
inline SpectralReport spectral_report(const Eigen::MatrixXd& sigma_hat,
                                      double abs_floor = FloorConfig{}.abs_floor) {
  const auto eig = detail::symmetric_eigs(sigma_hat, "spectral_report");
  SpectralReport r;
  r.lambda_max = eig.values.maxCoeff();
  r.lambda_min = eig.values.minCoeff();
  r.condition_number = r.lambda_max / std::max(r.lambda_min, abs_floor);
  return r;
}

}  // namespace lifenorm
