#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>

#include "diag_stats.hpp"
#include "errors.hpp"

namespace lifenorm {

/// Sufficient statistics of one gradient batch: sample count, sample mean,
/// and the centered scatter matrix  sum_i (v_i - vbar)(v_i - vbar)^T.
struct BatchSummary {
  std::int64_t n = 0;
  Eigen::VectorXd v_bar;
  Eigen::MatrixXd scatter;
};

/// Normal-inverse-Wishart posterior hyperparameters (m, kappa, psi, nu) over
/// a drifting gradient distribution, together with diagonal running
/// statistics of the hidden inputs that accompany the gradients.
struct NiwState {
  Eigen::VectorXd m;
  double kappa = 0.0;
  Eigen::MatrixXd psi;
  double nu = 0.0;
  DiagStats h_stats;

  Eigen::Index dim() const { return m.size(); }
};

/// Point estimates read off the posterior. dof_clamped flags steps where the
/// degrees-of-freedom denominator nu - d - 1 was below one and got clamped.
struct PosteriorEstimates {
  Eigen::VectorXd mu_hat;
  Eigen::MatrixXd sigma_hat;
  bool dof_clamped = false;
};

/// Uninformative prior: m = 0, kappa = nu = 0, psi = epsilon_0 * I, and
/// zeroed hidden-input statistics over d_h dimensions.
inline NiwState init_prior(Eigen::Index d, Eigen::Index d_h, double epsilon_0) {
  if (d <= 0) throw ConfigError("init_prior: d must be positive");
  if (d_h < 0) throw ConfigError("init_prior: d_h must be nonnegative");
  if (!(epsilon_0 > 0.0))
    throw ConfigError("init_prior: epsilon_0 must be positive");
  NiwState s;
  s.m = Eigen::VectorXd::Zero(d);
  s.psi = epsilon_0 * Eigen::MatrixXd::Identity(d, d);
  s.h_stats = DiagStats(d_h);
  return s;
}

/// Reduces a batch (columns are samples) to its sufficient statistics. The
/// scatter is built from a symmetric rank update, so it is exactly symmetric,
/// and it is exactly zero for a single sample.
inline BatchSummary summarize_batch(
    const Eigen::Ref<const Eigen::MatrixXd>& samples) {
  if (samples.cols() == 0) throw DimensionError("summarize_batch: empty batch");
  if (samples.rows() == 0)
    throw DimensionError("summarize_batch: zero-dimensional samples");
  BatchSummary b;
  b.n = samples.cols();
  b.v_bar = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - b.v_bar;
  Eigen::MatrixXd sc = Eigen::MatrixXd::Zero(samples.rows(), samples.rows());
  sc.selfadjointView<Eigen::Lower>().rankUpdate(centered);
  b.scatter = sc.selfadjointView<Eigen::Lower>();
  return b;
}

/// One conjugate update:
///   kappa' = kappa + n,  nu' = nu + n,
///   m'     = (kappa m + n vbar) / kappa',
///   psi'   = psi + scatter + (kappa n / kappa') (vbar - m)(vbar - m)^T,
/// followed by an exact symmetrization of psi'. h_stats is untouched.
inline NiwState niw_update(const NiwState& state, const BatchSummary& batch) {
  if (batch.v_bar.size() != state.dim() ||
      batch.scatter.rows() != state.dim() ||
      batch.scatter.cols() != state.dim())
    throw DimensionError("niw_update: batch dimension mismatch");
  if (batch.n <= 0) throw DimensionError("niw_update: batch has no samples");
  const double n = static_cast<double>(batch.n);
  NiwState next = state;
  next.kappa = state.kappa + n;
  next.nu = state.nu + n;
  Eigen::MatrixXd psi = state.psi + batch.scatter;
  if (state.kappa == 0.0) {
    next.m = batch.v_bar;
  } else {
    next.m = (state.kappa * state.m + n * batch.v_bar) / next.kappa;
    const Eigen::VectorXd dev = batch.v_bar - state.m;
    psi += (state.kappa * n / next.kappa) * (dev * dev.transpose());
  }
  next.psi = 0.5 * (psi + psi.transpose());
  return next;
}

/// mu_hat = m and sigma_hat = psi / max(nu - d - 1, 1). The clamp keeps the
/// estimate defined through the first batches; the flag reports when it bit.
inline PosteriorEstimates posterior_estimates(const NiwState& state) {
  const double d = static_cast<double>(state.dim());
  const double raw_denom = state.nu - d - 1.0;
  PosteriorEstimates est;
  est.dof_clamped = raw_denom < 1.0;
  est.mu_hat = state.m;
  est.sigma_hat = state.psi / std::max(raw_denom, 1.0);
  return est;
}

}  // namespace lifenorm
