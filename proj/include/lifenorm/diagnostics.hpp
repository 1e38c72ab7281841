#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"

namespace lifenorm {

enum class Phase { Warmup, Target };

inline const char* phase_name(Phase p) {
  return p == Phase::Warmup ? "warmup" : "target";
}

/// One row of the per-step log. Fields that a given run cannot produce
/// (no ground truth, no update this step, no editable parameter) stay unset.
struct StepRecord {
  std::int64_t step = 0;
  Phase phase = Phase::Target;
  std::optional<double> mean_mse;
  std::optional<double> cov_spec_err;
  double mu_drift = 0.0;     // ||mu_hat_t - mu_hat_{t-1}||_2
  double sigma_drift = 0.0;  // ||sigma_hat_t - sigma_hat_{t-1}||_F
  std::optional<double> update_fro_norm;
  std::optional<double> cos_prev;
  double cond_number = 0.0;
  double lambda_max = 0.0;
  std::optional<double> whiten_identity_dev;
  std::optional<double> efficacy;
  std::optional<double> retention;
  std::optional<double> bias_norm;
  std::optional<double> spec_norm;
};

inline double mean_mse(const Eigen::VectorXd& mu_hat,
                       const Eigen::VectorXd& mu_true) {
  if (mu_hat.size() != mu_true.size())
    throw DimensionError("mean_mse: dimension mismatch");
  return (mu_hat - mu_true).squaredNorm();
}

namespace detail {

inline void require_symmetric(const Eigen::MatrixXd& a, const std::string& who) {
  if (a.rows() != a.cols()) throw DimensionError(who + ": matrix not square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw NumericalError(who + ": matrix is not symmetric");
}

}  // namespace detail

/// Spectral norm of the difference of two symmetric matrices.
inline double cov_spectral_error(const Eigen::MatrixXd& a,
                                 const Eigen::MatrixXd& b) {
  detail::require_symmetric(a, "cov_spectral_error");
  detail::require_symmetric(b, "cov_spectral_error");
  if (a.rows() != b.rows())
    throw DimensionError("cov_spectral_error: dimension mismatch");
  const Eigen::MatrixXd diff = 0.5 * ((a - b) + (a - b).transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff);
  if (es.info() != Eigen::Success)
    throw NumericalError("cov_spectral_error: eigendecomposition failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Frobenius cosine between consecutive updates; absent when either matrix
/// has zero norm.
inline std::optional<double> cosine_adjacent(const Eigen::MatrixXd& current,
                                             const Eigen::MatrixXd& previous) {
  if (current.rows() != previous.rows() || current.cols() != previous.cols())
    throw DimensionError("cosine_adjacent: shape mismatch");
  const double nc = current.norm();
  const double np = previous.norm();
  if (nc == 0.0 || np == 0.0) return std::nullopt;
  return current.cwiseProduct(previous).sum() / (nc * np);
}

/// Warm-versus-cold comparison of target-phase mean-error curves. The warm
/// run saw r extra warm-up steps before its target phase; the cold run saw
/// none. fraction_warm_le_cold compares equal target ordinals; the ratios
/// pit warm step t against cold step r + t, the same total data budget.
struct ShiftSummary {
  double fraction_warm_le_cold = 0.0;
  double median_ratio = 0.0;
  std::int64_t steps_compared = 0;
  std::int64_t ratio_pairs = 0;
};

inline ShiftSummary curve_shift(const std::vector<double>& warm_mse,
                                const std::vector<double>& cold_mse,
                                std::int64_t r) {
  if (warm_mse.empty() || cold_mse.empty())
    throw DimensionError("curve_shift: empty error curves");
  if (r < 0) throw ConfigError("curve_shift: negative warm-up length");
  ShiftSummary s;
  const std::size_t compared = std::min(warm_mse.size(), cold_mse.size());
  std::size_t le = 0;
  for (std::size_t t = 0; t < compared; ++t)
    if (warm_mse[t] <= cold_mse[t]) ++le;
  s.steps_compared = static_cast<std::int64_t>(compared);
  s.fraction_warm_le_cold =
      static_cast<double>(le) / static_cast<double>(compared);
  std::vector<double> ratios;
  for (std::size_t t = 0; t + static_cast<std::size_t>(r) < cold_mse.size() &&
                          t < warm_mse.size();
       ++t) {
    const double denom = cold_mse[t + static_cast<std::size_t>(r)];
    if (denom > 0.0) ratios.push_back(warm_mse[t] / denom);
  }
  s.ratio_pairs = static_cast<std::int64_t>(ratios.size());
  if (!ratios.empty()) {
    std::sort(ratios.begin(), ratios.end());
    const std::size_t mid = ratios.size() / 2;
    s.median_ratio = ratios.size() % 2 == 1
                         ? ratios[mid]
                         : 0.5 * (ratios[mid - 1] + ratios[mid]);
  }
  return s;
}

}  // namespace lifenorm
