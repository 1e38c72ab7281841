#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "errors.hpp"
#include "niw.hpp"
#include "whitening.hpp"

namespace lifenorm {

/// One editing batch: hidden inputs h (d_h x n), raw gradients v (d x n),
/// and, when the stream knows them, the per-sample targets y (d x n).
struct EditBatch {
  Eigen::MatrixXd h;
  Eigen::MatrixXd v_raw;
  std::optional<Eigen::MatrixXd> targets;

  Eigen::Index n() const { return v_raw.cols(); }
};

/// How the gradient batch is conditioned before the ridge solve.
///   RawGradient:   v used as is.
///   DiagonalNorm:  (v - mu_hat) / sqrt(diag(sigma_hat)), floored like the
///                  full transform.
///   FullWhitening: w (v - mu_hat) with the symmetric inverse square root.
enum class EditorMode { RawGradient, DiagonalNorm, FullWhitening };

/// Optional elementwise map applied to the conditioned gradient matrix
/// before the solve. Intended for 1-Lipschitz contractions.
using LipschitzHook = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

inline LipschitzHook make_tanh_hook() {
  return [](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
    return m.array().tanh();
  };
}

inline LipschitzHook make_scale_hook(double k) {
  if (!(k > 0.0) || k > 1.0)
    throw ConfigError("scale hook factor must lie in (0, 1]");
  return [k](const Eigen::MatrixXd& m) -> Eigen::MatrixXd { return k * m; };
}

struct EditorConfig {
  double gamma = 1e-3;
  double lambda = 10.0;
  EditorMode mode = EditorMode::FullWhitening;
  FloorConfig floor;
  LipschitzHook hook;  // empty means identity
};

/// Solved update with its Frobenius norm, plus the norms of the
/// signal/bias split when the stream's true mean was available.
struct UpdateMatrix {
  Eigen::MatrixXd delta;
  double fro_norm = 0.0;
  std::optional<double> spec_norm;
  std::optional<double> bias_norm;
};

struct StandardizedHidden {
  Eigen::MatrixXd h_tilde;
  Eigen::VectorXd sq_norms;  // per-column squared norms of h_tilde
};

constexpr double kHiddenStdFloor = 1e-8;

/// Per-dimension standardization of the hidden inputs against the running
/// statistics, with the standard deviation floored at 1e-8.
inline StandardizedHidden standardize_h(
    const Eigen::Ref<const Eigen::MatrixXd>& h, const DiagStats& stats) {
  if (h.rows() != stats.dim())
    throw DimensionError("standardize_h: hidden dimension mismatch");
  if (stats.count() < 1)
    throw DimensionError("standardize_h: statistics hold no samples");
  const Eigen::VectorXd sd = stats.stddev(kHiddenStdFloor);
  StandardizedHidden out;
  out.h_tilde = (h.colwise() - stats.mean()).array().colwise() / sd.array();
  out.sq_norms = out.h_tilde.colwise().squaredNorm();
  return out;
}

/// Rows are phi^i = w_i h_i^T (H H^T + lambda I)^{-1}, solved once through a
/// Cholesky factorization of the Gram-plus-ridge matrix.
inline Eigen::MatrixXd projection_factors(
    const Eigen::Ref<const Eigen::MatrixXd>& h, const Eigen::VectorXd& weights,
    double lambda) {
  if (h.cols() != weights.size())
    throw DimensionError("projection_factors: one weight per sample required");
  if (h.cols() == 0)
    throw DimensionError("projection_factors: empty batch");
  if (lambda < 0.0)
    throw ConfigError("projection_factors: lambda must be nonnegative");
  const Eigen::Index dh = h.rows();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Identity(dh, dh) * lambda;
  gram.selfadjointView<Eigen::Lower>().rankUpdate(h);
  const Eigen::LLT<Eigen::MatrixXd> llt(
      Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>()));
  if (llt.info() != Eigen::Success)
    throw NumericalError(
        "projection_factors: Gram-plus-ridge factorization failed");
  const Eigen::MatrixXd solved = llt.solve(h);  // columns G^{-1} h_i
  return weights.asDiagonal() * solved.transpose();
}

struct RidgeSolution {
  Eigen::MatrixXd delta;
  Eigen::MatrixXd factors;  // projection factors, rows phi^i
};

/// Closed-form ridge update. The matrix form V H^T (H H^T + lambda I)^{-1}
/// and the outer-product sum  -gamma sum_i vt_i phi_i  are both evaluated
/// and must agree to 1e-10; their disagreement signals a conditioning
/// problem worth failing loudly on.
inline RidgeSolution ridge_solve(const Eigen::Ref<const Eigen::MatrixXd>& h,
                                 const Eigen::VectorXd& weights,
                                 const Eigen::MatrixXd& vt,
                                 double gamma, double lambda) {
  if (vt.cols() != h.cols())
    throw DimensionError("ridge_solve: gradient and hidden counts differ");
  const Eigen::Index dh = h.rows();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Identity(dh, dh) * lambda;
  gram.selfadjointView<Eigen::Lower>().rankUpdate(h);
  const Eigen::LLT<Eigen::MatrixXd> llt(
      Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>()));
  if (llt.info() != Eigen::Success)
    throw NumericalError("ridge_solve: Gram-plus-ridge factorization failed");

  const Eigen::MatrixXd v_target = -gamma * vt * weights.asDiagonal();
  const Eigen::MatrixXd vht = v_target * h.transpose();
  RidgeSolution out;
  out.delta = llt.solve(vht.transpose()).transpose();
  out.factors = weights.asDiagonal() * llt.solve(h).transpose();
  const Eigen::MatrixXd delta_sum = -gamma * vt * out.factors;
  const double gap = (out.delta - delta_sum).norm();
  if (gap > 1e-10 * std::max(1.0, out.delta.norm()))
    throw NumericalError("ridge_solve: closed-form mismatch " +
                         std::to_string(gap));
  return out;
}

struct SolveResult {
  UpdateMatrix update;
  WhiteningTransform transform;
  bool dof_clamped = false;
};

namespace detail {

/// Conditioned gradients for a given centering vector under the configured
/// mode; shared by the update itself and by the signal/bias split.
inline Eigen::MatrixXd condition_gradients(const Eigen::MatrixXd& v,
                                           const Eigen::VectorXd& center,
                                           const PosteriorEstimates& est,
                                           const WhiteningTransform& t,
                                           const EditorConfig& cfg) {
  switch (cfg.mode) {
    case EditorMode::RawGradient:
      return v;
    case EditorMode::DiagonalNorm: {
      const Eigen::VectorXd diag = est.sigma_hat.diagonal();
      const double cut =
          std::max(cfg.floor.abs_floor, cfg.floor.rel_floor * diag.maxCoeff());
      const Eigen::VectorXd sd = diag.array().max(cut).sqrt();
      return (v.colwise() - center).array().colwise() / sd.array();
    }
    case EditorMode::FullWhitening:
      return t.w * (v.colwise() - center);
  }
  throw ConfigError("condition_gradients: unknown editor mode");
}

}  // namespace detail

/// Full per-batch solve: condition the gradients under the configured mode,
/// apply the optional hook, and run the closed-form ridge update against the
/// standardized hidden inputs. In RawGradient mode no centering or scaling
/// touches v. When mu_true is supplied, the update is split into the part
/// driven by gradients centered at the true mean and the remainder induced
/// by the estimation bias, and both norms are reported.
inline SolveResult solve_update(const EditBatch& batch, const NiwState& state,
                                const EditorConfig& cfg,
                                const std::optional<Eigen::VectorXd>& mu_true =
                                    std::nullopt) {
  if (batch.v_raw.rows() != state.dim())
    throw DimensionError("solve_update: gradient dimension mismatch");
  if (batch.h.cols() != batch.v_raw.cols())
    throw DimensionError("solve_update: h and v sample counts differ");
  if (batch.n() == 0) throw DimensionError("solve_update: empty batch");
  if (!(cfg.gamma > 0.0)) throw ConfigError("solve_update: gamma must be positive");
  if (cfg.lambda < 0.0) throw ConfigError("solve_update: lambda must be nonnegative");

  const PosteriorEstimates est = posterior_estimates(state);
  SolveResult res;
  res.dof_clamped = est.dof_clamped;
  res.transform = build_transform(est.mu_hat, est.sigma_hat, cfg.floor);

  const StandardizedHidden stand = standardize_h(batch.h, state.h_stats);
  auto hooked = [&cfg](Eigen::MatrixXd m) -> Eigen::MatrixXd {
    if (!cfg.hook) return m;
    Eigen::MatrixXd out = cfg.hook(m);
    if (out.rows() != m.rows() || out.cols() != m.cols())
      throw NumericalError("solve_update: hook changed the matrix shape");
    return out;
  };

  const Eigen::MatrixXd vt = hooked(detail::condition_gradients(
      batch.v_raw, est.mu_hat, est, res.transform, cfg));
  RidgeSolution sol =
      ridge_solve(batch.h, stand.sq_norms, vt, cfg.gamma, cfg.lambda);

  res.update.delta = std::move(sol.delta);
  res.update.fro_norm = res.update.delta.norm();

  if (mu_true) {
    if (mu_true->size() != state.dim())
      throw DimensionError("solve_update: mu_true dimension mismatch");
    // In RawGradient mode centering at the truth (rather than not at all)
    // isolates the persistent global-mean component as the bias part.
    Eigen::MatrixXd zbase;
    if (cfg.mode == EditorMode::RawGradient)
      zbase = batch.v_raw.colwise() - *mu_true;
    else
      zbase = detail::condition_gradients(batch.v_raw, *mu_true, est,
                                          res.transform, cfg);
    const Eigen::MatrixXd zt = hooked(std::move(zbase));
    const Eigen::MatrixXd delta_spec = -cfg.gamma * zt * sol.factors;
    res.update.spec_norm = delta_spec.norm();
    res.update.bias_norm = (res.update.delta - delta_spec).norm();
  }
  return res;
}

}  // namespace lifenorm
