#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "editor.hpp"
#include "errors.hpp"

namespace lifenorm {

/// Ground-truth distribution parameters, reported by simulators that know
/// them analytically. Trace playback carries neither.
struct GroundTruth {
  std::optional<Eigen::VectorXd> mu;
  std::optional<Eigen::MatrixXd> sigma;
};

struct StreamDraw {
  EditBatch batch;
  GroundTruth truth;
};

class StreamSource {
 public:
  virtual ~StreamSource() = default;
  virtual StreamDraw next_batch(Eigen::Index n) = 0;
  /// Applies a solved update to the editable parameter, when the source has
  /// one; the default is a stream with nothing to edit.
  virtual void apply_update(const Eigen::MatrixXd& delta) { (void)delta; }
  virtual bool editable() const { return false; }
  /// Current editable parameter, or nullptr for pure-distribution streams.
  virtual const Eigen::MatrixXd* parameter() const { return nullptr; }
};

namespace detail {

inline Eigen::MatrixXd standard_gaussian(std::mt19937_64& rng,
                                         Eigen::Index rows,
                                         Eigen::Index cols) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

inline Eigen::VectorXd random_unit(std::mt19937_64& rng, Eigen::Index d) {
  Eigen::VectorXd u = standard_gaussian(rng, d, 1).col(0);
  const double norm = u.norm();
  if (norm == 0.0) return Eigen::VectorXd::Unit(d, 0);
  return u / norm;
}

inline Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng,
                                         Eigen::Index d) {
  const Eigen::MatrixXd a = standard_gaussian(rng, d, d);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

inline double spectral_norm_sym(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success)
    throw NumericalError("spectral_norm_sym: eigendecomposition failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Eigenvalue clip of a symmetric matrix into [lo, hi].
inline Eigen::MatrixXd clip_spectrum(const Eigen::MatrixXd& a, double lo,
                                     double hi) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success)
    throw NumericalError("clip_spectrum: eigendecomposition failed");
  Eigen::VectorXd vals = es.eigenvalues().cwiseMax(lo).cwiseMin(hi);
  Eigen::MatrixXd out =
      es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

/// Gaussian gradient stream N(mu_t, Sigma_t) under a bounded drift schedule:
/// per step, ||mu_t - mu_{t-1}|| equals c_mu (k+t)^{-(1+eps_mu)} along a
/// random direction, and the covariance moves by at most
/// c_sigma (k+t)^{-(1+eps_sigma)} in spectral norm while its eigenvalues stay
/// inside [sigma_min, sigma_max]. Hidden inputs are pure standard noise and
/// carry no signal; there is no editable parameter.
struct ScheduledDriftParams {
  double c_mu = 0.0;
  double c_sigma = 0.0;
  double eps_mu = 0.5;
  double eps_sigma = 0.5;
  std::int64_t step_offset = 0;  // the k above, a global-schedule shift
  double mu0_norm = 1.0;
  double sigma0_scale = 1.0;
  double sigma0_cond = 4.0;
  double sigma_min = 1e-3;
  double sigma_max = 10.0;
};

/// Starting distribution of a scheduled stream, drawn separately from the
/// sampling randomness so two phases can share one starting point while
/// consuming independent sample streams.
struct ScheduledInit {
  Eigen::VectorXd mu0;
  Eigen::MatrixXd sigma0;
};

inline ScheduledInit draw_scheduled_init(Eigen::Index d,
                                         const ScheduledDriftParams& p,
                                         std::mt19937_64& rng) {
  if (d < 1) throw ConfigError("draw_scheduled_init: d must be positive");
  if (!(p.sigma_min > 0.0) || p.sigma_max < p.sigma_min)
    throw ConfigError("draw_scheduled_init: bad spectrum bounds");
  if (!(p.sigma0_cond >= 1.0) || !(p.sigma0_scale > 0.0) || p.mu0_norm < 0.0)
    throw ConfigError("draw_scheduled_init: bad initial-distribution shape");
  ScheduledInit init;
  init.mu0 = p.mu0_norm * detail::random_unit(rng, d);
  Eigen::VectorXd eigs(d);
  const double half_span = 0.5 * std::log(p.sigma0_cond);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double frac = d == 1 ? 0.0
                               : 2.0 * static_cast<double>(i) /
                                         static_cast<double>(d - 1) -
                                     1.0;
    eigs[i] = p.sigma0_scale * std::exp(half_span * frac);
  }
  eigs = eigs.cwiseMax(p.sigma_min).cwiseMin(p.sigma_max);
  const Eigen::MatrixXd q = detail::random_orthogonal(rng, d);
  Eigen::MatrixXd sigma0 = q * eigs.asDiagonal() * q.transpose();
  init.sigma0 = 0.5 * (sigma0 + sigma0.transpose());
  return init;
}

class ScheduledDriftSource : public StreamSource {
 public:
  ScheduledDriftSource(Eigen::Index d_h, const ScheduledDriftParams& p,
                       ScheduledInit init, std::mt19937_64 rng)
      : d_(init.mu0.size()),
        d_h_(d_h),
        p_(p),
        rng_(std::move(rng)),
        mu_(std::move(init.mu0)),
        sigma_(std::move(init.sigma0)) {
    if (d_ < 1 || d_h < 1)
      throw ConfigError("ScheduledDriftSource: dimensions must be positive");
    if (sigma_.rows() != d_ || sigma_.cols() != d_)
      throw DimensionError(
          "ScheduledDriftSource: initial covariance shape mismatch");
    if (!(p.sigma_min > 0.0) || p.sigma_max < p.sigma_min)
      throw ConfigError("ScheduledDriftSource: bad spectrum bounds");
    if (p.c_mu < 0.0 || p.c_sigma < 0.0 || p.eps_mu < 0.0 || p.eps_sigma < 0.0)
      throw ConfigError("ScheduledDriftSource: drift constants must be nonnegative");
    if (p.step_offset < 0)
      throw ConfigError("ScheduledDriftSource: step offset must be nonnegative");
    refresh_chol();
  }

  ScheduledDriftSource(Eigen::Index d, Eigen::Index d_h,
                       const ScheduledDriftParams& p, std::mt19937_64 rng)
      : d_(d), d_h_(d_h), p_(p), rng_(std::move(rng)) {
    if (d < 1 || d_h < 1)
      throw ConfigError("ScheduledDriftSource: dimensions must be positive");
    if (p.c_mu < 0.0 || p.c_sigma < 0.0 || p.eps_mu < 0.0 || p.eps_sigma < 0.0)
      throw ConfigError("ScheduledDriftSource: drift constants must be nonnegative");
    if (p.step_offset < 0)
      throw ConfigError("ScheduledDriftSource: step offset must be nonnegative");
    ScheduledInit init = draw_scheduled_init(d, p, rng_);
    mu_ = std::move(init.mu0);
    sigma_ = std::move(init.sigma0);
    refresh_chol();
  }

  StreamDraw next_batch(Eigen::Index n) override {
    if (n < 1) throw DimensionError("next_batch: n must be positive");
    advance();
    StreamDraw draw;
    const Eigen::MatrixXd z = detail::standard_gaussian(rng_, d_, n);
    draw.batch.v_raw = (chol_ * z).colwise() + mu_;
    draw.batch.h = detail::standard_gaussian(rng_, d_h_, n);
    draw.truth.mu = mu_;
    draw.truth.sigma = sigma_;
    return draw;
  }

  const Eigen::VectorXd& mu() const { return mu_; }
  const Eigen::MatrixXd& sigma() const { return sigma_; }

 private:
  void advance() {
    ++t_;
    const double k = static_cast<double>(p_.step_offset + t_);
    const double mu_bound = p_.c_mu * std::pow(k, -(1.0 + p_.eps_mu));
    if (mu_bound > 0.0) mu_ += mu_bound * detail::random_unit(rng_, d_);
    const double sigma_bound = p_.c_sigma * std::pow(k, -(1.0 + p_.eps_sigma));
    if (sigma_bound > 0.0) {
      Eigen::MatrixXd pert = detail::standard_gaussian(rng_, d_, d_);
      pert = 0.5 * (pert + pert.transpose());
      const double pnorm = detail::spectral_norm_sym(pert);
      if (pnorm > 0.0) {
        const Eigen::MatrixXd candidate = detail::clip_spectrum(
            sigma_ + (sigma_bound / pnorm) * pert, p_.sigma_min, p_.sigma_max);
        // The admissible set is convex, so shrinking the step back onto the
        // drift budget cannot leave it.
        Eigen::MatrixXd step = candidate - sigma_;
        const double snorm = detail::spectral_norm_sym(step);
        if (snorm > sigma_bound) step *= sigma_bound / snorm;
        sigma_ += step;
        sigma_ = 0.5 * (sigma_ + sigma_.transpose());
        refresh_chol();
      }
    }
  }

  void refresh_chol() {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma_);
    if (llt.info() != Eigen::Success)
      throw NumericalError("ScheduledDriftSource: covariance lost positive definiteness");
    chol_ = llt.matrixL();
  }

  Eigen::Index d_, d_h_;
  ScheduledDriftParams p_;
  std::mt19937_64 rng_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd chol_;
  std::int64_t t_ = 0;
};

/// Linear teacher: hidden inputs h ~ N(mu_h, I), targets y = b_star + noise,
/// gradients v = W h - y of the squared loss on the editable parameter W.
/// The true gradient mean W mu_h - b_star and covariance W W^T + noise^2 I
/// are reported with every batch, so applied updates visibly move the
/// distribution the tracker is chasing.
struct LinearTeacherParams {
  double w0_scale = 0.5;
  double mu_h_norm = 1.0;
  double mu0_norm = 6.0;
  double noise_std = 0.5;
};

/// Teacher construction draws, separated from the sampling randomness so two
/// phases can share one teacher while consuming independent sample streams.
struct TeacherInit {
  Eigen::MatrixXd w0;
  Eigen::VectorXd mu_h;
  Eigen::VectorXd b_star;
};

inline TeacherInit draw_teacher_init(Eigen::Index d, Eigen::Index d_h,
                                     const LinearTeacherParams& p,
                                     std::mt19937_64& rng) {
  if (d < 1 || d_h < 1)
    throw ConfigError("draw_teacher_init: dimensions must be positive");
  if (p.w0_scale < 0.0 || p.mu_h_norm < 0.0 || p.mu0_norm < 0.0 ||
      p.noise_std < 0.0)
    throw ConfigError("draw_teacher_init: parameters must be nonnegative");
  TeacherInit init;
  init.w0 = (p.w0_scale / std::sqrt(static_cast<double>(d_h))) *
            detail::standard_gaussian(rng, d, d_h);
  init.mu_h = p.mu_h_norm * detail::random_unit(rng, d_h);
  const Eigen::VectorXd mu0 = p.mu0_norm * detail::random_unit(rng, d);
  init.b_star = init.w0 * init.mu_h - mu0;  // initial true gradient mean is mu0
  return init;
}

class LinearTeacherSource : public StreamSource {
 public:
  LinearTeacherSource(Eigen::Index d, Eigen::Index d_h,
                      const LinearTeacherParams& p, std::mt19937_64 rng)
      : d_(d), d_h_(d_h), noise_std_(p.noise_std), rng_(std::move(rng)) {
    TeacherInit init = draw_teacher_init(d, d_h, p, rng_);
    w_edit_ = std::move(init.w0);
    mu_h_ = std::move(init.mu_h);
    b_star_ = std::move(init.b_star);
  }

  /// Direct construction from explicit teacher parameters.
  LinearTeacherSource(Eigen::MatrixXd w_edit, Eigen::VectorXd mu_h,
                      Eigen::VectorXd b_star, double noise_std,
                      std::mt19937_64 rng)
      : d_(w_edit.rows()),
        d_h_(w_edit.cols()),
        noise_std_(noise_std),
        rng_(std::move(rng)),
        w_edit_(std::move(w_edit)),
        mu_h_(std::move(mu_h)),
        b_star_(std::move(b_star)) {
    if (mu_h_.size() != d_h_ || b_star_.size() != d_)
      throw DimensionError("LinearTeacherSource: parameter shapes disagree");
    if (noise_std < 0.0)
      throw ConfigError("LinearTeacherSource: noise_std must be nonnegative");
  }

  StreamDraw next_batch(Eigen::Index n) override {
    if (n < 1) throw DimensionError("next_batch: n must be positive");
    StreamDraw draw;
    draw.batch.h =
        detail::standard_gaussian(rng_, d_h_, n).colwise() + mu_h_;
    Eigen::MatrixXd y = noise_std_ * detail::standard_gaussian(rng_, d_, n);
    y.colwise() += b_star_;
    draw.batch.v_raw = w_edit_ * draw.batch.h - y;
    draw.batch.targets = std::move(y);
    draw.truth.mu = w_edit_ * mu_h_ - b_star_;
    draw.truth.sigma =
        w_edit_ * w_edit_.transpose() +
        noise_std_ * noise_std_ * Eigen::MatrixXd::Identity(d_, d_);
    return draw;
  }

  void apply_update(const Eigen::MatrixXd& delta) override {
    if (delta.rows() != d_ || delta.cols() != d_h_)
      throw DimensionError("apply_update: delta shape mismatch");
    w_edit_ += delta;
  }

  bool editable() const override { return true; }
  const Eigen::MatrixXd* parameter() const override { return &w_edit_; }

  const Eigen::MatrixXd& w_edit() const { return w_edit_; }
  const Eigen::VectorXd& mu_h() const { return mu_h_; }
  const Eigen::VectorXd& b_star() const { return b_star_; }
  Eigen::VectorXd true_mean() const { return w_edit_ * mu_h_ - b_star_; }

 private:
  Eigen::Index d_, d_h_;
  double noise_std_;
  std::mt19937_64 rng_;
  Eigen::MatrixXd w_edit_;
  Eigen::VectorXd mu_h_;
  Eigen::VectorXd b_star_;
};

struct HoldoutItem {
  Eigen::VectorXd h;
  Eigen::VectorXd y;
};

struct EditOutcome {
  std::optional<double> efficacy;
  std::optional<double> retention;
};

/// Efficacy: fraction of the current batch whose residual ||W h - y||
/// strictly shrank under the update. Retention: fraction of held-out earlier
/// edits whose residual grew by less than ten percent (never counting a
/// residual that did not grow as lost).
inline EditOutcome efficacy_retention(const Eigen::MatrixXd& w_before,
                                      const Eigen::MatrixXd& w_after,
                                      const EditBatch& current,
                                      const std::vector<HoldoutItem>& holdout) {
  EditOutcome out;
  if (current.targets) {
    const Eigen::MatrixXd& y = *current.targets;
    if (y.cols() != current.h.cols())
      throw DimensionError("efficacy_retention: targets do not match batch");
    Eigen::Index improved = 0;
    for (Eigen::Index i = 0; i < current.h.cols(); ++i) {
      const double before = (w_before * current.h.col(i) - y.col(i)).norm();
      const double after = (w_after * current.h.col(i) - y.col(i)).norm();
      if (after < before) ++improved;
    }
    out.efficacy = static_cast<double>(improved) /
                   static_cast<double>(current.h.cols());
  }
  if (!holdout.empty()) {
    const Eigen::Index k = static_cast<Eigen::Index>(holdout.size());
    Eigen::MatrixXd hh(w_before.cols(), k);
    Eigen::MatrixXd yy(w_before.rows(), k);
    for (Eigen::Index i = 0; i < k; ++i) {
      if (holdout[i].h.size() != w_before.cols() ||
          holdout[i].y.size() != w_before.rows())
        throw DimensionError("efficacy_retention: holdout shapes disagree");
      hh.col(i) = holdout[i].h;
      yy.col(i) = holdout[i].y;
    }
    const Eigen::VectorXd before =
        (w_before * hh - yy).colwise().norm().transpose();
    const Eigen::VectorXd after =
        (w_after * hh - yy).colwise().norm().transpose();
    Eigen::Index kept = 0;
    for (Eigen::Index i = 0; i < k; ++i)
      if (after[i] <= before[i] || after[i] < 1.1 * before[i]) ++kept;
    out.retention = static_cast<double>(kept) / static_cast<double>(k);
  }
  return out;
}

}  // namespace lifenorm
