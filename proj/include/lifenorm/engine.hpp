#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lifenorm/checkpoint.hpp"
#include "lifenorm/config.hpp"
#include "lifenorm/diagnostics.hpp"
#include "lifenorm/editor.hpp"
#include "lifenorm/errors.hpp"
#include "lifenorm/niw.hpp"
#include "lifenorm/stream.hpp"
#include "lifenorm/trace.hpp"
#include "lifenorm/whitening.hpp"

namespace lifenorm {

struct RunOptions {
  bool record_updates = false;
  bool record_batches = false;
};

struct RunSummary {
  std::int64_t steps_total = 0;
  std::int64_t warmup_steps = 0;
  std::int64_t target_steps = 0;
  std::int64_t warmup_updates_solved = 0;
  std::int64_t dof_clamped_steps = 0;
  std::optional<double> final_mean_mse;
  std::optional<double> mean_abs_cos_second_half;
  std::optional<double> max_update_fro_norm;
  std::optional<double> median_update_fro_norm;
  double final_cond_number = 0.0;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<StepRecord> steps;
  RunSummary summary;
  NiwState final_state;
  std::optional<Eigen::MatrixXd> final_parameter;
  std::vector<Eigen::MatrixXd> updates;
  std::vector<EditBatch> batches;
};

namespace detail {

// Independent generator per role, split from one user-facing seed. Phases
// draw from separate streams so adding or removing warm-up steps never
// changes which target batches a seed produces.
constexpr std::uint32_t kInitTag = 1;
constexpr std::uint32_t kWarmupTag = 2;
constexpr std::uint32_t kTargetTag = 3;
constexpr std::uint32_t kWarmupInitTag = 4;

inline std::mt19937_64 phase_rng(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffULL),
                    static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

inline std::unique_ptr<StreamSource> make_source(const StreamConfig& sc,
                                                 Eigen::Index d,
                                                 Eigen::Index d_h,
                                                 std::uint64_t seed,
                                                 std::uint32_t init_tag,
                                                 std::uint32_t sample_tag) {
  switch (sc.kind) {
    case StreamKind::Scheduled: {
      auto init_rng = phase_rng(seed, init_tag);
      ScheduledInit init = draw_scheduled_init(d, sc.sched, init_rng);
      return std::make_unique<ScheduledDriftSource>(
          d_h, sc.sched, std::move(init), phase_rng(seed, sample_tag));
    }
    case StreamKind::Teacher: {
      auto init_rng = phase_rng(seed, init_tag);
      TeacherInit init = draw_teacher_init(d, d_h, sc.teach, init_rng);
      return std::make_unique<LinearTeacherSource>(
          std::move(init.w0), std::move(init.mu_h), std::move(init.b_star),
          sc.teach.noise_std, phase_rng(seed, sample_tag));
    }
    case StreamKind::Trace: {
      auto src = std::make_unique<TraceSource>(sc.trace_path);
      if (src->d() != d || src->d_h() != d_h)
        throw ConfigError("trace '" + sc.trace_path + "' carries d=" +
                          std::to_string(src->d()) + ", d_h=" +
                          std::to_string(src->d_h()) +
                          " but the config asks for d=" + std::to_string(d) +
                          ", d_h=" + std::to_string(d_h));
      return src;
    }
  }
  throw ConfigError("unknown stream kind");
}

inline void require_trace_length(const StreamSource& src,
                                 std::int64_t needed, const char* role) {
  if (const auto* tr = dynamic_cast<const TraceSource*>(&src)) {
    if (tr->steps() < needed)
      throw ConfigError("the " + std::string(role) + " trace provides " +
                        std::to_string(tr->steps()) +
                        " steps but the run needs " + std::to_string(needed));
  }
}

inline std::optional<double> median_of(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace detail

inline RunReport run_experiment(const ExperimentConfig& cfg,
                                const RunOptions& opt = {}) {
  validate(cfg);

  RunReport report;
  report.config = cfg;

  NiwState state;
  if (cfg.checkpoint_in.empty()) {
    state = init_prior(cfg.d, cfg.d_h, cfg.epsilon_0);
  } else {
    state = load_checkpoint(cfg.checkpoint_in);
    if (state.dim() != cfg.d || state.h_stats.dim() != cfg.d_h)
      throw ConfigError("checkpoint '" + cfg.checkpoint_in + "' carries d=" +
                        std::to_string(state.dim()) + ", d_h=" +
                        std::to_string(state.h_stats.dim()) +
                        " but the config asks for d=" + std::to_string(cfg.d) +
                        ", d_h=" + std::to_string(cfg.d_h));
  }

  EditorConfig ecfg;
  ecfg.gamma = cfg.gamma;
  ecfg.lambda = cfg.lambda;
  ecfg.mode = cfg.mode;
  ecfg.floor = cfg.floor;
  ecfg.hook = make_hook(cfg.hook);

  auto target = detail::make_source(cfg.stream, cfg.d, cfg.d_h, cfg.seed,
                                    detail::kInitTag, detail::kTargetTag);
  detail::require_trace_length(*target, cfg.stream_skip + cfg.steps, "target");

  const std::int64_t warm_steps =
      cfg.warmup_variant == WarmupVariant::None ? 0 : cfg.warmup;
  std::unique_ptr<StreamSource> warm;
  if (warm_steps > 0) {
    const bool separate = cfg.warmup_source == WarmupSource::Separate;
    const StreamConfig& wsc = separate ? cfg.warm_stream : cfg.stream;
    const std::uint32_t init_tag =
        separate ? detail::kWarmupInitTag : detail::kInitTag;
    warm = detail::make_source(wsc, cfg.d, cfg.d_h, cfg.seed, init_tag,
                               detail::kWarmupTag);
    detail::require_trace_length(*warm, warm_steps, "warm-up");
  }

  for (std::int64_t i = 0; i < cfg.stream_skip; ++i) target->next_batch(cfg.n);

  PosteriorEstimates prev_est = posterior_estimates(state);
  std::optional<Eigen::MatrixXd> prev_delta;
  std::vector<HoldoutItem> holdout;
  constexpr std::size_t kHoldoutCap = 1000;
  std::int64_t row = 0;

  RunSummary& summary = report.summary;
  summary.warmup_steps = warm_steps;
  summary.target_steps = cfg.steps;

  const auto run_segment = [&](Phase phase, std::int64_t count) {
    StreamSource& src = phase == Phase::Warmup ? *warm : *target;
    const bool stats_only = phase == Phase::Warmup &&
                            cfg.warmup_variant == WarmupVariant::StatsOnly;
    for (std::int64_t i = 0; i < count; ++i) {
      ++row;
      const std::int64_t step_id = cfg.stream_skip + row;
      try {
        StreamDraw draw = src.next_batch(cfg.n);

        state = niw_update(state, summarize_batch(draw.batch.v_raw));
        state.h_stats.update(draw.batch.h);
        const PosteriorEstimates est = posterior_estimates(state);

        StepRecord rec;
        rec.step = step_id;
        rec.phase = phase;
        rec.mu_drift = (est.mu_hat - prev_est.mu_hat).norm();
        rec.sigma_drift = (est.sigma_hat - prev_est.sigma_hat).norm();
        if (est.dof_clamped) ++summary.dof_clamped_steps;

        WhiteningTransform transform;
        std::optional<UpdateMatrix> update;
        if (stats_only) {
          transform = build_transform(est.mu_hat, est.sigma_hat, cfg.floor);
        } else {
          SolveResult sol = solve_update(draw.batch, state, ecfg, draw.truth.mu);
          transform = std::move(sol.transform);
          update = std::move(sol.update);
        }
        rec.cond_number =
            transform.lambda_max /
            std::max(transform.lambda_min_raw, cfg.floor.abs_floor);
        rec.lambda_max = transform.lambda_max;

        if (draw.truth.mu) rec.mean_mse = mean_mse(est.mu_hat, *draw.truth.mu);
        if (draw.truth.sigma) {
          rec.cov_spec_err = cov_spectral_error(est.sigma_hat, *draw.truth.sigma);
          rec.whiten_identity_dev = cov_spectral_error(
              transform.w * (*draw.truth.sigma) * transform.w,
              Eigen::MatrixXd::Identity(cfg.d, cfg.d));
        }

        if (update) {
          rec.update_fro_norm = update->fro_norm;
          rec.spec_norm = update->spec_norm;
          rec.bias_norm = update->bias_norm;
          if (prev_delta)
            rec.cos_prev = cosine_adjacent(update->delta, *prev_delta);
          if (src.editable()) {
            const Eigen::MatrixXd w_before = *src.parameter();
            src.apply_update(update->delta);
            const EditOutcome outcome = efficacy_retention(
                w_before, *src.parameter(), draw.batch, holdout);
            rec.efficacy = outcome.efficacy;
            rec.retention = outcome.retention;
          }
          if (phase == Phase::Warmup) ++summary.warmup_updates_solved;
          if (draw.batch.targets) {
            holdout.push_back(
                {draw.batch.h.col(0), draw.batch.targets->col(0)});
            if (holdout.size() > kHoldoutCap)
              holdout.erase(holdout.begin());
          }
          if (opt.record_updates) report.updates.push_back(update->delta);
          prev_delta = std::move(update->delta);
        }

        if (opt.record_batches)
          report.batches.push_back(std::move(draw.batch));
        prev_est = est;
        report.steps.push_back(std::move(rec));
      } catch (const NumericalError& e) {
        std::string context = "step " + std::to_string(step_id) + " (" +
                              phase_name(phase) + "): " + e.what();
        if (!report.steps.empty())
          context += "; condition number before this step was " +
                     std::to_string(report.steps.back().cond_number);
        throw NumericalError(context);
      }
    }
  };

  const std::int64_t pre = static_cast<std::int64_t>(
      std::floor(cfg.warmup_placement * static_cast<double>(cfg.steps)));
  run_segment(Phase::Target, pre);
  if (warm_steps > 0) run_segment(Phase::Warmup, warm_steps);
  run_segment(Phase::Target, cfg.steps - pre);

  summary.steps_total = static_cast<std::int64_t>(report.steps.size());
  summary.final_cond_number =
      report.steps.empty() ? 0.0 : report.steps.back().cond_number;

  std::vector<double> norms;
  std::vector<double> target_cos;
  std::int64_t target_seen = 0;
  for (const StepRecord& s : report.steps) {
    if (s.update_fro_norm) norms.push_back(*s.update_fro_norm);
    if (s.phase == Phase::Target) {
      ++target_seen;
      if (s.mean_mse) summary.final_mean_mse = s.mean_mse;
    }
  }
  if (!norms.empty()) {
    summary.max_update_fro_norm = *std::max_element(norms.begin(), norms.end());
    summary.median_update_fro_norm = detail::median_of(norms);
  }
  std::int64_t target_index = 0;
  for (const StepRecord& s : report.steps) {
    if (s.phase != Phase::Target) continue;
    if (target_index >= target_seen / 2 && s.cos_prev)
      target_cos.push_back(std::abs(*s.cos_prev));
    ++target_index;
  }
  if (!target_cos.empty()) {
    double acc = 0.0;
    for (const double c : target_cos) acc += c;
    summary.mean_abs_cos_second_half =
        acc / static_cast<double>(target_cos.size());
  }

  report.final_state = std::move(state);
  if (target->editable()) report.final_parameter = *target->parameter();
  return report;
}

namespace detail {

inline std::optional<std::string> target_mismatch(const ExperimentConfig& a,
                                                  const ExperimentConfig& b) {
  if (a.d != b.d) return "d";
  if (a.d_h != b.d_h) return "d_h";
  if (a.n != b.n) return "n";
  if (a.mode != b.mode) return "mode";
  if (a.gamma != b.gamma) return "gamma";
  if (a.lambda != b.lambda) return "lambda";
  if (a.epsilon_0 != b.epsilon_0) return "epsilon_0";
  if (a.floor.abs_floor != b.floor.abs_floor) return "abs_floor";
  if (a.floor.rel_floor != b.floor.rel_floor) return "rel_floor";
  if (a.hook.kind != b.hook.kind) return "hook";
  if (a.hook.kind == HookSpec::Kind::Scale && a.hook.scale != b.hook.scale)
    return "hook_scale";
  if (a.seed != b.seed) return "seed";
  if (a.stream_skip != b.stream_skip) return "stream_skip";
  if (a.stream.kind != b.stream.kind) return "stream";
  if (a.stream.kind == StreamKind::Trace &&
      a.stream.trace_path != b.stream.trace_path)
    return "trace_path";
  const ScheduledDriftParams &sa = a.stream.sched, &sb = b.stream.sched;
  if (a.stream.kind == StreamKind::Scheduled &&
      (sa.c_mu != sb.c_mu || sa.c_sigma != sb.c_sigma ||
       sa.eps_mu != sb.eps_mu || sa.eps_sigma != sb.eps_sigma ||
       sa.step_offset != sb.step_offset || sa.mu0_norm != sb.mu0_norm ||
       sa.sigma0_scale != sb.sigma0_scale ||
       sa.sigma0_cond != sb.sigma0_cond || sa.sigma_min != sb.sigma_min ||
       sa.sigma_max != sb.sigma_max))
    return "sched parameters";
  const LinearTeacherParams &ta = a.stream.teach, &tb = b.stream.teach;
  if (a.stream.kind == StreamKind::Teacher &&
      (ta.w0_scale != tb.w0_scale || ta.mu_h_norm != tb.mu_h_norm ||
       ta.mu0_norm != tb.mu0_norm || ta.noise_std != tb.noise_std))
    return "teach parameters";
  return std::nullopt;
}

}  // namespace detail

/// Compares a warmed run to a cold run over the shared target phase. Both
/// runs must traverse the same target stream; only warm-up settings and the
/// step count may differ (the cold run is often longer so the shifted ratio
/// MSE_warm(t) / MSE_cold(r + t) has a denominator).
inline ShiftSummary warmup_curve_shift(const RunReport& warm,
                                       const RunReport& cold) {
  if (cold.summary.warmup_steps != 0)
    throw ConfigError("warmup_curve_shift: the cold run must have warmup=0");
  if (const auto key = detail::target_mismatch(warm.config, cold.config))
    throw ConfigError("warmup_curve_shift: runs differ in " + *key);
  const auto curve = [](const RunReport& r, const char* which) {
    std::vector<double> c;
    for (const StepRecord& s : r.steps) {
      if (s.phase != Phase::Target) continue;
      if (!s.mean_mse)
        throw ConfigError("warmup_curve_shift: the " + std::string(which) +
                          " run lacks ground-truth mean error");
      c.push_back(*s.mean_mse);
    }
    return c;
  };
  return curve_shift(curve(warm, "warm"), curve(cold, "cold"),
                     warm.summary.warmup_steps);
}

}  // namespace lifenorm
