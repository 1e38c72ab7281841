#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "lifenorm/editor.hpp"
#include "lifenorm/errors.hpp"
#include "lifenorm/stream.hpp"

namespace lifenorm {

enum class StreamKind { Scheduled, Teacher, Trace };
enum class WarmupVariant { Full, StatsOnly, None };
enum class WarmupSource { Same, Separate };

struct HookSpec {
  enum class Kind { None, Tanh, Scale };
  Kind kind = Kind::None;
  double scale = 1.0;
};

inline LipschitzHook make_hook(const HookSpec& spec) {
  switch (spec.kind) {
    case HookSpec::Kind::None:
      return {};
    case HookSpec::Kind::Tanh:
      return make_tanh_hook();
    case HookSpec::Kind::Scale:
      return make_scale_hook(spec.scale);
  }
  throw ConfigError("make_hook: unknown hook kind");
}

struct StreamConfig {
  StreamKind kind = StreamKind::Scheduled;
  std::string trace_path;
  ScheduledDriftParams sched;
  LinearTeacherParams teach;
};

/// Everything a run needs besides the seed-derived randomness. A run is a
/// pure function of this struct, so two equal configs with equal seeds
/// produce byte-identical outputs.
struct ExperimentConfig {
  Eigen::Index d = 8;
  Eigen::Index d_h = 16;
  Eigen::Index n = 100;
  std::int64_t steps = 500;
  std::int64_t warmup = 0;
  WarmupVariant warmup_variant = WarmupVariant::Full;
  WarmupSource warmup_source = WarmupSource::Same;
  double warmup_placement = 0.0;
  EditorMode mode = EditorMode::FullWhitening;
  double gamma = 1e-3;
  double lambda = 10.0;
  double epsilon_0 = 1e-6;
  FloorConfig floor;
  HookSpec hook;
  std::uint64_t seed = 0;
  StreamConfig stream;
  StreamConfig warm_stream;
  std::int64_t stream_skip = 0;
  std::string checkpoint_in;
  std::string checkpoint_out;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("key '" + key + "': expected a real number, got '" +
                      value + "'");
  return out;
}

inline std::int64_t parse_int(const std::string& key,
                              const std::string& value) {
  std::int64_t out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("key '" + key + "': expected an integer, got '" + value +
                      "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key,
                                const std::string& value) {
  std::uint64_t out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" +
                      value + "'");
  return out;
}

inline StreamKind parse_stream_kind(const std::string& key,
                                    const std::string& value) {
  if (value == "scheduled") return StreamKind::Scheduled;
  if (value == "teacher") return StreamKind::Teacher;
  if (value == "trace") return StreamKind::Trace;
  throw ConfigError("key '" + key +
                    "': expected scheduled, teacher, or trace, got '" + value +
                    "'");
}

inline bool set_sched_key(ScheduledDriftParams& p, const std::string& key,
                          const std::string& suffix, const std::string& value) {
  if (suffix == "c_mu")
    p.c_mu = parse_real(key, value);
  else if (suffix == "c_sigma")
    p.c_sigma = parse_real(key, value);
  else if (suffix == "eps_mu")
    p.eps_mu = parse_real(key, value);
  else if (suffix == "eps_sigma")
    p.eps_sigma = parse_real(key, value);
  else if (suffix == "step_offset")
    p.step_offset = parse_int(key, value);
  else if (suffix == "mu0_norm")
    p.mu0_norm = parse_real(key, value);
  else if (suffix == "sigma0_scale")
    p.sigma0_scale = parse_real(key, value);
  else if (suffix == "sigma0_cond")
    p.sigma0_cond = parse_real(key, value);
  else if (suffix == "sigma_min")
    p.sigma_min = parse_real(key, value);
  else if (suffix == "sigma_max")
    p.sigma_max = parse_real(key, value);
  else
    return false;
  return true;
}

inline bool set_teach_key(LinearTeacherParams& p, const std::string& key,
                          const std::string& suffix, const std::string& value) {
  if (suffix == "w0_scale")
    p.w0_scale = parse_real(key, value);
  else if (suffix == "mu_h_norm")
    p.mu_h_norm = parse_real(key, value);
  else if (suffix == "mu0_norm")
    p.mu0_norm = parse_real(key, value);
  else if (suffix == "noise_std")
    p.noise_std = parse_real(key, value);
  else
    return false;
  return true;
}

}  // namespace detail

inline void set_config_key(ExperimentConfig& cfg, const std::string& key,
                           const std::string& value) {
  using detail::parse_int;
  using detail::parse_real;
  using detail::parse_uint;
  if (key == "d")
    cfg.d = static_cast<Eigen::Index>(parse_int(key, value));
  else if (key == "d_h")
    cfg.d_h = static_cast<Eigen::Index>(parse_int(key, value));
  else if (key == "n")
    cfg.n = static_cast<Eigen::Index>(parse_int(key, value));
  else if (key == "steps")
    cfg.steps = parse_int(key, value);
  else if (key == "warmup")
    cfg.warmup = parse_int(key, value);
  else if (key == "warmup_variant") {
    if (value == "full")
      cfg.warmup_variant = WarmupVariant::Full;
    else if (value == "stats_only")
      cfg.warmup_variant = WarmupVariant::StatsOnly;
    else if (value == "none")
      cfg.warmup_variant = WarmupVariant::None;
    else
      throw ConfigError("key 'warmup_variant': expected full, stats_only, or "
                        "none, got '" +
                        value + "'");
  } else if (key == "warmup_source") {
    if (value == "same")
      cfg.warmup_source = WarmupSource::Same;
    else if (value == "separate")
      cfg.warmup_source = WarmupSource::Separate;
    else
      throw ConfigError(
          "key 'warmup_source': expected same or separate, got '" + value +
          "'");
  } else if (key == "warmup_placement") {
    if (value == "start") {
      cfg.warmup_placement = 0.0;
    } else {
      const double f = parse_real(key, value);
      if (!(f >= 0.0) || !(f < 1.0))
        throw ConfigError(
            "key 'warmup_placement': expected 'start' or a fraction in "
            "[0, 1), got '" +
            value + "'");
      cfg.warmup_placement = f;
    }
  } else if (key == "mode") {
    if (value == "raw_gradient")
      cfg.mode = EditorMode::RawGradient;
    else if (value == "diagonal_norm")
      cfg.mode = EditorMode::DiagonalNorm;
    else if (value == "full_whitening")
      cfg.mode = EditorMode::FullWhitening;
    else
      throw ConfigError("key 'mode': expected raw_gradient, diagonal_norm, or "
                        "full_whitening, got '" +
                        value + "'");
  } else if (key == "gamma")
    cfg.gamma = parse_real(key, value);
  else if (key == "lambda")
    cfg.lambda = parse_real(key, value);
  else if (key == "epsilon_0")
    cfg.epsilon_0 = parse_real(key, value);
  else if (key == "abs_floor")
    cfg.floor.abs_floor = parse_real(key, value);
  else if (key == "rel_floor")
    cfg.floor.rel_floor = parse_real(key, value);
  else if (key == "hook") {
    if (value == "none")
      cfg.hook.kind = HookSpec::Kind::None;
    else if (value == "tanh")
      cfg.hook.kind = HookSpec::Kind::Tanh;
    else if (value == "scale")
      cfg.hook.kind = HookSpec::Kind::Scale;
    else
      throw ConfigError("key 'hook': expected none, tanh, or scale, got '" +
                        value + "'");
  } else if (key == "hook_scale")
    cfg.hook.scale = parse_real(key, value);
  else if (key == "seed")
    cfg.seed = parse_uint(key, value);
  else if (key == "stream")
    cfg.stream.kind = detail::parse_stream_kind(key, value);
  else if (key == "trace_path")
    cfg.stream.trace_path = value;
  else if (key == "stream_skip")
    cfg.stream_skip = parse_int(key, value);
  else if (key == "checkpoint_in")
    cfg.checkpoint_in = value;
  else if (key == "checkpoint_out")
    cfg.checkpoint_out = value;
  else if (key == "warmup_stream")
    cfg.warm_stream.kind = detail::parse_stream_kind(key, value);
  else if (key == "warmup_trace_path")
    cfg.warm_stream.trace_path = value;
  else if (key.starts_with("warmup_sched_")) {
    if (!detail::set_sched_key(cfg.warm_stream.sched, key, key.substr(13),
                               value))
      throw ConfigError("unknown key '" + key + "'");
  } else if (key.starts_with("warmup_teach_")) {
    if (!detail::set_teach_key(cfg.warm_stream.teach, key, key.substr(13),
                               value))
      throw ConfigError("unknown key '" + key + "'");
  } else if (key.starts_with("sched_")) {
    if (!detail::set_sched_key(cfg.stream.sched, key, key.substr(6), value))
      throw ConfigError("unknown key '" + key + "'");
  } else if (key.starts_with("teach_")) {
    if (!detail::set_teach_key(cfg.stream.teach, key, key.substr(6), value))
      throw ConfigError("unknown key '" + key + "'");
  } else
    throw ConfigError("unknown key '" + key + "'");
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    try {
      set_config_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " +
                        std::string(e.what()));
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

inline void apply_override(ExperimentConfig& cfg,
                           const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string key = detail::trim(assignment.substr(0, eq));
  const std::string value = detail::trim(assignment.substr(eq + 1));
  if (key.empty())
    throw ConfigError("override '" + assignment + "': empty key");
  try {
    set_config_key(cfg, key, value);
  } catch (const ConfigError& e) {
    throw ConfigError("override: " + std::string(e.what()));
  }
}

namespace detail {

inline void validate_sched(const ScheduledDriftParams& p,
                           const std::string& prefix) {
  if (p.c_mu < 0.0)
    throw ConfigError("key '" + prefix + "c_mu' must be nonnegative");
  if (p.c_sigma < 0.0)
    throw ConfigError("key '" + prefix + "c_sigma' must be nonnegative");
  if (!(p.eps_mu > 0.0))
    throw ConfigError("key '" + prefix + "eps_mu' must be positive");
  if (!(p.eps_sigma > 0.0))
    throw ConfigError("key '" + prefix + "eps_sigma' must be positive");
  if (p.step_offset < 0)
    throw ConfigError("key '" + prefix + "step_offset' must be nonnegative");
  if (p.mu0_norm < 0.0)
    throw ConfigError("key '" + prefix + "mu0_norm' must be nonnegative");
  if (!(p.sigma0_scale > 0.0))
    throw ConfigError("key '" + prefix + "sigma0_scale' must be positive");
  if (!(p.sigma0_cond >= 1.0))
    throw ConfigError("key '" + prefix + "sigma0_cond' must be at least 1");
  if (!(p.sigma_min > 0.0))
    throw ConfigError("key '" + prefix + "sigma_min' must be positive");
  if (p.sigma_max < p.sigma_min)
    throw ConfigError("key '" + prefix +
                      "sigma_max' must be at least sigma_min");
}

inline void validate_teach(const LinearTeacherParams& p,
                           const std::string& prefix) {
  if (p.w0_scale < 0.0)
    throw ConfigError("key '" + prefix + "w0_scale' must be nonnegative");
  if (p.mu_h_norm < 0.0)
    throw ConfigError("key '" + prefix + "mu_h_norm' must be nonnegative");
  if (p.mu0_norm < 0.0)
    throw ConfigError("key '" + prefix + "mu0_norm' must be nonnegative");
  if (p.noise_std < 0.0)
    throw ConfigError("key '" + prefix + "noise_std' must be nonnegative");
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.d < 1) throw ConfigError("key 'd' must be at least 1");
  if (cfg.d_h < 1) throw ConfigError("key 'd_h' must be at least 1");
  if (cfg.n < 1) throw ConfigError("key 'n' must be at least 1");
  if (cfg.steps < 1) throw ConfigError("key 'steps' must be at least 1");
  if (cfg.warmup < 0) throw ConfigError("key 'warmup' must be nonnegative");
  if (!(cfg.gamma > 0.0)) throw ConfigError("key 'gamma' must be positive");
  if (!(cfg.lambda > 0.0)) throw ConfigError("key 'lambda' must be positive");
  if (!(cfg.epsilon_0 > 0.0))
    throw ConfigError("key 'epsilon_0' must be positive");
  if (!(cfg.floor.abs_floor > 0.0))
    throw ConfigError("key 'abs_floor' must be positive");
  if (!(cfg.floor.rel_floor > 0.0))
    throw ConfigError("key 'rel_floor' must be positive");
  if (cfg.hook.kind == HookSpec::Kind::Scale &&
      (!(cfg.hook.scale > 0.0) || cfg.hook.scale > 1.0))
    throw ConfigError("key 'hook_scale' must lie in (0, 1]");
  if (!(cfg.warmup_placement >= 0.0) || !(cfg.warmup_placement < 1.0))
    throw ConfigError("key 'warmup_placement' must lie in [0, 1)");
  if (cfg.warmup_variant == WarmupVariant::None && cfg.warmup > 0)
    throw ConfigError(
        "key 'warmup' must be 0 when warmup_variant is none");
  if (cfg.stream_skip < 0)
    throw ConfigError("key 'stream_skip' must be nonnegative");
  if (cfg.stream_skip > 0 && cfg.warmup > 0)
    throw ConfigError(
        "key 'stream_skip' requires warmup=0; a continued run carries its "
        "warm-up inside the checkpoint");

  if (cfg.stream.kind == StreamKind::Trace && cfg.stream.trace_path.empty())
    throw ConfigError("key 'trace_path' is required when stream is trace");
  if (cfg.stream.kind == StreamKind::Scheduled)
    detail::validate_sched(cfg.stream.sched, "sched_");
  if (cfg.stream.kind == StreamKind::Teacher)
    detail::validate_teach(cfg.stream.teach, "teach_");

  if (cfg.warmup > 0) {
    if (cfg.warmup_source == WarmupSource::Same &&
        cfg.stream.kind == StreamKind::Trace)
      throw ConfigError(
          "key 'warmup_source' must be separate when the target stream is a "
          "trace; a trace cannot be replayed for warm-up and the target at "
          "once");
    if (cfg.warmup_source == WarmupSource::Separate) {
      if (cfg.warm_stream.kind == StreamKind::Trace &&
          cfg.warm_stream.trace_path.empty())
        throw ConfigError(
            "key 'warmup_trace_path' is required when warmup_stream is trace");
      if (cfg.warm_stream.kind == StreamKind::Scheduled)
        detail::validate_sched(cfg.warm_stream.sched, "warmup_sched_");
      if (cfg.warm_stream.kind == StreamKind::Teacher)
        detail::validate_teach(cfg.warm_stream.teach, "warmup_teach_");
    }
  }
}

}  // namespace lifenorm
