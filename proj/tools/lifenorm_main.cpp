#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lifenorm/checkpoint.hpp"
#include "lifenorm/config.hpp"
#include "lifenorm/csv.hpp"
#include "lifenorm/engine.hpp"
#include "lifenorm/errors.hpp"
#include "lifenorm/trace.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

lifenorm::ExperimentConfig load_with_args(const CommonArgs& args) {
  lifenorm::ExperimentConfig cfg = lifenorm::load_config(args.config_path);
  for (const std::string& assignment : args.overrides)
    lifenorm::apply_override(cfg, assignment);
  if (args.seed) cfg.seed = *args.seed;
  lifenorm::validate(cfg);
  return cfg;
}

fs::path resolve_out_dir(const std::string& out_flag) {
  if (!out_flag.empty()) return fs::path(out_flag);
  if (const char* env = std::getenv("LIFENORM_OUT"); env && *env)
    return fs::path(env);
  throw lifenorm::ConfigError(
      "no output directory: pass --out or set LIFENORM_OUT");
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw lifenorm::IoError("cannot write '" + path.string() + "'");
  f << content;
  f.flush();
  if (!f) throw lifenorm::IoError("write failed for '" + path.string() + "'");
}

nlohmann::json summary_json(const lifenorm::RunReport& report) {
  const lifenorm::RunSummary& s = report.summary;
  nlohmann::json j;
  j["seed"] = report.config.seed;
  j["steps_total"] = s.steps_total;
  j["warmup_steps"] = s.warmup_steps;
  j["target_steps"] = s.target_steps;
  j["warmup_updates_solved"] = s.warmup_updates_solved;
  j["dof_clamped_steps"] = s.dof_clamped_steps;
  j["final_cond_number"] = s.final_cond_number;
  if (s.final_mean_mse) j["final_mean_mse"] = *s.final_mean_mse;
  if (s.mean_abs_cos_second_half)
    j["mean_abs_cos_second_half"] = *s.mean_abs_cos_second_half;
  if (s.max_update_fro_norm)
    j["max_update_fro_norm"] = *s.max_update_fro_norm;
  if (s.median_update_fro_norm)
    j["median_update_fro_norm"] = *s.median_update_fro_norm;
  return j;
}

void write_run_outputs(const lifenorm::RunReport& report,
                       const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "steps.csv", lifenorm::steps_csv_string(report.steps));
  write_text_file(dir / "summary.json", summary_json(report).dump(2) + "\n");
}

int cmd_run(const CommonArgs& args, const std::string& out_flag) {
  const lifenorm::ExperimentConfig cfg = load_with_args(args);
  const fs::path out = resolve_out_dir(out_flag);
  const lifenorm::RunReport report = lifenorm::run_experiment(cfg);
  write_run_outputs(report, out);
  if (!cfg.checkpoint_out.empty())
    lifenorm::save_checkpoint(report.final_state, cfg.checkpoint_out);
  std::cout << "wrote " << (out / "steps.csv").string() << " and "
            << (out / "summary.json").string() << "\n";
  return 0;
}

int cmd_pair(const CommonArgs& warm_args, const CommonArgs& cold_args,
             const std::string& out_flag) {
  const lifenorm::ExperimentConfig warm_cfg = load_with_args(warm_args);
  const lifenorm::ExperimentConfig cold_cfg = load_with_args(cold_args);
  if (cold_cfg.warmup != 0)
    throw lifenorm::ConfigError("pair: the cold config must have warmup=0");
  const fs::path out = resolve_out_dir(out_flag);

  const lifenorm::RunReport warm = lifenorm::run_experiment(warm_cfg);
  const lifenorm::RunReport cold = lifenorm::run_experiment(cold_cfg);
  const lifenorm::ShiftSummary shift = lifenorm::warmup_curve_shift(warm, cold);

  write_run_outputs(warm, out / "warm");
  write_run_outputs(cold, out / "cold");

  nlohmann::json j;
  j["warm"] = summary_json(warm);
  j["cold"] = summary_json(cold);
  j["curve_shift"] = {
      {"fraction_warm_le_cold", shift.fraction_warm_le_cold},
      {"median_ratio", shift.median_ratio},
      {"steps_compared", shift.steps_compared},
      {"ratio_pairs", shift.ratio_pairs},
      {"warmup_steps", warm.summary.warmup_steps},
  };
  write_text_file(out / "summary.json", j.dump(2) + "\n");
  std::cout << "wrote " << (out / "summary.json").string() << "\n";
  return 0;
}

int cmd_export_trace(const CommonArgs& args, const std::string& out_file) {
  const lifenorm::ExperimentConfig cfg = load_with_args(args);
  lifenorm::RunOptions opt;
  opt.record_batches = true;
  const lifenorm::RunReport report = lifenorm::run_experiment(cfg, opt);
  const fs::path out(out_file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ostringstream body;
  lifenorm::write_trace(body, report.batches, 1 + cfg.stream_skip);
  write_text_file(out, body.str());
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifelong normalization editing pipeline"};
  app.require_subcommand(1);

  CommonArgs run_args;
  std::string run_out;
  CLI::App* run = app.add_subcommand("run", "execute one configured run");
  run->add_option("--config", run_args.config_path, "config file")->required();
  run->add_option("--seed", run_args.seed, "seed overriding the config");
  run->add_option("--override", run_args.overrides,
                  "key=value applied after the config file");
  run->add_option("--out", run_out,
                  "output directory (default: $LIFENORM_OUT)");

  CommonArgs pair_warm, pair_cold;
  std::string pair_out;
  CLI::App* pair = app.add_subcommand(
      "pair", "run a warmed and a cold config and compare their MSE curves");
  pair->add_option("--warm", pair_warm.config_path, "warmed config file")
      ->required();
  pair->add_option("--cold", pair_cold.config_path, "cold config file")
      ->required();
  pair->add_option("--seed", pair_warm.seed, "seed overriding both configs");
  pair->add_option("--override", pair_warm.overrides,
                   "key=value applied to both configs");
  pair->add_option("--out", pair_out,
                   "output directory (default: $LIFENORM_OUT)");

  CommonArgs export_args;
  std::string export_out;
  CLI::App* exp = app.add_subcommand(
      "export-trace", "run the pipeline and record the stream it consumed");
  exp->add_option("--config", export_args.config_path, "config file")
      ->required();
  exp->add_option("--seed", export_args.seed, "seed overriding the config");
  exp->add_option("--override", export_args.overrides,
                  "key=value applied after the config file");
  exp->add_option("--out", export_out, "output CSV file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_args, run_out);
    if (pair->parsed()) {
      pair_cold.seed = pair_warm.seed;
      pair_cold.overrides = pair_warm.overrides;
      return cmd_pair(pair_warm, pair_cold, pair_out);
    }
    if (exp->parsed()) return cmd_export_trace(export_args, export_out);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const lifenorm::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const lifenorm::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const lifenorm::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
