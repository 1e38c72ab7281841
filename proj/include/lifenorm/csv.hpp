#pragma once

#include <array>
#include <charconv>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lifenorm/diagnostics.hpp"

namespace lifenorm {

/// Shortest decimal form that parses back to the same double, so repeated
/// runs and continued runs can be compared byte for byte.
inline std::string format_double(double x) {
  std::array<char, 64> buf;
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

inline constexpr const char* kStepsCsvHeader =
    "step,phase,mean_mse,cov_spec_err,mu_drift,sigma_drift,update_fro_norm,"
    "cos_prev,cond_number,lambda_max,whiten_identity_dev,efficacy,retention,"
    "bias_norm,spec_norm";

inline void write_steps_csv(std::ostream& out,
                            const std::vector<StepRecord>& steps) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  out << kStepsCsvHeader << '\n';
  for (const StepRecord& s : steps) {
    out << s.step << ',' << phase_name(s.phase) << ',' << opt(s.mean_mse)
        << ',' << opt(s.cov_spec_err) << ',' << format_double(s.mu_drift)
        << ',' << format_double(s.sigma_drift) << ','
        << opt(s.update_fro_norm) << ',' << opt(s.cos_prev) << ','
        << format_double(s.cond_number) << ',' << format_double(s.lambda_max)
        << ',' << opt(s.whiten_identity_dev) << ',' << opt(s.efficacy) << ','
        << opt(s.retention) << ',' << opt(s.bias_norm) << ','
        << opt(s.spec_norm) << '\n';
  }
}

inline std::string steps_csv_string(const std::vector<StepRecord>& steps) {
  std::ostringstream out;
  write_steps_csv(out, steps);
  return out.str();
}

}  // namespace lifenorm
