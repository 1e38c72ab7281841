#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lifenorm/errors.hpp"
#include "lifenorm/niw.hpp"

namespace lifenorm {

namespace detail {

inline void require_state_finite(const NiwState& state, const char* who) {
  const bool ok = std::isfinite(state.kappa) && std::isfinite(state.nu) &&
                  state.m.allFinite() && state.psi.allFinite() &&
                  state.h_stats.mean().allFinite() &&
                  state.h_stats.ssd().allFinite();
  if (!ok)
    throw IoError(std::string(who) + ": state contains non-finite values");
}

inline std::vector<double> to_vector(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::json to_json_matrix(const Eigen::MatrixXd& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double checked_number(const nlohmann::json& j, const std::string& field) {
  if (!j.is_number())
    throw IoError("checkpoint: field '" + field + "' must be a number");
  const double x = j.get<double>();
  if (!std::isfinite(x))
    throw IoError("checkpoint: non-finite value in field '" + field + "'");
  return x;
}

inline Eigen::VectorXd checked_vector(const nlohmann::json& j,
                                      const std::string& field,
                                      Eigen::Index size) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size)
    throw IoError("checkpoint: field '" + field + "' must be an array of " +
                  std::to_string(size) + " numbers");
  Eigen::VectorXd out(size);
  for (Eigen::Index i = 0; i < size; ++i)
    out[i] = checked_number(j[static_cast<std::size_t>(i)], field);
  return out;
}

}  // namespace detail

/// Serializes tracker state as a small JSON document. The layout is
/// versioned; loading rejects any version other than 1.
inline void save_checkpoint(const NiwState& state, const std::string& path) {
  detail::require_state_finite(state, "save_checkpoint");
  nlohmann::json j;
  j["version"] = 1;
  j["d"] = static_cast<std::int64_t>(state.dim());
  j["d_h"] = static_cast<std::int64_t>(state.h_stats.dim());
  j["kappa"] = state.kappa;
  j["nu"] = state.nu;
  j["m"] = detail::to_vector(state.m);
  j["psi"] = detail::to_json_matrix(state.psi);
  j["h_mean"] = detail::to_vector(state.h_stats.mean());
  j["h_ssd"] = detail::to_vector(state.h_stats.ssd());
  j["h_count"] = state.h_stats.count();
  std::ofstream f(path);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f << j.dump(2) << '\n';
  f.flush();
  if (!f) throw IoError("write failed for checkpoint '" + path + "'");
}

inline NiwState load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("checkpoint '" + path + "': malformed JSON: " + e.what());
  }
  if (!j.is_object())
    throw IoError("checkpoint '" + path + "': top level must be an object");
  for (const char* field :
       {"version", "d", "d_h", "kappa", "nu", "m", "psi", "h_mean", "h_ssd",
        "h_count"}) {
    if (!j.contains(field))
      throw IoError("checkpoint '" + path + "': missing field '" +
                    std::string(field) + "'");
  }
  if (!j["version"].is_number_integer())
    throw IoError("checkpoint '" + path + "': field 'version' must be an integer");
  const std::int64_t version = j["version"].get<std::int64_t>();
  if (version != 1)
    throw IoError("checkpoint '" + path + "': unsupported version " +
                  std::to_string(version) + " (expected 1)");
  if (!j["d"].is_number_integer() || !j["d_h"].is_number_integer() ||
      !j["h_count"].is_number_integer())
    throw IoError("checkpoint '" + path +
                  "': fields 'd', 'd_h', and 'h_count' must be integers");
  const auto d = static_cast<Eigen::Index>(j["d"].get<std::int64_t>());
  const auto d_h = static_cast<Eigen::Index>(j["d_h"].get<std::int64_t>());
  const std::int64_t h_count = j["h_count"].get<std::int64_t>();
  if (d < 1) throw IoError("checkpoint '" + path + "': d must be at least 1");
  if (d_h < 1)
    throw IoError("checkpoint '" + path + "': d_h must be at least 1");
  if (h_count < 0)
    throw IoError("checkpoint '" + path + "': h_count must be nonnegative");

  NiwState state;
  state.kappa = detail::checked_number(j["kappa"], "kappa");
  state.nu = detail::checked_number(j["nu"], "nu");
  if (state.kappa < 0.0 || state.nu < 0.0)
    throw IoError("checkpoint '" + path +
                  "': kappa and nu must be nonnegative");
  state.m = detail::checked_vector(j["m"], "m", d);

  const nlohmann::json& psi = j["psi"];
  if (!psi.is_array() || static_cast<Eigen::Index>(psi.size()) != d)
    throw IoError("checkpoint '" + path + "': field 'psi' must be a " +
                  std::to_string(d) + "-row matrix");
  state.psi.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    state.psi.row(i) =
        detail::checked_vector(psi[static_cast<std::size_t>(i)], "psi", d)
            .transpose();
  const double scale = std::max(1.0, state.psi.cwiseAbs().maxCoeff());
  if ((state.psi - state.psi.transpose()).cwiseAbs().maxCoeff() >
      1e-8 * scale)
    throw IoError("checkpoint '" + path + "': psi is not symmetric");
  state.psi = (0.5 * (state.psi + state.psi.transpose())).eval();

  const Eigen::VectorXd h_mean =
      detail::checked_vector(j["h_mean"], "h_mean", d_h);
  const Eigen::VectorXd h_ssd =
      detail::checked_vector(j["h_ssd"], "h_ssd", d_h);
  if ((h_ssd.array() < 0.0).any())
    throw IoError("checkpoint '" + path + "': h_ssd must be nonnegative");
  state.h_stats = DiagStats::from_parts(h_mean, h_ssd, h_count);
  return state;
}

}  // namespace lifenorm
