#pragma once

// JSON model files, condition-report documents and CSV writing.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vrtdc/diagnostics.hpp"
#include "vrtdc/env.hpp"
#include "vrtdc/errors.hpp"
#include "vrtdc/rng.hpp"
#include "vrtdc/theory.hpp"

namespace vrtdc {

using Json = nlohmann::ordered_json;

/// Full-precision, locale-independent decimal form of a double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.close();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header plus rows of one integer key followed by doubles.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : cols_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
    text_ += '\n';
  }

  void row(std::uint64_t key, std::initializer_list<double> values) {
    if (values.size() + 1 != cols_) throw DimensionMismatch("csv row width");
    text_ += std::to_string(key);
    for (double v : values) text_ += "," + format_double(v);
    text_ += '\n';
  }

  const std::string& str() const { return text_; }
  void save(const std::filesystem::path& path) const { write_text_file(path, text_); }

 private:
  std::size_t cols_;
  std::string text_;
};

inline std::string trace_csv(const RunTrace& trace) {
  CsvWriter w({"pg_count", "conv_error", "tracking_error_sq"});
  for (const auto& p : trace.points) w.row(p.pg_count, {p.conv_error, p.tracking_error_sq});
  return w.str();
}

inline std::string envelope_csv(const Envelope& env) {
  CsvWriter w({"pg_count", "p5", "p50", "p95"});
  for (std::size_t k = 0; k < env.grid.size(); ++k) w.row(env.grid[k], {env.p5[k], env.p50[k], env.p95[k]});
  return w.str();
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// Everything needed to rebuild an evaluation problem.
struct InstanceBundle {
  MDPModel model;
  FeatureMap features;
  Policy target;
  Policy behavior;
};

namespace detail {

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

inline Json table3_json(const std::vector<double>& flat, std::size_t ns, std::size_t na) {
  Json outer = Json::array();
  for (std::size_t s = 0; s < ns; ++s) {
    Json mid = Json::array();
    for (std::size_t a = 0; a < na; ++a) {
      const auto* p = flat.data() + (s * na + a) * ns;
      mid.push_back(std::vector<double>(p, p + ns));
    }
    outer.push_back(std::move(mid));
  }
  return outer;
}

template <class T>
T get_field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ParseError(where + ": key '" + key + "': " + e.what());
  }
}

inline Matrix matrix_from_json(const Json& j, std::size_t rows, std::size_t cols, const std::string& where) {
  if (!j.is_array() || j.size() != rows) throw ParseError(where + ": expected " + std::to_string(rows) + " rows");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw ParseError(where + ": row " + std::to_string(i) + " should have " + std::to_string(cols) + " entries");
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw ParseError(where + ": non-numeric entry");
      m(i, k) = j[i][k].get<double>();
    }
  }
  return m;
}

inline std::vector<double> table3_from_json(const Json& j, std::size_t ns, std::size_t na, const std::string& where) {
  if (!j.is_array() || j.size() != ns) throw ParseError(where + ": expected " + std::to_string(ns) + " states");
  std::vector<double> flat;
  flat.reserve(ns * na * ns);
  for (std::size_t s = 0; s < ns; ++s) {
    const Matrix m = matrix_from_json(j[s], na, ns, where + "[" + std::to_string(s) + "]");
    for (std::size_t a = 0; a < na; ++a)
      for (std::size_t t = 0; t < ns; ++t) flat.push_back(m(a, t));
  }
  return flat;
}

}  // namespace detail

inline Json instance_to_json(const InstanceBundle& b) {
  const auto ns = b.model.n_states(), na = b.model.n_actions();
  Json j;
  j["n_states"] = ns;
  j["n_actions"] = na;
  j["gamma"] = b.model.gamma();
  j["r_max"] = b.model.r_max();
  j["kernel"] = detail::table3_json(b.model.kernel(), ns, na);
  j["reward"] = detail::table3_json(b.model.reward(), ns, na);
  j["features"] = detail::matrix_json(b.features.matrix());
  j["target_policy"] = detail::matrix_json(b.target.probs());
  j["behavior_policy"] = detail::matrix_json(b.behavior.probs());
  j["provenance"] = b.model.provenance();
  return j;
}

inline InstanceBundle instance_from_json(const Json& j, const std::string& where = "model") {
  static const std::vector<std::string> known = {"n_states", "n_actions", "gamma", "r_max", "kernel", "reward",
                                                 "features", "target_policy", "behavior_policy", "provenance"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ParseError(where + ": unknown key '" + k + "'");
  const auto ns = detail::get_field<std::size_t>(j, "n_states", where);
  const auto na = detail::get_field<std::size_t>(j, "n_actions", where);
  const auto gamma = detail::get_field<double>(j, "gamma", where);
  if (!j.contains("features") || !j["features"].is_array() || j["features"].empty() || !j["features"][0].is_array())
    throw ParseError(where + ": 'features' must be a non-empty nested array");
  const std::size_t d = j["features"][0].size();
  std::optional<double> r_max;
  if (j.contains("r_max")) r_max = detail::get_field<double>(j, "r_max", where);
  const std::string prov = j.contains("provenance") ? detail::get_field<std::string>(j, "provenance", where) : "";
  try {
    MDPModel model(ns, na, gamma, detail::table3_from_json(j.at("kernel"), ns, na, where + ".kernel"),
                   detail::table3_from_json(j.at("reward"), ns, na, where + ".reward"), prov, r_max);
    FeatureMap phi(detail::matrix_from_json(j["features"], ns, d, where + ".features"));
    const Matrix uniform(ns, na, 1.0 / static_cast<double>(na));
    Policy target(j.contains("target_policy")
                      ? detail::matrix_from_json(j["target_policy"], ns, na, where + ".target_policy")
                      : uniform);
    Policy behavior(j.contains("behavior_policy")
                        ? detail::matrix_from_json(j["behavior_policy"], ns, na, where + ".behavior_policy")
                        : uniform);
    return {std::move(model), std::move(phi), std::move(target), std::move(behavior)};
  } catch (const Json::out_of_range& e) {
    throw ParseError(where + ": " + e.what());
  }
}

/// FNV-1a of the canonical serialization; equal for lossless round trips.
inline std::uint64_t instance_hash(const InstanceBundle& b) { return fnv1a64(instance_to_json(b).dump()); }

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void save_instance(const InstanceBundle& b, const std::filesystem::path& path) {
  write_text_file(path, instance_to_json(b).dump(1) + "\n");
}

inline InstanceBundle load_instance(const std::filesystem::path& path) {
  return instance_from_json(parse_json_text(read_text_file(path), path.string()), path.string());
}

// ---------------------------------------------------------------------------
// Theory documents
// ---------------------------------------------------------------------------

inline Json to_json(const ConditionReport& r) {
  Json j;
  j["setting"] = std::string(to_string(r.setting));
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  j["M"] = r.M;
  j["D"] = r.rates.D;
  j["E"] = r.rates.E;
  j["F"] = r.rates.F;
  j["max_DEF"] = std::max({r.rates.D, r.rates.E, r.rates.F});
  Json conds = Json::array();
  for (const auto& c : r.conditions)
    conds.push_back({{"id", c.id},
                     {"description", c.description},
                     {"lhs", c.lhs},
                     {"relation", std::string(to_string(c.rel))},
                     {"rhs", c.rhs},
                     {"pass", c.pass}});
  j["conditions"] = std::move(conds);
  Json viol = Json::array();
  for (const auto* c : r.violations()) viol.push_back(c->id);
  j["violations"] = std::move(viol);
  j["overall"] = r.overall;
  return j;
}

inline Json to_json(const TheoryInputs& in) {
  return {{"lambda_A_hat", in.lambda_A_hat}, {"lambda_C", in.lambda_C}, {"min_abs_eig_C", in.min_eig},
          {"rho_max", in.rho_max},           {"r_max", in.r_max},       {"gamma", in.gamma},
          {"R_theta", in.R_theta},           {"R_w", in.R_w}};
}

inline Json to_json(const BoundConstantsIID& c) {
  return {{"K1", c.K1}, {"K2", c.K2}, {"C1", c.C1}, {"C2", c.C2}, {"C3", c.C3}, {"C4", c.C4}};
}

inline Json to_json(const BoundConstantsMarkov& c) {
  return {{"kappa", c.kappa}, {"rho", c.rho_mix}, {"K1", c.K1}, {"K2", c.K2}, {"K3", c.K3}, {"K4", c.K4},
          {"K5", c.K5},       {"Q", c.Q},         {"C1", c.C1}, {"C2", c.C2}};
}

inline Json to_json(const ScheduleCoefficients& k) {
  return {{"c_alpha", k.c_alpha}, {"c_beta", k.c_beta}, {"c_M", k.c_M}, {"c_m", k.c_m}};
}

inline Json to_json(const Schedule& s) {
  return {{"alpha", s.alpha}, {"beta", s.beta}, {"M", s.M}, {"epochs", s.m}};
}

}  // namespace vrtdc
