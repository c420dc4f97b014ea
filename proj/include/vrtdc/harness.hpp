#pragma once

// Configuration-driven experiment runner: instance building, seeded
// repetitions (optionally in parallel), CSV / JSON outputs.

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "vrtdc/algorithms.hpp"
#include "vrtdc/diagnostics.hpp"
#include "vrtdc/env.hpp"
#include "vrtdc/io.hpp"
#include "vrtdc/stats.hpp"
#include "vrtdc/theory.hpp"

namespace vrtdc {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct InstanceSpec {
  std::string type;  // garnet | cycle2 | frozen_lake | file
  GarnetParams garnet{20, 4, 3, 5, 0.95};
  double gamma = 0.95;  // frozen_lake
  std::size_t feature_dim = 4;  // frozen_lake
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::optional<std::uint64_t> policy_seed;
  PolicyKind target = PolicyKind::Random;
  PolicyKind behavior = PolicyKind::Uniform;
  std::filesystem::path path;  // file
  double radius_safety = 1.0;
};

struct AlgoSpec {
  std::string name;  // TD | TDC | VRTD | VRTDC
  std::string label;
  std::optional<double> alpha, beta;
  std::optional<std::size_t> M, epochs, steps;
};

struct ConditionsSpec {
  std::vector<Setting> settings{Setting::IID, Setting::Markov};
  std::optional<double> alpha, beta, M;
  std::optional<double> kappa, rho;
  std::size_t mixing_horizon = 200;
  bool scaled_coefficients = true;
};

struct ExperimentConfig {
  InstanceSpec instance;
  Setting sampling = Setting::Markov;
  std::vector<AlgoSpec> algorithms;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  std::uint64_t record_every = 10;
  std::uint64_t grid_step = 0;  // 0: record_every
  std::filesystem::path output_dir = "out";
  std::optional<double> epsilon;
  ScheduleCoefficients coefficients;
  ConditionsSpec conditions;
  std::size_t n_mc = kDefaultMonteCarloSamples;
  std::size_t threads = 1;

  std::uint64_t effective_grid_step() const { return grid_step ? grid_step : record_every; }
  std::uint64_t instance_seed() const { return instance.seed_set ? instance.seed : seed; }
};

namespace detail {

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ParseError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
std::optional<T> opt_field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) return std::nullopt;
  const Json& v = j.at(key);
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ParseError(where + "." + key + ": expected a nonnegative integer");
    } else if constexpr (std::is_arithmetic_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number()) throw ParseError(where + "." + key + ": expected a number");
    }
    return v.get<T>();
  } catch (const Json::exception& e) {
    throw ParseError(where + "." + key + ": " + e.what());
  }
}

inline PolicyKind parse_policy_kind(const std::string& s, const std::string& where) {
  if (s == "uniform") return PolicyKind::Uniform;
  if (s == "random") return PolicyKind::Random;
  throw ParseError(where + ": policy must be 'uniform' or 'random', got '" + s + "'");
}

inline Setting parse_setting_field(const std::string& s, const std::string& where) {
  if (s == "iid") return Setting::IID;
  if (s == "markov") return Setting::Markov;
  throw ParseError(where + ": expected 'iid' or 'markov', got '" + s + "'");
}

}  // namespace detail

/// Parses a JSON document. Relative model paths resolve against `base_dir`.
inline ExperimentConfig parse_config_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  using detail::opt_field;
  ExperimentConfig cfg;
  detail::reject_unknown(j,
                         {"instance", "sampling", "algorithms", "repetitions", "seed", "record_every", "grid_step",
                          "output_dir", "epsilon", "schedule", "conditions", "n_mc", "threads"},
                         "config");
  if (!j.contains("instance")) throw ParseError("config: missing key 'instance'");
  const Json& in = j["instance"];
  detail::reject_unknown(in,
                         {"type", "n_states", "n_actions", "branching", "dim", "gamma", "feature_dim", "seed",
                          "policy_seed", "target", "behavior", "path", "radius_safety"},
                         "instance");
  auto& is = cfg.instance;
  is.type = opt_field<std::string>(in, "type", "instance").value_or("");
  if (auto v = opt_field<std::size_t>(in, "n_states", "instance")) is.garnet.n_states = *v;
  if (auto v = opt_field<std::size_t>(in, "n_actions", "instance")) is.garnet.n_actions = *v;
  if (auto v = opt_field<std::size_t>(in, "branching", "instance")) is.garnet.branching = *v;
  if (auto v = opt_field<std::size_t>(in, "dim", "instance")) is.garnet.dim = *v;
  if (auto v = opt_field<double>(in, "gamma", "instance")) is.garnet.gamma = is.gamma = *v;
  if (auto v = opt_field<std::size_t>(in, "feature_dim", "instance")) is.feature_dim = *v;
  if (auto v = opt_field<std::uint64_t>(in, "seed", "instance")) {
    is.seed = *v;
    is.seed_set = true;
  }
  is.policy_seed = opt_field<std::uint64_t>(in, "policy_seed", "instance");
  if (auto v = opt_field<std::string>(in, "target", "instance")) is.target = detail::parse_policy_kind(*v, "instance.target");
  if (auto v = opt_field<std::string>(in, "behavior", "instance"))
    is.behavior = detail::parse_policy_kind(*v, "instance.behavior");
  if (auto v = opt_field<std::string>(in, "path", "instance")) {
    is.path = *v;
    if (is.path.is_relative() && !base_dir.empty()) is.path = base_dir / is.path;
  }
  if (auto v = opt_field<double>(in, "radius_safety", "instance")) is.radius_safety = *v;

  if (auto v = opt_field<std::string>(j, "sampling", "config")) cfg.sampling = detail::parse_setting_field(*v, "sampling");
  if (j.contains("algorithms")) {
    if (!j["algorithms"].is_array()) throw ParseError("algorithms: expected an array");
    std::size_t k = 0;
    for (const Json& a : j["algorithms"]) {
      const std::string where = "algorithms[" + std::to_string(k++) + "]";
      detail::reject_unknown(a, {"name", "label", "alpha", "beta", "M", "epochs", "steps"}, where);
      AlgoSpec s;
      s.name = opt_field<std::string>(a, "name", where).value_or("");
      s.label = opt_field<std::string>(a, "label", where).value_or(s.name);
      s.alpha = opt_field<double>(a, "alpha", where);
      s.beta = opt_field<double>(a, "beta", where);
      s.M = opt_field<std::size_t>(a, "M", where);
      s.epochs = opt_field<std::size_t>(a, "epochs", where);
      s.steps = opt_field<std::size_t>(a, "steps", where);
      cfg.algorithms.push_back(std::move(s));
    }
  }
  if (auto v = opt_field<std::size_t>(j, "repetitions", "config")) cfg.repetitions = *v;
  if (auto v = opt_field<std::uint64_t>(j, "seed", "config")) cfg.seed = *v;
  if (auto v = opt_field<std::uint64_t>(j, "record_every", "config")) cfg.record_every = *v;
  if (auto v = opt_field<std::uint64_t>(j, "grid_step", "config")) cfg.grid_step = *v;
  if (auto v = opt_field<std::string>(j, "output_dir", "config")) cfg.output_dir = *v;
  cfg.epsilon = opt_field<double>(j, "epsilon", "config");
  if (j.contains("schedule")) {
    const Json& s = j["schedule"];
    detail::reject_unknown(s, {"c_alpha", "c_beta", "c_M", "c_m"}, "schedule");
    auto& c = cfg.coefficients;
    c.c_alpha = opt_field<double>(s, "c_alpha", "schedule").value_or(c.c_alpha);
    c.c_beta = opt_field<double>(s, "c_beta", "schedule").value_or(c.c_beta);
    c.c_M = opt_field<double>(s, "c_M", "schedule").value_or(c.c_M);
    c.c_m = opt_field<double>(s, "c_m", "schedule").value_or(c.c_m);
  }
  if (j.contains("conditions")) {
    const Json& c = j["conditions"];
    detail::reject_unknown(c, {"settings", "alpha", "beta", "M", "kappa", "rho", "mixing_horizon", "coefficients"},
                           "conditions");
    auto& cs = cfg.conditions;
    if (c.contains("settings")) {
      if (!c["settings"].is_array()) throw ParseError("conditions.settings: expected an array");
      cs.settings.clear();
      for (const Json& s : c["settings"]) {
        if (!s.is_string()) throw ParseError("conditions.settings: expected strings");
        cs.settings.push_back(detail::parse_setting_field(s.get<std::string>(), "conditions.settings"));
      }
    }
    cs.alpha = opt_field<double>(c, "alpha", "conditions");
    cs.beta = opt_field<double>(c, "beta", "conditions");
    cs.M = opt_field<double>(c, "M", "conditions");
    cs.kappa = opt_field<double>(c, "kappa", "conditions");
    cs.rho = opt_field<double>(c, "rho", "conditions");
    if (auto v = opt_field<std::size_t>(c, "mixing_horizon", "conditions")) cs.mixing_horizon = *v;
    if (auto v = opt_field<std::string>(c, "coefficients", "conditions")) {
      if (*v != "unit" && *v != "scaled") throw ParseError("conditions.coefficients: expected 'unit' or 'scaled'");
      cs.scaled_coefficients = *v == "scaled";
    }
  }
  if (auto v = opt_field<std::size_t>(j, "n_mc", "config")) cfg.n_mc = *v;
  if (auto v = opt_field<std::size_t>(j, "threads", "config")) cfg.threads = *v;
  return cfg;
}

/// Every rule violation in the config, empty when valid.
inline std::vector<std::string> config_violations(const ExperimentConfig& cfg) {
  std::vector<std::string> v;
  const auto& is = cfg.instance;
  if (is.type == "garnet") {
    const auto& g = is.garnet;
    if (g.n_states < 1) v.push_back("instance.n_states must be >= 1");
    if (g.n_actions < 1) v.push_back("instance.n_actions must be >= 1");
    if (g.dim < 1) v.push_back("instance.dim must be >= 1");
    if (g.branching < 1 || g.branching > g.n_states) v.push_back("instance.branching must lie in [1, n_states]");
    if (!(g.gamma > 0.0 && g.gamma < 1.0)) v.push_back("instance.gamma must lie in (0, 1)");
  } else if (is.type == "frozen_lake") {
    if (!(is.gamma > 0.0 && is.gamma < 1.0)) v.push_back("instance.gamma must lie in (0, 1)");
    if (is.feature_dim < 1) v.push_back("instance.feature_dim must be >= 1");
  } else if (is.type == "file") {
    if (is.path.empty()) v.push_back("instance.path is required for type 'file'");
    else if (!std::filesystem::exists(is.path)) v.push_back("instance.path '" + is.path.string() + "' does not exist");
  } else if (is.type != "cycle2") {
    v.push_back("instance.type must be one of garnet, cycle2, frozen_lake, file (got '" + is.type + "')");
  }
  if (!(is.radius_safety >= 1.0)) v.push_back("instance.radius_safety must be >= 1");

  if (cfg.repetitions < 1) v.push_back("repetitions must be >= 1");
  if (cfg.record_every < 1) v.push_back("record_every must be >= 1");
  if (cfg.threads < 1) v.push_back("threads must be >= 1");
  if (cfg.n_mc < 2) v.push_back("n_mc must be >= 2");
  if (cfg.epsilon && !(*cfg.epsilon > 0.0 && *cfg.epsilon < 1.0)) v.push_back("epsilon must lie in (0, 1)");
  const auto& k = cfg.coefficients;
  if (!(k.c_alpha > 0 && k.c_beta > 0 && k.c_M > 0 && k.c_m > 0)) v.push_back("schedule coefficients must be positive");

  std::set<std::string> labels;
  for (std::size_t i = 0; i < cfg.algorithms.size(); ++i) {
    const auto& a = cfg.algorithms[i];
    const std::string where = "algorithms[" + std::to_string(i) + "]";
    const bool vr = a.name == "VRTD" || a.name == "VRTDC";
    const bool base = a.name == "TD" || a.name == "TDC";
    if (!vr && !base) v.push_back(where + ".name must be one of TD, TDC, VRTD, VRTDC (got '" + a.name + "')");
    if (a.label.empty()) v.push_back(where + ".label must be non-empty");
    else if (!labels.insert(a.label).second) v.push_back(where + ".label '" + a.label + "' is duplicated");
    const bool sched = cfg.epsilon.has_value();
    if (!a.alpha && !sched) v.push_back(where + ".alpha is required");
    if (a.alpha && !(*a.alpha >= 0.0)) v.push_back(where + ".alpha must be >= 0");
    const bool two = a.name == "TDC" || a.name == "VRTDC";
    if (two && !a.beta && !sched) v.push_back(where + ".beta is required");
    if (a.beta && !(*a.beta >= 0.0)) v.push_back(where + ".beta must be >= 0");
    if (vr) {
      if (!a.M && !sched) v.push_back(where + ".M is required");
      if (a.M && *a.M < 1) v.push_back(where + ".M must be >= 1");
      if (!a.epochs && !sched) v.push_back(where + ".epochs is required");
      if (a.epochs && *a.epochs < 1) v.push_back(where + ".epochs must be >= 1");
    }
    if (base && (!a.steps || *a.steps < 1)) v.push_back(where + ".steps must be >= 1");
  }

  const auto& c = cfg.conditions;
  const int explicit_count = c.alpha.has_value() + c.beta.has_value() + c.M.has_value();
  if (explicit_count != 0 && explicit_count != 3) v.push_back("conditions.alpha, beta and M must be given together");
  if (c.alpha && !(*c.alpha > 0)) v.push_back("conditions.alpha must be > 0");
  if (c.beta && !(*c.beta > 0)) v.push_back("conditions.beta must be > 0");
  if (c.M && !(*c.M >= 1)) v.push_back("conditions.M must be >= 1");
  if (c.kappa && !(*c.kappa >= 0)) v.push_back("conditions.kappa must be >= 0");
  if (c.rho && !(*c.rho >= 0 && *c.rho < 1)) v.push_back("conditions.rho must lie in [0, 1)");
  if (c.settings.empty()) v.push_back("conditions.settings must not be empty");
  if (c.mixing_horizon < 1) v.push_back("conditions.mixing_horizon must be >= 1");
  return v;
}

inline void validate_config(const ExperimentConfig& cfg) {
  const auto v = config_violations(cfg);
  if (v.empty()) return;
  std::string msg = std::to_string(v.size()) + " config violation(s):";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ValidationError(msg);
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig cfg = parse_config_json(parse_json_text(text, "config"), base_dir);
  validate_config(cfg);
  return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  return parse_config_text(read_text_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

inline InstanceBundle build_instance(const ExperimentConfig& cfg) {
  const auto& is = cfg.instance;
  const std::uint64_t seed = cfg.instance_seed();
  const std::uint64_t pseed = is.policy_seed.value_or(derive_seed(seed, 7));
  auto policies = [&](std::size_t ns, std::size_t na) {
    return std::pair{make_policy(is.target, ns, na, pseed), make_policy(is.behavior, ns, na, derive_seed(pseed, 1))};
  };
  if (is.type == "garnet") {
    auto g = generate_garnet(is.garnet, seed);
    auto [t, b] = policies(is.garnet.n_states, is.garnet.n_actions);
    return {std::move(g.model), std::move(g.features), std::move(t), std::move(b)};
  }
  if (is.type == "cycle2") {
    auto c = make_cycle2();
    return {std::move(c.model), std::move(c.features), c.policy, c.policy};
  }
  if (is.type == "frozen_lake") {
    auto model = make_frozen_lake(is.gamma);
    auto [t, b] = policies(frozen_lake::kStates, frozen_lake::kActions);
    return {std::move(model), make_features_gaussian(frozen_lake::kStates, is.feature_dim, seed), std::move(t),
            std::move(b)};
  }
  if (is.type == "file") return load_instance(is.path);
  throw ValidationError("unknown instance type '" + is.type + "'");
}

inline EvaluationProblem build_problem(const InstanceBundle& b, double radius_safety) {
  return make_problem(b.model, b.features, b.target, b.behavior, radius_safety);
}

// ---------------------------------------------------------------------------
// Resolved algorithm runs
// ---------------------------------------------------------------------------

inline Algo resolve_algo(const std::string& name, Setting sampling) {
  if (name == "VRTDC") return sampling == Setting::IID ? Algo::VRTDC_IID : Algo::VRTDC_MARKOV;
  return parse_algo(name);
}

/// Parameters for one algorithm entry; missing step sizes and batch sizes
/// come from the epsilon schedule.
inline AlgoParams resolve_params(const ExperimentConfig& cfg, const AlgoSpec& spec, const Radii& radii,
                                 std::uint64_t seed) {
  AlgoParams p;
  p.algo = resolve_algo(spec.name, cfg.sampling);
  std::optional<Schedule> sched;
  if (cfg.epsilon) sched = schedule_from_epsilon(cfg.sampling, *cfg.epsilon, cfg.coefficients);
  p.alpha = spec.alpha ? *spec.alpha : sched->alpha;
  p.beta = spec.beta ? *spec.beta : (sched ? sched->beta : 0.0);
  p.M = spec.M ? *spec.M : (sched ? sched->M : 1);
  p.epochs = spec.epochs ? *spec.epochs : (sched ? sched->m : 1);
  p.steps = spec.steps.value_or(0);
  p.radii = radii;
  p.seed = seed;
  p.record_every = cfg.record_every;
  return p;
}

/// Seeds used by one repetition.
struct RepSeeds {
  std::uint64_t rep;
  std::uint64_t data;
  std::uint64_t algo;
  std::uint64_t mc;
};

inline RepSeeds rep_seeds(std::uint64_t base, std::size_t rep) {
  const std::uint64_t r = derive_seed(base, rep);
  return {r, derive_seed(r, 1), derive_seed(r, 2), derive_seed(r, 3)};
}

/// Runs one configured algorithm. Every algorithm of a repetition consumes
/// the same sample stream (same data seed).
template <class Obs = NullObserver>
RunTrace run_algorithm(const EvaluationProblem& prob, Setting sampling, const AlgoParams& p, std::uint64_t data_seed,
                       Obs&& obs = Obs{}) {
  const bool iid = sampling == Setting::IID;
  const auto start = TrajectoryStart::stationary(prob.mu);
  if (p.algo == Algo::TD || p.algo == Algo::TDC) {
    if (iid) {
      IidSampler src(prob.model, prob.behavior, prob.mu, data_seed);
      return run_baseline(p, src, prob, obs);
    }
    TrajectorySampler src(prob.model, prob.behavior, data_seed, prob.mu);
    return run_baseline(p, src, prob, obs);
  }
  if (iid) {
    IidSampler src(prob.model, prob.behavior, prob.mu, data_seed);
    if (p.algo == Algo::VRTD) return run_vrtd(p, src, prob, obs);
    return run_vrtdc_iid(p, src, prob, obs);
  }
  const auto traj = sample_trajectory(prob.model, prob.behavior, p.M * p.epochs, data_seed, start);
  if (p.algo == Algo::VRTD) return run_vrtd_markov(p, traj, prob, obs);
  return run_vrtdc_markov(p, traj, prob, obs);
}

// ---------------------------------------------------------------------------
// Repetition-level parallelism
// ---------------------------------------------------------------------------

/// Calls fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception (by index) is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::max<std::size_t>(1, std::min(threads, n));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace detail {

inline Json params_json(const AlgoParams& p) {
  return {{"algo", std::string(to_string(p.algo))},
          {"alpha", p.alpha},
          {"beta", p.beta},
          {"M", p.M},
          {"epochs", p.epochs},
          {"steps", p.steps},
          {"record_every", p.record_every},
          {"R_theta", p.radii.R_theta},
          {"R_w", p.radii.R_w}};
}

inline Json instance_summary(const InstanceBundle& b, const EvaluationProblem& prob) {
  return {{"provenance", b.model.provenance()},
          {"hash", hex64(instance_hash(b))},
          {"n_states", b.model.n_states()},
          {"n_actions", b.model.n_actions()},
          {"dim", b.features.dim()},
          {"gamma", b.model.gamma()},
          {"periodic", prob.periodic},
          {"theta_star", prob.moments.theta_star},
          {"lambda_A_hat", prob.spectral.lambda_A_hat},
          {"lambda_C", prob.spectral.lambda_C},
          {"min_abs_eig_C", prob.spectral.min_abs_eig_C},
          {"rho_max", prob.spectral.rho_max},
          {"r_max", prob.spectral.r_max},
          {"R_theta", prob.radii.R_theta},
          {"R_w", prob.radii.R_w}};
}

inline const char* kPgAccounting =
    "TD 1 and TDC 2 per step; VRTD batch M, inner step 2; VRTDC batch 2M, inner step 4";

}  // namespace detail

/// Writes the configured instance as a model file; returns its path.
inline std::filesystem::path cmd_gen(const ExperimentConfig& cfg) {
  ensure_directory(cfg.output_dir);
  const auto bundle = build_instance(cfg);
  const auto path = cfg.output_dir / "model.json";
  save_instance(bundle, path);
  return path;
}

struct RepOutcome {
  std::vector<RunTrace> traces;        // one per algorithm entry
  std::vector<std::string> errors;     // empty string on success
};

struct RunSummary {
  std::vector<std::string> labels;
  std::vector<RepOutcome> reps;
  std::filesystem::path manifest;
};

/// Runs every algorithm for every repetition and writes traces, envelopes
/// and the manifest.
inline RunSummary cmd_run(const ExperimentConfig& cfg) {
  validate_config(cfg);
  if (cfg.algorithms.empty()) throw ValidationError("run needs at least one algorithm");
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = cfg.output_dir;
  ensure_directory(out);
  ensure_directory(out / "traces");
  const auto bundle = build_instance(cfg);
  const auto prob = build_problem(bundle, cfg.instance.radius_safety);

  RunSummary sum;
  for (const auto& a : cfg.algorithms) sum.labels.push_back(a.label);
  sum.reps.resize(cfg.repetitions);
  parallel_for(cfg.repetitions, cfg.threads, [&](std::size_t rep) {
    const auto seeds = rep_seeds(cfg.seed, rep);
    RepOutcome& o = sum.reps[rep];
    o.traces.resize(cfg.algorithms.size());
    o.errors.resize(cfg.algorithms.size());
    for (std::size_t k = 0; k < cfg.algorithms.size(); ++k) {
      try {
        const auto p = resolve_params(cfg, cfg.algorithms[k], prob.radii, seeds.algo);
        o.traces[k] = run_algorithm(prob, cfg.sampling, p, seeds.data);
      } catch (const std::exception& e) {
        o.errors[k] = e.what();
      }
    }
  });

  Json manifest;
  manifest["instance"] = detail::instance_summary(bundle, prob);
  manifest["sampling"] = std::string(to_string(cfg.sampling));
  manifest["base_seed"] = cfg.seed;
  manifest["instance_seed"] = cfg.instance_seed();
  manifest["repetitions"] = cfg.repetitions;
  manifest["threads"] = cfg.threads;
  manifest["pg_accounting"] = detail::kPgAccounting;
  if (cfg.epsilon) {
    manifest["epsilon"] = *cfg.epsilon;
    manifest["schedule_coefficients"] = to_json(cfg.coefficients);
  }
  Json algos = Json::array();
  for (std::size_t k = 0; k < cfg.algorithms.size(); ++k) {
    const auto& spec = cfg.algorithms[k];
    Json a;
    a["label"] = spec.label;
    a["params"] = detail::params_json(resolve_params(cfg, spec, prob.radii, 0));
    std::vector<RunTrace> ok;
    Json reps = Json::array();
    for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
      const auto& o = sum.reps[rep];
      Json r;
      r["rep"] = rep;
      r["seed"] = rep_seeds(cfg.seed, rep).rep;
      if (o.errors[k].empty()) {
        const auto& tr = o.traces[k];
        write_text_file(out / "traces" / (spec.label + "_rep" + std::to_string(rep) + ".csv"), trace_csv(tr));
        r["final_conv_error"] = convergence_error(tr.final_theta, prob.moments.theta_star);
        r["final_tracking_error_sq"] = tracking_error_sq(tr.final_theta, tr.final_w, prob.moments);
        r["pg_count"] = tr.total_pg_count;
        r["samples_used"] = tr.samples_used;
        r["error"] = nullptr;
        ok.push_back(tr);
      } else {
        r["error"] = o.errors[k];
      }
      reps.push_back(std::move(r));
    }
    a["reps"] = std::move(reps);
    if (!ok.empty()) {
      std::uint64_t max_count = 0;
      for (const auto& tr : ok) max_count = std::max(max_count, tr.total_pg_count);
      const auto grid = make_grid(max_count, cfg.effective_grid_step());
      write_text_file(out / ("envelope_" + spec.label + "_conv_error.csv"),
                      envelope_csv(aggregate_envelope(ok, grid, Metric::ConvError)));
      write_text_file(out / ("envelope_" + spec.label + "_tracking_error_sq.csv"),
                      envelope_csv(aggregate_envelope(ok, grid, Metric::TrackingErrorSq)));
    }
    algos.push_back(std::move(a));
  }
  manifest["algorithms"] = std::move(algos);
  manifest["wall_time_sec"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  sum.manifest = out / "manifest.json";
  write_text_file(sum.manifest, manifest.dump(2) + "\n");
  return sum;
}

struct SettingOutcome {
  Setting setting;
  std::string mode;  // explicit | schedule | search
  bool found = true;
  std::optional<double> epsilon;
  ConditionReport report;
};

struct ConditionsSummary {
  std::vector<SettingOutcome> outcomes;
  MixingEstimate mixing;
  std::filesystem::path path;
};

/// Evaluates the feasibility conditions (explicit alpha/beta/M, an epsilon
/// schedule, or an epsilon search) and writes conditions.json.
inline ConditionsSummary cmd_conditions(const ExperimentConfig& cfg) {
  validate_config(cfg);
  ensure_directory(cfg.output_dir);
  const auto bundle = build_instance(cfg);
  const auto prob = build_problem(bundle, cfg.instance.radius_safety);
  const auto in = TheoryInputs::from(prob.spectral, prob.radii, prob.gamma());
  const auto& cs = cfg.conditions;

  ConditionsSummary sum;
  Json doc;
  doc["instance"] = detail::instance_summary(bundle, prob);
  doc["inputs"] = to_json(in);
  const auto vb = vr_bounds(in.R_theta, in.r_max, in.rho_max, in.gamma, in.min_eig);
  doc["G_VR"] = vb.G_VR;
  doc["H_VR"] = vb.H_VR;

  const bool need_markov = std::find(cs.settings.begin(), cs.settings.end(), Setting::Markov) != cs.settings.end();
  if (need_markov) {
    if (!cs.kappa || !cs.rho) {
      const auto chain = induced_chain(prob.model, prob.behavior);
      sum.mixing = estimate_mixing(chain, prob.mu, cs.mixing_horizon);
      doc["mixing_fit"] = {{"kappa", sum.mixing.kappa}, {"rho", sum.mixing.rho}, {"horizon", cs.mixing_horizon}};
    }
    if (cs.kappa) sum.mixing.kappa = *cs.kappa;
    if (cs.rho) sum.mixing.rho = *cs.rho;
    doc["mixing"] = {{"kappa", sum.mixing.kappa}, {"rho", sum.mixing.rho}};
  }

  Json settings = Json::object();
  for (Setting s : cs.settings) {
    Json sj;
    SettingOutcome oc;
    oc.setting = s;
    auto evaluate = [&](const auto& consts) {
      sj["constants"] = to_json(consts);
      if (cs.alpha) {
        oc.mode = "explicit";
        oc.report = check_conditions(consts, *cs.alpha, *cs.beta, *cs.M);
      } else if (cfg.epsilon) {
        oc.mode = "schedule";
        oc.epsilon = cfg.epsilon;
        const auto sch = schedule_from_epsilon(s, *cfg.epsilon, cfg.coefficients);
        sj["coefficients"] = to_json(cfg.coefficients);
        sj["schedule"] = to_json(sch);
        oc.report = check_conditions(consts, sch.alpha, sch.beta, static_cast<double>(sch.M));
      } else {
        oc.mode = "search";
        const auto cands = cs.scaled_coefficients ? default_coefficient_candidates(s, in.lambda_A_hat)
                                                  : std::vector<ScheduleCoefficients>{cfg.coefficients};
        const auto grid = default_epsilon_grid();
        const auto res = epsilon_search(s, consts, grid, cands);
        oc.found = res.found;
        sj["epsilon_grid"] = grid;
        sj["candidates_evaluated"] = res.evaluated;
        sj["found"] = res.found;
        if (res.found) {
          oc.epsilon = res.epsilon;
          sj["epsilon"] = res.epsilon;
          sj["coefficients"] = to_json(res.coefficients);
          sj["schedule"] = to_json(res.schedule);
        }
        oc.report = res.report;
      }
    };
    if (s == Setting::IID) evaluate(constants_iid(in));
    else evaluate(constants_markov(in, sum.mixing));
    sj["mode"] = oc.mode;
    sj["report"] = to_json(oc.report);
    settings[std::string(to_string(s))] = std::move(sj);
    sum.outcomes.push_back(std::move(oc));
  }
  doc["settings"] = std::move(settings);
  sum.path = cfg.output_dir / "conditions.json";
  write_text_file(sum.path, doc.dump(2) + "\n");
  return sum;
}

struct VariancePoint {
  std::uint64_t pg_count = 0;
  double var_theta = 0.0;
  double var_w = 0.0;
};

namespace detail {

struct VarianceObserver {
  const SampleContext* ctx;
  IidSampler* mc;
  std::size_t n_mc;
  std::vector<VariancePoint>* out;
  void on_batch(const UpdateSnapshot&, std::span<const Transition>) {}
  void on_step(const StepEvent&) {}
  void on_record(const UpdateSnapshot& snap, std::uint64_t count) {
    if (is_variance_reduced(snap.algo) && !snap.has_anchor) return;
    const auto v = mc_update_variance([&](const Transition& x) { return snap.update(x, *ctx); }, *mc, n_mc);
    out->push_back({count, v.var_theta, v.var_w});
  }
};

}  // namespace detail

/// Runs one algorithm and estimates the update variance with n_mc fresh
/// stationary samples at every recorded step.
inline std::vector<VariancePoint> variance_trace(const EvaluationProblem& prob, Setting sampling, const AlgoParams& p,
                                                 std::uint64_t data_seed, std::uint64_t mc_seed, std::size_t n_mc) {
  const SampleContext ctx(prob);
  IidSampler mc(prob.model, prob.behavior, prob.mu, mc_seed);
  std::vector<VariancePoint> pts;
  detail::VarianceObserver obs{&ctx, &mc, n_mc, &pts};
  run_algorithm(prob, sampling, p, data_seed, obs);
  return pts;
}

struct VarianceSummary {
  std::vector<std::string> labels;                         // TDC label, VRTDC label
  std::vector<std::vector<std::vector<VariancePoint>>> reps;  // [rep][algo]
};

/// Runs the first TDC and the first VRTDC entry side by side and writes
/// per-repetition and median variance curves.
inline VarianceSummary cmd_variance(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const AlgoSpec* tdc = nullptr;
  const AlgoSpec* vrtdc = nullptr;
  for (const auto& a : cfg.algorithms) {
    if (a.name == "TDC" && !tdc) tdc = &a;
    if (a.name == "VRTDC" && !vrtdc) vrtdc = &a;
  }
  if (!tdc || !vrtdc) throw ValidationError("variance needs one TDC and one VRTDC entry in algorithms");
  const auto out = cfg.output_dir;
  ensure_directory(out);
  ensure_directory(out / "variance");
  const auto bundle = build_instance(cfg);
  const auto prob = build_problem(bundle, cfg.instance.radius_safety);
  const std::vector<const AlgoSpec*> specs{tdc, vrtdc};

  VarianceSummary sum;
  for (const auto* s : specs) sum.labels.push_back(s->label);
  sum.reps.resize(cfg.repetitions);
  parallel_for(cfg.repetitions, cfg.threads, [&](std::size_t rep) {
    const auto seeds = rep_seeds(cfg.seed, rep);
    for (const auto* s : specs) {
      const auto p = resolve_params(cfg, *s, prob.radii, seeds.algo);
      sum.reps[rep].push_back(variance_trace(prob, cfg.sampling, p, seeds.data, seeds.mc, cfg.n_mc));
    }
  });

  for (std::size_t k = 0; k < specs.size(); ++k) {
    const std::vector<std::string> header{"pg_count", "var_theta_update", "var_w_update"};
    for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
      CsvWriter w(header);
      for (const auto& pt : sum.reps[rep][k]) w.row(pt.pg_count, {pt.var_theta, pt.var_w});
      w.save(out / "variance" / (specs[k]->label + "_rep" + std::to_string(rep) + ".csv"));
    }
    // Record counts depend only on the parameters, so reps align index by index.
    CsvWriter w(header);
    const auto& first = sum.reps[0][k];
    for (std::size_t i = 0; i < first.size(); ++i) {
      Vector vt, vw;
      for (std::size_t rep = 0; rep < cfg.repetitions; ++rep) {
        vt.push_back(sum.reps[rep][k].at(i).var_theta);
        vw.push_back(sum.reps[rep][k].at(i).var_w);
      }
      w.row(first[i].pg_count, {median(vt), median(vw)});
    }
    w.save(out / ("variance_" + specs[k]->label + ".csv"));
  }
  return sum;
}

}  // namespace vrtdc
