#pragma once

// Bound constants, rate expressions and step-size feasibility conditions for
// variance-reduced TDC, plus epsilon-driven schedules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vrtdc/env.hpp"
#include "vrtdc/errors.hpp"
#include "vrtdc/stats.hpp"

namespace vrtdc {

enum class Setting { IID, Markov };

inline std::string_view to_string(Setting s) { return s == Setting::IID ? "iid" : "markov"; }

inline Setting parse_setting(std::string_view s) {
  if (s == "iid") return Setting::IID;
  if (s == "markov") return Setting::Markov;
  throw InvalidParams("unknown setting '" + std::string(s) + "'");
}

struct VRBounds {
  double G_VR = 0.0;
  double H_VR = 0.0;
};

inline VRBounds vr_bounds(double R_theta, double r_max, double rho_max, double gamma, double min_abs_eig_C) {
  if (!(min_abs_eig_C > 0.0)) throw InvalidParams("min |eig(C)| must be positive");
  const double base = 3.0 * ((1.0 + gamma) * R_theta + r_max) * rho_max;
  return {base * (1.0 + gamma * rho_max / min_abs_eig_C), base * (1.0 + 1.0 / min_abs_eig_C)};
}

/// Instance quantities shared by every constant.
struct TheoryInputs {
  double lambda_A_hat = 0.0;
  double lambda_C = 0.0;
  double min_eig = 0.0;  // min |eig(C)|
  double rho_max = 0.0;
  double r_max = 0.0;
  double gamma = 0.0;
  double R_theta = 0.0;
  double R_w = 0.0;

  static TheoryInputs from(const SpectralConstants& sc, const Radii& radii, double gamma) {
    return {sc.lambda_A_hat, sc.lambda_C, sc.min_abs_eig_C, sc.rho_max, sc.r_max, gamma, radii.R_theta, radii.R_w};
  }

  // Recurring factors.
  double hat_factor() const { return 1.0 + gamma * rho_max / min_eig; }             // (1 + g rho / min)
  double bar_factor() const { return 1.0 + 1.0 / min_eig; }                         // (1 + 1 / min)
  double p_factor() const { return std::pow(rho_max * (1.0 + gamma) / min_eig, 2); }  // (rho (1+g) / min)^2
  double affine() const { return (1.0 + gamma) * R_theta + r_max; }
};

struct Rates {
  double D = 0.0;
  double E = 0.0;
  double F = 0.0;
};

// ---------------------------------------------------------------------------
// i.i.d. sampling
// ---------------------------------------------------------------------------

struct BoundConstantsIID {
  TheoryInputs in;
  double K1 = 0.0, K2 = 0.0;
  double C1 = 0.0, C2 = 0.0, C3 = 0.0, C4 = 0.0;
};

inline BoundConstantsIID constants_iid(const TheoryInputs& in) {
  BoundConstantsIID c;
  c.in = in;
  const double g = in.gamma, r = in.rho_max, la = in.lambda_A_hat, lc = in.lambda_C;
  const double hat2 = std::pow(in.hat_factor(), 2);
  const double bar2 = std::pow(in.bar_factor(), 2);
  const double P = in.p_factor();
  c.K1 = std::pow(in.affine(), 2) * r * r * hat2;
  c.K2 = std::pow(in.affine(), 2) * bar2;
  const double prefix = (2.0 * r * r * g * g / la) * (3.0 / lc) * 10.0 * std::pow(1.0 + g, 2) * r * r;
  c.C1 = prefix * hat2 * (1.0 + 2.0 / lc) * P;
  c.C2 = prefix * bar2;
  c.C3 = 10.0 * std::pow(1.0 + g, 2) * r * r * hat2 * (1.0 + 2.0 / lc) * P;
  c.C4 = 10.0 * std::pow(1.0 + g, 2) * r * r * bar2;
  return c;
}

inline BoundConstantsIID constants_iid(const SpectralConstants& sc, const Radii& radii, double gamma) {
  return constants_iid(TheoryInputs::from(sc, radii, gamma));
}

namespace detail {
inline void check_rate_args(double alpha, double beta, double M) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw InvalidParams("alpha and beta must be positive");
  if (!(M >= 1.0)) throw InvalidParams("M must be >= 1");
}
}  // namespace detail

inline Rates rates_iid(const BoundConstantsIID& c, double alpha, double beta, double M) {
  detail::check_rate_args(alpha, beta, M);
  const auto& in = c.in;
  const double g = in.gamma, r = in.rho_max, la = in.lambda_A_hat, lc = in.lambda_C;
  const double hat2 = std::pow(in.hat_factor(), 2);
  const double P = in.p_factor();
  const double ab2 = alpha * alpha / (beta * beta);
  Rates out;
  out.D = (12.0 / la) * (1.0 / (alpha * M) + alpha * 5.0 * std::pow(1.0 + g, 2) * r * r * hat2 + ab2 * c.C1 +
                         beta * c.C2);
  out.E = 2.0 / (lc * M * beta);
  out.F = (4.0 / lc) * (1.0 / (beta * M) + 10.0 * beta + ab2 * 10.0 * g * g * r * r * (1.0 + 2.0 / lc) * P +
                        (alpha * alpha * alpha / (beta * beta) * c.C3 + alpha * beta * c.C4) * (30.0 / la) * g * g *
                            r * r);
  return out;
}

// ---------------------------------------------------------------------------
// Markovian sampling
// ---------------------------------------------------------------------------

struct BoundConstantsMarkov {
  TheoryInputs in;
  double kappa = 0.0;
  double rho_mix = 0.0;
  double K1 = 0.0, K2 = 0.0, K3 = 0.0, K4 = 0.0, K5 = 0.0;
  double Q = 0.0;  // 96 g^2 rho^2 / (lambda_A_hat lambda_C)
  double C1 = 0.0, C2 = 0.0;
};

inline BoundConstantsMarkov constants_markov(const TheoryInputs& in, const MixingEstimate& mix) {
  if (!(mix.rho >= 0.0) || !(mix.rho < 1.0)) throw InvalidMixing("rho must lie in [0, 1)");
  if (!(mix.kappa >= 0.0) || !std::isfinite(mix.kappa)) throw InvalidMixing("kappa must be finite and >= 0");
  BoundConstantsMarkov c;
  c.in = in;
  c.kappa = mix.kappa;
  c.rho_mix = mix.rho;
  const double g = in.gamma, r = in.rho_max, la = in.lambda_A_hat, lc = in.lambda_C;
  const double hat2 = std::pow(in.hat_factor(), 2);
  const double bar2 = std::pow(in.bar_factor(), 2);
  const double P = in.p_factor();
  const double f1 = 1.0 + mix.kappa * mix.rho / (1.0 - mix.rho);
  const double f2 = 1.0 + mix.kappa * 2.0 * mix.rho / (1.0 - mix.rho);
  const double sq = in.R_theta * in.R_theta * std::pow(1.0 + g, 2) + in.r_max * in.r_max;
  c.K1 = std::pow(in.affine(), 2) * r * r * hat2 * f2;
  c.K2 = (2.0 / la) * sq * 4.0 * r * r * hat2 * f1;
  c.K3 = ((32.0 / lc) * sq * r * r + (16.0 / lc) * (r * (1.0 + g) * in.R_theta + r * in.r_max) / in.min_eig) * f1;
  c.K4 = (12.0 / lc) * in.R_w * in.R_w * f1;
  c.K5 = std::pow(in.affine(), 2) * r * r * bar2 * f2;
  c.Q = 96.0 / (la * lc) * g * g * r * r;
  const double tail = c.Q * 10.0 * std::pow(1.0 + g, 2) * r * r;
  c.C1 = hat2 * (1.0 + 2.0 / lc) * P * tail;
  c.C2 = bar2 * tail;
  return c;
}

inline BoundConstantsMarkov constants_markov(const SpectralConstants& sc, const Radii& radii, double gamma,
                                             const MixingEstimate& mix) {
  return constants_markov(TheoryInputs::from(sc, radii, gamma), mix);
}

inline Rates rates_markov(const BoundConstantsMarkov& c, double alpha, double beta, double M) {
  detail::check_rate_args(alpha, beta, M);
  const auto& in = c.in;
  const double g = in.gamma, r = in.rho_max, la = in.lambda_A_hat, lc = in.lambda_C;
  const double hat2 = std::pow(in.hat_factor(), 2);
  const double bar2 = std::pow(in.bar_factor(), 2);
  const double P = in.p_factor();
  const double ab2 = alpha * alpha / (beta * beta);
  Rates out;
  out.D = (16.0 / la) * (1.0 / (alpha * M) + alpha * 5.0 * std::pow(1.0 + g, 2) * r * r * hat2 + ab2 * c.C1 +
                         beta * c.C2);
  out.E = 12.0 / (lc * M * beta);
  const double inner = hat2 * (1.0 + 2.0 / lc) * P * ab2 + bar2 * beta;
  out.F = (24.0 / lc) * (1.0 / (beta * M) + 10.0 * beta + 10.0 * g * g * r * r * (1.0 + 1.0 / lc) * P * ab2 +
                         alpha * 120.0 * std::pow(1.0 + g, 2) * r * r * (1.0 / la) * inner * 5.0 * g * g * r * r);
  return out;
}

// ---------------------------------------------------------------------------
// Feasibility conditions
// ---------------------------------------------------------------------------

enum class Relation { LE, LT, GE, GT };

inline std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::LE: return "<=";
    case Relation::LT: return "<";
    case Relation::GE: return ">=";
    case Relation::GT: return ">";
  }
  return "?";
}

struct Condition {
  std::string id;
  std::string description;
  double lhs = 0.0;
  Relation rel = Relation::LE;
  double rhs = 0.0;
  bool pass = false;
};

struct ConditionReport {
  Setting setting = Setting::IID;
  double alpha = 0.0, beta = 0.0, M = 0.0;
  Rates rates;
  std::vector<Condition> conditions;
  bool overall = false;

  const Condition& get(std::string_view id) const {
    for (const auto& c : conditions)
      if (c.id == id) return c;
    throw InvalidParams("no condition '" + std::string(id) + "'");
  }
  std::vector<const Condition*> violations() const {
    std::vector<const Condition*> out;
    for (const auto& c : conditions)
      if (!c.pass) out.push_back(&c);
    return out;
  }
};

namespace detail {

inline bool holds(double lhs, Relation rel, double rhs) {
  if (!std::isfinite(lhs) || std::isnan(rhs)) return false;
  switch (rel) {
    case Relation::LE: return lhs <= rhs;
    case Relation::LT: return lhs < rhs;
    case Relation::GE: return lhs >= rhs;
    case Relation::GT: return lhs > rhs;
  }
  return false;
}

inline void add_condition(ConditionReport& rep, std::string id, std::string desc, double lhs, Relation rel, double rhs) {
  const bool ok = holds(lhs, rel, rhs);
  rep.conditions.push_back({std::move(id), std::move(desc), lhs, rel, rhs, ok});
}

inline void finish(ConditionReport& rep) {
  rep.overall = !rep.conditions.empty();
  for (const auto& c : rep.conditions) rep.overall = rep.overall && c.pass;
}

}  // namespace detail

inline ConditionReport check_conditions(const BoundConstantsIID& c, double alpha, double beta, double M) {
  const auto& in = c.in;
  const double g = in.gamma, r = in.rho_max, la = in.lambda_A_hat, lc = in.lambda_C;
  const double hat2 = std::pow(in.hat_factor(), 2);
  const double P = in.p_factor();
  const double ab2 = alpha * alpha / (beta * beta);
  ConditionReport rep;
  rep.setting = Setting::IID;
  rep.alpha = alpha;
  rep.beta = beta;
  rep.M = M;
  rep.rates = rates_iid(c, alpha, beta, M);
  const double D = rep.rates.D;
  using detail::add_condition;

  add_condition(rep, "iid.1", "alpha cap", alpha, Relation::LE,
      std::min(1.0 / (5.0 * la), (la / 60.0) / (std::pow(1.0 + g, 2) * r * r * hat2)));
  const double mixed = ab2 * c.C3 + beta * c.C4;
  add_condition(rep, "iid.2", "mixed step-ratio cap", mixed, Relation::LE,
      std::min({(1.0 - D) / 144.0 * la * la * lc / (r * r * g * g), 5.0 * (1.0 - D), c.C4}));
  add_condition(rep, "iid.3", "batch size times beta", M * beta, Relation::GT, 4.0 / lc);
  add_condition(rep, "iid.4", "w-drift margin",
      (lc / 6.0) * beta - 10.0 * beta * beta - 10.0 * g * g * r * r * (alpha * alpha + 2.0 * alpha * alpha / (lc * beta)) * P,
      Relation::GE, 0.0);
  add_condition(rep, "iid.5", "theta-drift cap", 1.0 / (alpha * M) + alpha * 5.0 * std::pow(1.0 + g, 2) * r * r * hat2,
      Relation::LE, la / 6.0);
  const double coupling = (alpha / (beta * beta * M)) * 72.0 * r * r * g * g / (la * la * lc) +
                          beta * 720.0 * r * r * g * g / (la * la * lc) +
                          ab2 * 720.0 * r * r * std::pow(g, 4) / (la * la * lc) * r * r * (1.0 + 2.0 / lc) * P +
                          alpha * 60.0 / la * g * g * r * r;
  add_condition(rep, "iid.6", "coupling cap", coupling, Relation::LE, 1.0);
  add_condition(rep, "iid.7", "max{D,E,F}", std::max({rep.rates.D, rep.rates.E, rep.rates.F}), Relation::LT, 1.0);
  detail::finish(rep);
  return rep;
}

inline ConditionReport check_conditions(const BoundConstantsMarkov& c, double alpha, double beta, double M) {
  const auto& in = c.in;
  const double g = in.gamma, r = in.rho_max, la = in.lambda_A_hat, lc = in.lambda_C;
  const double hat2 = std::pow(in.hat_factor(), 2);
  const double bar2 = std::pow(in.bar_factor(), 2);
  const double P = in.p_factor();
  const double ab2 = alpha * alpha / (beta * beta);
  ConditionReport rep;
  rep.setting = Setting::Markov;
  rep.alpha = alpha;
  rep.beta = beta;
  rep.M = M;
  rep.rates = rates_markov(c, alpha, beta, M);
  using detail::add_condition;

  add_condition(rep, "markov.0", "alpha cap", alpha, Relation::LE,
      std::min((la / 30.0) / (std::pow(1.0 + g, 2) * r * r * hat2), (3.0 / 5.0) / la));
  add_condition(rep, "markov.1", "beta cap", beta, Relation::LE, 1.0);
  add_condition(rep, "markov.2", "batch size times beta", M * beta, Relation::GT, 12.0 / lc);
  add_condition(rep, "markov.3", "w-drift margin",
      (lc / 48.0) * beta - 10.0 * beta * beta - 10.0 * g * g * r * r * P * (alpha * alpha + 2.0 * alpha * alpha / (lc * beta)),
      Relation::GE, 0.0);
  add_condition(rep, "markov.4", "coupling cap",
      (16.0 / la) * (c.Q * (1.0 / (beta * M) + 10.0 * beta + 10.0 * g * g * r * r * (1.0 + 2.0 / lc) * P * ab2) +
                     5.0 * g * g * r * r * alpha),
      Relation::LE, 1.0);
  add_condition(rep, "markov.5", "mixed step-ratio cap", hat2 * (1.0 + 2.0 / lc) * P * ab2 + bar2 * beta * beta, Relation::LE,
      std::min((la / 48.0) / (c.Q * 10.0 * std::pow(1.0 + g, 2) * r * r),
               (lc / 48.0) / (120.0 * std::pow(1.0 + g, 2) * r * r / la)));
  add_condition(rep, "markov.6", "max{D,E,F}", std::max({rep.rates.D, rep.rates.E, rep.rates.F}), Relation::LT, 1.0);
  detail::finish(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

struct ScheduleCoefficients {
  double c_alpha = 1.0;
  double c_beta = 1.0;
  double c_M = 1.0;
  double c_m = 1.0;
};

struct Schedule {
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t M = 0;
  std::size_t m = 0;
};

inline constexpr double kMaxScheduleCount = 9007199254740992.0;  // 2^53

namespace detail {
// Ceiling that ignores rounding noise from pow (1000.0000000000001 -> 1000).
inline std::size_t stable_ceil(double x) {
  if (!(x <= kMaxScheduleCount)) throw InvalidParams("schedule count is not representable");
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<std::size_t>(std::max(r, 1.0));
  return static_cast<std::size_t>(std::max(std::ceil(x), 1.0));
}
}  // namespace detail

/// i.i.d.: alpha = c eps^{3/5}, beta = c eps^{2/5}, M = ceil(c eps^{-3/5});
/// Markov: alpha = c eps^{3/4}, beta = c eps^{1/2}, M = ceil(c / eps);
/// both: m = ceil(c ln(1/eps)).
inline Schedule schedule_from_epsilon(Setting setting, double epsilon, const ScheduleCoefficients& k = {}) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidEpsilon("epsilon must lie in (0, 1)");
  Schedule s;
  if (setting == Setting::IID) {
    s.alpha = k.c_alpha * std::pow(epsilon, 3.0 / 5.0);
    s.beta = k.c_beta * std::pow(epsilon, 2.0 / 5.0);
    s.M = detail::stable_ceil(k.c_M * std::pow(epsilon, -3.0 / 5.0));
  } else {
    s.alpha = k.c_alpha * std::pow(epsilon, 3.0 / 4.0);
    s.beta = k.c_beta * std::pow(epsilon, 1.0 / 2.0);
    s.M = detail::stable_ceil(k.c_M / epsilon);
  }
  s.m = detail::stable_ceil(k.c_m * std::log(1.0 / epsilon));
  return s;
}

/// Coefficients with c_M tied to alpha so that the 1/(alpha M) part of D
/// equals 1/4 at eps = 1 (and shrinks for smaller eps in the Markov case).
inline ScheduleCoefficients instance_scaled_coefficients(Setting setting, double lambda_A_hat, double c_alpha,
                                                         double c_beta) {
  if (!(lambda_A_hat > 0.0) || !(c_alpha > 0.0) || !(c_beta > 0.0)) throw InvalidParams("coefficients must be positive");
  const double lead = setting == Setting::IID ? 12.0 : 16.0;
  return {c_alpha, c_beta, 4.0 * lead / (lambda_A_hat * c_alpha), 1.0};
}

inline std::vector<double> default_epsilon_grid() {
  std::vector<double> eps;
  for (int k = 1; k <= 8; ++k) eps.push_back(std::pow(10.0, -k));
  return eps;
}

/// Unit coefficients first, then instance-scaled ones over decades of
/// c_beta (1 .. 1e-4) and c_alpha / c_beta (1 .. 1e-6).
inline std::vector<ScheduleCoefficients> default_coefficient_candidates(Setting setting, double lambda_A_hat) {
  std::vector<ScheduleCoefficients> out{ScheduleCoefficients{}};
  for (int kb = 0; kb <= 4; ++kb)
    for (int ka = 0; ka <= 6; ++ka) {
      const double cb = std::pow(10.0, -kb);
      out.push_back(instance_scaled_coefficients(setting, lambda_A_hat, cb * std::pow(10.0, -ka), cb));
    }
  return out;
}

struct EpsilonSearchResult {
  bool found = false;
  double epsilon = 0.0;
  ScheduleCoefficients coefficients;
  Schedule schedule;
  ConditionReport report;  // passing report, or the last one evaluated
  std::size_t evaluated = 0;
};

/// Largest epsilon on the grid (scanned in decreasing order) for which some
/// candidate coefficient set passes every condition; candidates are tried in
/// the given order at each epsilon.
template <class Consts>
EpsilonSearchResult epsilon_search(Setting setting, const Consts& consts, const std::vector<double>& eps_grid,
                                   const std::vector<ScheduleCoefficients>& candidates) {
  EpsilonSearchResult res;
  std::vector<double> grid = eps_grid;
  std::sort(grid.begin(), grid.end(), std::greater<>());
  for (double eps : grid) {
    for (const auto& k : candidates) {
      Schedule s;
      try {
        s = schedule_from_epsilon(setting, eps, k);
      } catch (const InvalidParams&) {
        continue;  // M beyond 2^53
      }
      ConditionReport rep = check_conditions(consts, s.alpha, s.beta, static_cast<double>(s.M));
      ++res.evaluated;
      const bool ok = rep.overall;
      res.report = std::move(rep);
      if (ok) {
        res.found = true;
        res.epsilon = eps;
        res.coefficients = k;
        res.schedule = s;
        return res;
      }
    }
  }
  return res;
}

}  // namespace vrtdc
