#pragma once

// Finite MDPs, policies, feature maps, induced Markov chains, stationary
// distributions and the two sampling regimes (i.i.d. and trajectory).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "vrtdc/errors.hpp"
#include "vrtdc/numerics.hpp"
#include "vrtdc/rng.hpp"

namespace vrtdc {

using StateId = std::size_t;
using ActionId = std::size_t;

inline constexpr double kStochasticTolerance = 1e-12;

struct Successor {
  StateId state;
  double prob;
};

/// Finite MDP (S, A, P, r, gamma) with dense kernel and reward tables.
///
/// The kernel is stored as P[(s * n_actions + a) * n_states + s'], the reward
/// table with the same layout. A sparse successor list per (s, a) is built at
/// construction for sampling.
class MDPModel {
 public:
  MDPModel() = default;
  MDPModel(std::size_t n_states, std::size_t n_actions, double gamma, std::vector<double> kernel,
           std::vector<double> reward, std::string provenance = {},
           std::optional<double> r_max = std::nullopt)
      : n_states_(n_states),
        n_actions_(n_actions),
        gamma_(gamma),
        kernel_(std::move(kernel)),
        reward_(std::move(reward)),
        provenance_(std::move(provenance)) {
    if (n_states_ == 0 || n_actions_ == 0) throw InvalidParams("MDP needs at least one state and action");
    if (!(gamma_ > 0.0 && gamma_ < 1.0)) throw InvalidParams("gamma must lie in (0,1)");
    const std::size_t n = n_states_ * n_actions_ * n_states_;
    if (kernel_.size() != n || reward_.size() != n) throw DimensionMismatch("kernel/reward size");
    successors_.resize(n_states_ * n_actions_);
    for (std::size_t s = 0; s < n_states_; ++s) {
      for (std::size_t a = 0; a < n_actions_; ++a) {
        double total = 0.0;
        auto& succ = successors_[s * n_actions_ + a];
        for (std::size_t t = 0; t < n_states_; ++t) {
          const double p = kernel_[index(s, a, t)];
          if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidParams("kernel entry negative or non-finite");
          if (!std::isfinite(reward_[index(s, a, t)])) throw InvalidParams("reward not finite");
          total += p;
          if (p > 0.0) succ.push_back({t, p});
        }
        if (std::abs(total - 1.0) > kStochasticTolerance)
          throw InvalidParams("kernel row (" + std::to_string(s) + "," + std::to_string(a) +
                              ") sums to " + std::to_string(total));
      }
    }
    for (double r : reward_) r_max_ = std::max(r_max_, std::abs(r));
    if (r_max) {
      if (!(*r_max >= r_max_) || !std::isfinite(*r_max)) throw InvalidParams("declared r_max below observed |r|");
      r_max_ = *r_max;
    }
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double gamma() const { return gamma_; }
  double r_max() const { return r_max_; }
  const std::string& provenance() const { return provenance_; }

  double p(StateId s, ActionId a, StateId next) const { return kernel_[index(s, a, next)]; }
  double r(StateId s, ActionId a, StateId next) const { return reward_[index(s, a, next)]; }
  const std::vector<Successor>& successors(StateId s, ActionId a) const {
    return successors_[s * n_actions_ + a];
  }
  const std::vector<double>& kernel() const { return kernel_; }
  const std::vector<double>& reward() const { return reward_; }

 private:
  std::size_t index(StateId s, ActionId a, StateId t) const { return (s * n_actions_ + a) * n_states_ + t; }

  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  double gamma_ = 0.5;
  std::vector<double> kernel_;
  std::vector<double> reward_;
  std::vector<std::vector<Successor>> successors_;
  double r_max_ = 0.0;
  std::string provenance_;
};

/// Stochastic matrix pi(a|s), one row per state.
class Policy {
 public:
  Policy() = default;
  explicit Policy(Matrix probs) : probs_(std::move(probs)) {
    for (std::size_t s = 0; s < probs_.rows(); ++s) {
      double total = 0.0;
      for (double p : probs_.row(s)) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidParams("policy entry negative or non-finite");
        total += p;
      }
      if (std::abs(total - 1.0) > kStochasticTolerance)
        throw InvalidParams("policy row " + std::to_string(s) + " sums to " + std::to_string(total));
    }
  }

  std::size_t n_states() const { return probs_.rows(); }
  std::size_t n_actions() const { return probs_.cols(); }
  double operator()(StateId s, ActionId a) const { return probs_(s, a); }
  std::span<const double> row(StateId s) const { return probs_.row(s); }
  const Matrix& probs() const { return probs_; }

 private:
  Matrix probs_;
};

/// Feature matrix Phi with one row phi(s) per state; every row has norm <= 1.
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Matrix phi) : phi_(std::move(phi)) {
    if (phi_.cols() == 0) throw InvalidParams("feature dimension must be positive");
    for (std::size_t s = 0; s < phi_.rows(); ++s) {
      if (!all_finite(phi_.row(s))) throw InvalidParams("non-finite feature");
      if (norm2(phi_.row(s)) > 1.0 + 1e-12)
        throw InvalidParams("feature row " + std::to_string(s) + " has norm > 1");
    }
  }

  std::size_t n_states() const { return phi_.rows(); }
  std::size_t dim() const { return phi_.cols(); }
  std::span<const double> operator()(StateId s) const { return phi_.row(s); }
  const Matrix& matrix() const { return phi_; }

 private:
  Matrix phi_;
};

struct Transition {
  StateId s = 0;
  ActionId a = 0;
  double r = 0.0;
  StateId s_next = 0;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Markov chain p(s'|s) with reachability and period flags.
class ChainMatrix {
 public:
  ChainMatrix() = default;
  explicit ChainMatrix(Matrix p) : p_(std::move(p)) {
    if (!p_.square() || p_.rows() == 0) throw DimensionMismatch("chain matrix must be square");
    for (std::size_t s = 0; s < p_.rows(); ++s) {
      double total = 0.0;
      for (double x : p_.row(s)) {
        if (!(x >= 0.0)) throw InvalidParams("negative chain entry");
        total += x;
      }
      if (std::abs(total - 1.0) > 1e-10) throw InvalidParams("chain row does not sum to 1");
    }
    classify();
  }

  std::size_t size() const { return p_.rows(); }
  const Matrix& matrix() const { return p_; }
  double operator()(StateId s, StateId t) const { return p_(s, t); }
  bool irreducible() const { return irreducible_; }
  bool aperiodic() const { return aperiodic_; }
  std::size_t period() const { return period_; }

 private:
  void classify() {
    const std::size_t n = p_.rows();
    auto reach_all = [&](bool forward) {
      std::vector<char> seen(n, 0);
      std::queue<std::size_t> q;
      q.push(0);
      seen[0] = 1;
      std::size_t count = 1;
      while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        for (std::size_t v = 0; v < n; ++v) {
          const double w = forward ? p_(u, v) : p_(v, u);
          if (w > 0.0 && !seen[v]) {
            seen[v] = 1;
            ++count;
            q.push(v);
          }
        }
      }
      return count == n;
    };
    irreducible_ = reach_all(true) && reach_all(false);

    // Period of the class containing state 0: gcd over edges of level(u)+1-level(v).
    std::vector<long> level(n, -1);
    std::queue<std::size_t> q;
    level[0] = 0;
    q.push(0);
    while (!q.empty()) {
      const std::size_t u = q.front();
      q.pop();
      for (std::size_t v = 0; v < n; ++v)
        if (p_(u, v) > 0.0 && level[v] < 0) {
          level[v] = level[u] + 1;
          q.push(v);
        }
    }
    long g = 0;
    for (std::size_t u = 0; u < n; ++u) {
      if (level[u] < 0) continue;
      for (std::size_t v = 0; v < n; ++v)
        if (p_(u, v) > 0.0 && level[v] >= 0) g = std::gcd(g, std::abs(level[u] + 1 - level[v]));
    }
    period_ = g == 0 ? 1 : static_cast<std::size_t>(g);
    aperiodic_ = period_ == 1;
  }

  Matrix p_;
  bool irreducible_ = false;
  bool aperiodic_ = false;
  std::size_t period_ = 1;
};

struct MixingEstimate {
  double kappa = 0.0;
  double rho = 0.5;
};

// ---------------------------------------------------------------------------
// Instance builders
// ---------------------------------------------------------------------------

struct GarnetParams {
  std::size_t n_states = 500;
  std::size_t n_actions = 20;
  std::size_t branching = 50;
  std::size_t dim = 15;
  double gamma = 0.95;
};

struct GarnetInstance {
  MDPModel model;
  FeatureMap features;
};

/// Random Garnet MDP: `branching` distinct successors per (s,a) with
/// normalized uniform(0,1) weights, uniform[0,1] rewards, uniform[0,1]
/// features with unit-norm rows. Deterministic given the seed.
inline GarnetInstance generate_garnet(const GarnetParams& gp, std::uint64_t seed) {
  if (gp.n_states == 0 || gp.n_actions == 0 || gp.dim == 0)
    throw InvalidParams("garnet dimensions must be positive");
  if (gp.branching < 1 || gp.branching > gp.n_states)
    throw InvalidParams("branching must lie in [1, n_states]");
  const std::size_t ns = gp.n_states;
  const std::size_t na = gp.n_actions;
  Rng rng(seed);
  std::vector<double> kernel(ns * na * ns, 0.0);
  std::vector<double> reward(ns * na * ns, 0.0);
  std::vector<std::size_t> pool(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < na; ++a) {
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      // Partial Fisher-Yates: the first `branching` slots are a uniform subset.
      for (std::size_t i = 0; i < gp.branching; ++i) {
        const std::size_t j = i + rng.below(ns - i);
        std::swap(pool[i], pool[j]);
      }
      std::vector<double> w(gp.branching);
      double total = 0.0;
      for (auto& x : w) {
        x = rng.uniform_open();
        total += x;
      }
      const std::size_t base = (s * na + a) * ns;
      for (std::size_t i = 0; i < gp.branching; ++i) kernel[base + pool[i]] = w[i] / total;
      // Re-normalize in index order so the row sum is as exact as possible.
      double sum = 0.0;
      for (std::size_t t = 0; t < ns; ++t) sum += kernel[base + t];
      for (std::size_t t = 0; t < ns; ++t) kernel[base + t] /= sum;
      for (std::size_t t = 0; t < ns; ++t) reward[base + t] = rng.uniform();
    }
  }
  Matrix phi(ns, gp.dim);
  for (std::size_t s = 0; s < ns; ++s) {
    for (double& x : phi.row(s)) x = rng.uniform();
    double nrm = norm2(phi.row(s));
    if (nrm == 0.0) {  // measure-zero; keep the row valid
      phi(s, 0) = 1.0;
      nrm = 1.0;
    }
    for (double& x : phi.row(s)) x /= nrm;
  }
  std::string prov = "garnet(n_states=" + std::to_string(ns) + ",n_actions=" + std::to_string(na) +
                     ",branching=" + std::to_string(gp.branching) + ",d=" + std::to_string(gp.dim) +
                     ",seed=" + std::to_string(seed) + ")";
  return {MDPModel(ns, na, gp.gamma, std::move(kernel), std::move(reward), std::move(prov), 1.0),
          FeatureMap(std::move(phi))};
}

inline GarnetInstance generate_garnet(std::size_t n_states, std::size_t n_actions, std::size_t branching,
                                      std::size_t d, std::uint64_t seed, double gamma = 0.95) {
  return generate_garnet(GarnetParams{n_states, n_actions, branching, d, gamma}, seed);
}

/// Two states, one action, deterministic cycle 0 -> 1 -> 0, reward 1,
/// gamma 0.5, features e1 and e2.
struct Cycle2Instance {
  MDPModel model;
  FeatureMap features;
  Policy policy;
};

inline Cycle2Instance make_cycle2() {
  std::vector<double> kernel = {0.0, 1.0, 1.0, 0.0};
  std::vector<double> reward = {1.0, 1.0, 1.0, 1.0};
  return {MDPModel(2, 1, 0.5, std::move(kernel), std::move(reward), "cycle2"),
          FeatureMap(Matrix::identity(2)), Policy(Matrix(2, 1, 1.0))};
}

namespace frozen_lake {

inline constexpr std::size_t kSide = 4;
inline constexpr std::size_t kStates = kSide * kSide;
inline constexpr std::size_t kActions = 4;
// Action encoding follows the usual gridworld convention.
enum Action : std::size_t { kLeft = 0, kDown = 1, kRight = 2, kUp = 3 };

inline constexpr StateId cell(std::size_t row, std::size_t col) { return row * kSide + col; }
inline constexpr StateId kStart = cell(0, 0);
inline constexpr StateId kGoal = cell(3, 3);

inline bool is_hole(StateId s) {
  return s == cell(1, 1) || s == cell(1, 3) || s == cell(2, 3) || s == cell(3, 0);
}

inline StateId move(StateId s, std::size_t action) {
  std::size_t row = s / kSide;
  std::size_t col = s % kSide;
  switch (action) {
    case kLeft: col = col == 0 ? col : col - 1; break;
    case kDown: row = row + 1 == kSide ? row : row + 1; break;
    case kRight: col = col + 1 == kSide ? col : col + 1; break;
    case kUp: row = row == 0 ? row : row - 1; break;
    default: break;
  }
  return cell(row, col);
}

}  // namespace frozen_lake

/// Continuing 4x4 slippery Frozen Lake. Intended move and both
/// perpendicular moves each happen w.p. 1/3; walls keep the agent in place.
/// Entering the goal pays 1. Goal and hole cells reset to the start.
inline MDPModel make_frozen_lake(double gamma = 0.95) {
  using namespace frozen_lake;
  std::vector<double> kernel(kStates * kActions * kStates, 0.0);
  std::vector<double> reward(kStates * kActions * kStates, 0.0);
  for (StateId s = 0; s < kStates; ++s) {
    for (std::size_t a = 0; a < kActions; ++a) {
      const std::size_t base = (s * kActions + a) * kStates;
      if (s == kGoal || is_hole(s)) {
        kernel[base + kStart] = 1.0;
        continue;
      }
      const std::size_t dirs[3] = {(a + 3) % 4, a, (a + 1) % 4};
      for (std::size_t dir : dirs) {
        const StateId t = move(s, dir);
        kernel[base + t] += 1.0 / 3.0;
        if (t == kGoal) reward[base + t] = 1.0;
      }
    }
  }
  return MDPModel(kStates, kActions, gamma, std::move(kernel), std::move(reward), "frozen_lake_4x4_slippery");
}

/// Standard-normal features with each row scaled to unit norm.
inline FeatureMap make_features_gaussian(std::size_t n_states, std::size_t d, std::uint64_t seed) {
  if (d == 0) throw InvalidParams("feature dimension must be positive");
  Rng rng(seed);
  Matrix phi(n_states, d);
  for (std::size_t s = 0; s < n_states; ++s) {
    double nrm = 0.0;
    do {
      for (double& x : phi.row(s)) x = rng.normal();
      nrm = norm2(phi.row(s));
    } while (nrm == 0.0);
    for (double& x : phi.row(s)) x /= nrm;
  }
  return FeatureMap(std::move(phi));
}

enum class PolicyKind { Uniform, Random };

inline Policy make_policy(PolicyKind kind, std::size_t n_states, std::size_t n_actions, std::uint64_t seed = 0) {
  if (n_actions == 0) throw InvalidParams("policy needs at least one action");
  Matrix probs(n_states, n_actions, 1.0 / static_cast<double>(n_actions));
  if (kind == PolicyKind::Random) {
    Rng rng(seed);
    for (std::size_t s = 0; s < n_states; ++s) {
      double total = 0.0;
      for (double& x : probs.row(s)) {
        x = rng.uniform_open();
        total += x;
      }
      for (double& x : probs.row(s)) x /= total;
    }
  }
  return Policy(std::move(probs));
}

inline ChainMatrix induced_chain(const MDPModel& model, const Policy& policy) {
  if (policy.n_states() != model.n_states() || policy.n_actions() != model.n_actions())
    throw DimensionMismatch("policy shape does not match the MDP");
  const std::size_t n = model.n_states();
  Matrix p(n, n);
  for (StateId s = 0; s < n; ++s)
    for (ActionId a = 0; a < model.n_actions(); ++a) {
      const double pa = policy(s, a);
      if (pa == 0.0) continue;
      for (const auto& [t, prob] : model.successors(s, a)) p(s, t) += pa * prob;
    }
  return ChainMatrix(std::move(p));
}

struct StationaryDistribution {
  Vector mu;
  bool periodic = false;
};

/// Unique invariant distribution from (P^T - I) mu = 0 with the last
/// equation replaced by sum(mu) = 1. Throws NotErgodic when that system is
/// singular (invariant distribution not unique).
inline StationaryDistribution stationary_distribution(const ChainMatrix& chain) {
  const std::size_t n = chain.size();
  Matrix sys(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sys(i, j) = chain(j, i) - (i == j ? 1.0 : 0.0);
  for (std::size_t j = 0; j < n; ++j) sys(n - 1, j) = 1.0;
  Vector rhs(n, 0.0);
  rhs[n - 1] = 1.0;
  Vector mu;
  try {
    mu = solve_linear(sys, rhs);
  } catch (const SingularMatrix& e) {
    throw NotErgodic(std::string("invariant distribution not unique (") + e.what() + ")");
  }
  for (double& x : mu) x = std::max(x, 0.0);
  const double total = std::accumulate(mu.begin(), mu.end(), 0.0);
  for (double& x : mu) x /= total;
  return {std::move(mu), !chain.aperiodic()};
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace detail {

inline ActionId draw_action(const Policy& behavior, StateId s, Rng& rng) {
  return rng.categorical(behavior.row(s));
}

inline StateId draw_next(const MDPModel& model, StateId s, ActionId a, Rng& rng) {
  const auto& succ = model.successors(s, a);
  const double u = rng.uniform();
  double acc = 0.0;
  for (const auto& sc : succ) {
    acc += sc.prob;
    if (u < acc) return sc.state;
  }
  return succ.back().state;
}

}  // namespace detail

/// Streams transitions along one trajectory under the behavior policy.
/// Owns its RNG; give each consumer its own instance.
class TrajectorySampler {
 public:
  TrajectorySampler(const MDPModel& model, const Policy& behavior, std::uint64_t seed, StateId start)
      : model_(&model), behavior_(&behavior), rng_(seed), state_(start) {
    if (start >= model.n_states()) throw InvalidParams("start state out of range");
  }
  // Start drawn from the given distribution.
  TrajectorySampler(const MDPModel& model, const Policy& behavior, std::uint64_t seed,
                    std::span<const double> start_dist)
      : model_(&model), behavior_(&behavior), rng_(seed) {
    state_ = rng_.categorical(start_dist);
  }

  Transition next() {
    Transition x;
    x.s = state_;
    x.a = detail::draw_action(*behavior_, state_, rng_);
    x.s_next = detail::draw_next(*model_, state_, x.a, rng_);
    x.r = model_->r(x.s, x.a, x.s_next);
    state_ = x.s_next;
    return x;
  }

  StateId state() const { return state_; }

 private:
  const MDPModel* model_;
  const Policy* behavior_;
  Rng rng_;
  StateId state_ = 0;
};

/// Independent draws s ~ mu, a ~ pi_b(.|s), s' ~ P(.|s,a).
class IidSampler {
 public:
  IidSampler(const MDPModel& model, const Policy& behavior, Vector mu, std::uint64_t seed)
      : model_(&model), behavior_(&behavior), mu_(std::move(mu)), rng_(seed) {
    if (mu_.size() != model.n_states()) throw DimensionMismatch("mu size");
  }

  Transition next() {
    Transition x;
    x.s = rng_.categorical(mu_);
    x.a = detail::draw_action(*behavior_, x.s, rng_);
    x.s_next = detail::draw_next(*model_, x.s, x.a, rng_);
    x.r = model_->r(x.s, x.a, x.s_next);
    return x;
  }

 private:
  const MDPModel* model_;
  const Policy* behavior_;
  Vector mu_;
  Rng rng_;
};

/// Where a trajectory starts: a fixed state or a draw from a distribution.
struct TrajectoryStart {
  std::optional<StateId> state;
  Vector distribution;  // used when `state` is empty

  static TrajectoryStart at(StateId s) { return {s, {}}; }
  static TrajectoryStart stationary(Vector mu) { return {std::nullopt, std::move(mu)}; }
};

inline std::vector<Transition> sample_trajectory(const MDPModel& model, const Policy& behavior,
                                                 std::size_t length, std::uint64_t seed,
                                                 const TrajectoryStart& start) {
  if (length == 0) throw InvalidParams("trajectory length must be >= 1");
  TrajectorySampler sampler = start.state
                                  ? TrajectorySampler(model, behavior, seed, *start.state)
                                  : TrajectorySampler(model, behavior, seed, start.distribution);
  std::vector<Transition> out;
  out.reserve(length);
  for (std::size_t t = 0; t < length; ++t) out.push_back(sampler.next());
  return out;
}

inline std::vector<Transition> sample_iid(const MDPModel& model, const Policy& behavior,
                                          const Vector& mu, std::size_t n, std::uint64_t seed) {
  IidSampler sampler(model, behavior, mu, seed);
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.next());
  return out;
}

// ---------------------------------------------------------------------------
// Mixing
// ---------------------------------------------------------------------------

inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

/// m(t) = sup_s TV(P^t(.|s), mu) for t = 1..t_max (index 0 holds t = 1).
inline Vector worst_case_tv(const ChainMatrix& chain, const Vector& mu, std::size_t t_max) {
  const Matrix& p = chain.matrix();
  Matrix pt = p;
  Vector m(t_max);
  for (std::size_t t = 1; t <= t_max; ++t) {
    double worst = 0.0;
    for (std::size_t s = 0; s < pt.rows(); ++s) worst = std::max(worst, tv_distance(pt.row(s), mu));
    m[t - 1] = worst;
    if (t < t_max) pt = pt * p;
  }
  return m;
}

inline constexpr double kMixingFloor = 1e-14;
inline constexpr double kMaxFittedRho = 1.0 - 1e-6;

/// Fits log m(t) ~ log kappa + t log rho by least squares over the points
/// with m(t) > 1e-14, then raises kappa until kappa rho^t >= m(t) at every
/// fitted t. A chain that is exactly mixed after one step returns kappa = 0
/// and rho = 0.5. A non-decaying profile (periodic chain) clamps rho to
/// 1 - 1e-6, so the envelope only covers the checked horizon.
inline MixingEstimate estimate_mixing(const ChainMatrix& chain, const Vector& mu, std::size_t t_max) {
  if (t_max < 2) throw InvalidParams("t_max must be >= 2");
  if (!chain.irreducible()) throw NotErgodic("chain is reducible");
  if (mu.size() != chain.size()) throw DimensionMismatch("mu size");
  const Vector m = worst_case_tv(chain, mu, t_max);
  std::vector<std::pair<double, double>> pts;  // (t, log m)
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] > kMixingFloor) pts.emplace_back(static_cast<double>(i + 1), std::log(m[i]));
  MixingEstimate est;
  if (pts.empty()) return est;
  double log_rho = std::log(0.5);
  double log_kappa = 0.0;
  if (pts.size() == 1) {
    log_kappa = pts[0].second - pts[0].first * log_rho;
  } else {
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (auto [t, y] : pts) {
      st += t;
      sy += y;
      stt += t * t;
      sty += t * y;
    }
    const double k = static_cast<double>(pts.size());
    log_rho = (k * sty - st * sy) / (k * stt - st * st);
    log_kappa = (sy - log_rho * st) / k;
  }
  log_rho = std::min(log_rho, std::log(kMaxFittedRho));
  double inflate = 0.0;
  for (auto [t, y] : pts) inflate = std::max(inflate, y - (log_kappa + t * log_rho));
  est.rho = std::exp(log_rho);
  est.kappa = std::exp(log_kappa + inflate);
  // Guard against rounding in exp/log: enforce dominance exactly.
  for (auto [t, y] : pts) {
    const double mt = std::exp(y);
    const double env = est.kappa * std::pow(est.rho, t);
    if (env < mt) est.kappa *= mt / env * (1.0 + 1e-15);
  }
  return est;
}

}  // namespace vrtdc
