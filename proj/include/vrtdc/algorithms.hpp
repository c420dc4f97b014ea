#pragma once

// Projected TD / TDC baselines and their SVRG-style variance-reduced
// variants (one and two time-scale, i.i.d. and Markovian sampling).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vrtdc/diagnostics.hpp"
#include "vrtdc/env.hpp"
#include "vrtdc/errors.hpp"
#include "vrtdc/numerics.hpp"
#include "vrtdc/rng.hpp"
#include "vrtdc/stats.hpp"

namespace vrtdc {

enum class Algo { TD, TDC, VRTD, VRTDC_IID, VRTDC_MARKOV };

inline std::string_view to_string(Algo a) {
  switch (a) {
    case Algo::TD: return "TD";
    case Algo::TDC: return "TDC";
    case Algo::VRTD: return "VRTD";
    case Algo::VRTDC_IID: return "VRTDC_IID";
    case Algo::VRTDC_MARKOV: return "VRTDC_MARKOV";
  }
  return "?";
}

inline Algo parse_algo(std::string_view s) {
  for (Algo a : {Algo::TD, Algo::TDC, Algo::VRTD, Algo::VRTDC_IID, Algo::VRTDC_MARKOV})
    if (s == to_string(a)) return a;
  throw InvalidParams("unknown algorithm '" + std::string(s) + "'");
}

inline bool is_variance_reduced(Algo a) { return a == Algo::VRTD || a == Algo::VRTDC_IID || a == Algo::VRTDC_MARKOV; }
inline bool is_two_timescale(Algo a) { return a != Algo::TD && a != Algo::VRTD; }

struct AlgoParams {
  Algo algo = Algo::TDC;
  double alpha = 0.1;
  double beta = 0.05;
  std::size_t M = 1;
  std::size_t epochs = 1;
  std::size_t steps = 0;  // baselines only
  Radii radii;
  std::uint64_t seed = 0;
  std::uint64_t record_every = 10;
  Vector theta0;  // empty means zero
  Vector w0;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidParams("step sizes must be nonnegative");
    if (M < 1) throw InvalidParams("M must be >= 1");
    if (epochs < 1) throw InvalidParams("epochs must be >= 1");
    if (record_every < 1) throw InvalidParams("record_every must be >= 1");
    if (!(radii.R_theta > 0.0) || !(radii.R_w > 0.0)) throw InvalidParams("radii must be positive");
  }
};

struct IterateState {
  Vector theta;
  Vector w;
};

/// Euclidean projection onto the ball of radius R.
inline Vector project(Vector v, double R) {
  const double n = norm2(v);
  if (n > R) {
    const double s = R / n;
    for (double& x : v) x *= s;
  }
  return v;
}

struct PseudoGradients {
  Vector G;
  Vector H;
};

/// G = A_x theta + b_x + B_x w and H = A_x theta + b_x + C_x w from explicit matrices.
inline PseudoGradients pseudo_gradients(const SampleStats& s, std::span<const double> theta, std::span<const double> w) {
  Vector base = add(s.A * theta, s.b);
  return {add(base, s.B * w), add(base, s.C * w)};
}

/// Features, ratios and discount needed to evaluate per-sample terms in O(d).
struct SampleContext {
  const FeatureMap* phi;
  const Matrix* rho;
  double gamma;

  explicit SampleContext(const EvaluationProblem& p) : phi(&p.features), rho(&p.rho), gamma(p.gamma()) {}
  SampleContext(const FeatureMap& f, const Matrix& r, double g) : phi(&f), rho(&r), gamma(g) {}

  std::size_t dim() const { return phi->dim(); }
};

/// Rank-one evaluation of the pseudo-gradients:
/// G = rho delta phi - gamma rho (phi.w) phi', H = rho delta phi - (phi.w) phi,
/// with delta = r + gamma phi'.theta - phi.theta.
inline PseudoGradients pseudo_gradients(const Transition& x, const SampleContext& ctx, std::span<const double> theta,
                                        std::span<const double> w) {
  const auto f = (*ctx.phi)(x.s);
  const auto fn = (*ctx.phi)(x.s_next);
  const double rho = (*ctx.rho)(x.s, x.a);
  const double delta = x.r + ctx.gamma * dot(fn, theta) - dot(f, theta);
  const double fw = dot(f, w);
  const std::size_t d = f.size();
  PseudoGradients out{Vector(d), Vector(d)};
  for (std::size_t i = 0; i < d; ++i) {
    const double common = rho * delta * f[i];
    out.G[i] = common - ctx.gamma * rho * fw * fn[i];
    out.H[i] = common - fw * f[i];
  }
  return out;
}

/// One time-scale direction g = A_x theta + b_x.
inline Vector td_direction(const Transition& x, const SampleContext& ctx, std::span<const double> theta) {
  const auto f = (*ctx.phi)(x.s);
  const auto fn = (*ctx.phi)(x.s_next);
  const double rho = (*ctx.rho)(x.s, x.a);
  const double delta = x.r + ctx.gamma * dot(fn, theta) - dot(f, theta);
  return scale(f, rho * delta);
}

/// Everything needed to evaluate the algorithm's update on an arbitrary
/// sample: current iterate, and for variance-reduced methods the epoch
/// anchors and batch pseudo-gradients.
struct UpdateSnapshot {
  Algo algo = Algo::TDC;
  Vector theta;
  Vector w;
  bool has_anchor = false;
  Vector theta_anchor;
  Vector w_anchor;
  Vector G_batch;
  Vector H_batch;

  /// Pre-projection update directions (theta part, w part) for sample x.
  std::pair<Vector, Vector> update(const Transition& x, const SampleContext& ctx) const {
    const std::size_t d = theta.size();
    if (is_variance_reduced(algo) && !has_anchor) throw InvalidParams("update: no anchor before the first batch");
    switch (algo) {
      case Algo::TD:
        return {td_direction(x, ctx, theta), Vector(d, 0.0)};
      case Algo::TDC: {
        auto pg = pseudo_gradients(x, ctx, theta, w);
        return {std::move(pg.G), std::move(pg.H)};
      }
      case Algo::VRTD: {
        Vector g = td_direction(x, ctx, theta);
        const Vector ga = td_direction(x, ctx, theta_anchor);
        for (std::size_t i = 0; i < d; ++i) g[i] = g[i] - ga[i] + G_batch[i];
        return {std::move(g), Vector(d, 0.0)};
      }
      case Algo::VRTDC_IID:
      case Algo::VRTDC_MARKOV: {
        auto cur = pseudo_gradients(x, ctx, theta, w);
        const auto anc = pseudo_gradients(x, ctx, theta_anchor, w_anchor);
        for (std::size_t i = 0; i < d; ++i) {
          cur.G[i] = cur.G[i] - anc.G[i] + G_batch[i];
          cur.H[i] = cur.H[i] - anc.H[i] + H_batch[i];
        }
        return {std::move(cur.G), std::move(cur.H)};
      }
    }
    throw InvalidParams("unknown algorithm");
  }
};

struct StepEvent {
  const UpdateSnapshot& before;  // state the update was evaluated at
  const Transition& x;
  const Vector& d_theta;  // pre-projection directions
  const Vector& d_w;
  const Vector& theta_after;
  const Vector& w_after;
  std::uint64_t pg_count;
};

/// Default observer: ignores every event.
struct NullObserver {
  void on_batch(const UpdateSnapshot&, std::span<const Transition>) {}
  void on_step(const StepEvent&) {}
  void on_record(const UpdateSnapshot&, std::uint64_t) {}
};

namespace detail {

inline void init_iterate(const AlgoParams& p, std::size_t d, UpdateSnapshot& snap) {
  snap.algo = p.algo;
  snap.theta = p.theta0.empty() ? Vector(d, 0.0) : p.theta0;
  snap.w = p.w0.empty() ? Vector(d, 0.0) : p.w0;
  if (snap.theta.size() != d || snap.w.size() != d) throw DimensionMismatch("initial iterate size");
  if (!is_two_timescale(p.algo)) std::fill(snap.w.begin(), snap.w.end(), 0.0);
}

/// Appends trace points: one whenever the count passes a multiple of record_every.
class Recorder {
 public:
  Recorder(const AlgoParams& p, const ExactMoments& m, RunTrace& trace) : every_(p.record_every), m_(&m), trace_(&trace) {}

  template <class Obs>
  void initial(const UpdateSnapshot& s, Obs& obs) {
    push(s, 0);
    obs.on_record(s, 0);
  }

  template <class Obs>
  void advance(std::uint64_t before, std::uint64_t after, const UpdateSnapshot& s, Obs& obs) {
    if (after / every_ > before / every_) {
      push(s, after);
      obs.on_record(s, after);
    }
  }

 private:
  void push(const UpdateSnapshot& s, std::uint64_t count) {
    trace_->points.push_back({count, convergence_error(s.theta, m_->theta_star), tracking_error_sq(s.theta, s.w, *m_)});
  }

  std::uint64_t every_;
  const ExactMoments* m_;
  RunTrace* trace_;
};

inline void check_dims(const EvaluationProblem& prob, const AlgoParams& p) {
  p.validate();
  if (prob.moments.theta_star.size() != prob.dim()) throw DimensionMismatch("moments vs features");
}

/// Shared epoch loop for the variance-reduced methods. `fill_batch(batch)`
/// supplies the M batch transitions; `next_inner(batch)` the inner sample.
template <class FillBatch, class NextInner, class Obs>
RunTrace vr_loop(const AlgoParams& p, const EvaluationProblem& prob, bool fresh_inner, FillBatch&& fill_batch,
                 NextInner&& next_inner, Obs& obs) {
  check_dims(prob, p);
  const SampleContext ctx(prob);
  const std::size_t d = prob.dim();
  const bool two = is_two_timescale(p.algo);
  const std::uint64_t batch_cost = (two ? 2u : 1u) * p.M;
  const std::uint64_t inner_cost = two ? 4u : 2u;

  RunTrace trace;
  trace.algo = std::string(to_string(p.algo));
  trace.seed = p.seed;
  Recorder rec(p, prob.moments, trace);

  UpdateSnapshot snap;
  init_iterate(p, d, snap);
  snap.theta = project(snap.theta, p.radii.R_theta);
  snap.w = project(snap.w, p.radii.R_w);
  Vector theta_tilde = snap.theta;
  Vector w_tilde = snap.w;
  std::uint64_t count = 0;
  rec.initial(snap, obs);

  std::vector<Transition> batch;
  batch.reserve(p.M);
  Vector sum_theta(d), sum_w(d);
  for (std::size_t epoch = 0; epoch < p.epochs; ++epoch) {
    batch.clear();
    fill_batch(batch);
    if (batch.size() != p.M) throw InvalidParams("batch source returned the wrong size");
    trace.samples_used += batch.size() + (fresh_inner ? p.M : 0);
    snap.theta = theta_tilde;
    snap.w = w_tilde;
    snap.has_anchor = true;
    snap.theta_anchor = theta_tilde;
    snap.w_anchor = w_tilde;
    snap.G_batch.assign(d, 0.0);
    snap.H_batch.assign(d, 0.0);
    for (const auto& x : batch) {
      if (two) {
        const auto pg = pseudo_gradients(x, ctx, theta_tilde, w_tilde);
        for (std::size_t i = 0; i < d; ++i) {
          snap.G_batch[i] += pg.G[i];
          snap.H_batch[i] += pg.H[i];
        }
      } else {
        const Vector g = td_direction(x, ctx, theta_tilde);
        for (std::size_t i = 0; i < d; ++i) snap.G_batch[i] += g[i];
      }
    }
    const double inv_m = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < d; ++i) {
      snap.G_batch[i] *= inv_m;
      snap.H_batch[i] *= inv_m;
    }
    rec.advance(count, count + batch_cost, snap, obs);
    count += batch_cost;
    obs.on_batch(snap, batch);

    std::fill(sum_theta.begin(), sum_theta.end(), 0.0);
    std::fill(sum_w.begin(), sum_w.end(), 0.0);
    for (std::size_t t = 0; t < p.M; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        sum_theta[i] += snap.theta[i];
        sum_w[i] += snap.w[i];
      }
      const Transition x = next_inner(batch);
      auto [dt, dw] = snap.update(x, ctx);
      Vector theta_next = snap.theta;
      axpy(p.alpha, dt, theta_next);
      theta_next = project(std::move(theta_next), p.radii.R_theta);
      Vector w_next = snap.w;
      if (two) {
        axpy(p.beta, dw, w_next);
        w_next = project(std::move(w_next), p.radii.R_w);
      }
      obs.on_step(StepEvent{snap, x, dt, dw, theta_next, w_next, count + inner_cost});
      snap.theta = std::move(theta_next);
      snap.w = std::move(w_next);
      rec.advance(count, count + inner_cost, snap, obs);
      count += inner_cost;
    }
    const double inv = 1.0 / static_cast<double>(p.M);
    for (std::size_t i = 0; i < d; ++i) {
      theta_tilde[i] = sum_theta[i] * inv;
      w_tilde[i] = sum_w[i] * inv;
    }
    trace.epochs.push_back({theta_tilde, w_tilde, count, convergence_error(theta_tilde, prob.moments.theta_star),
                            tracking_error_sq(theta_tilde, w_tilde, prob.moments)});
  }
  trace.final_theta = theta_tilde;
  trace.final_w = w_tilde;
  trace.total_pg_count = count;
  return trace;
}

}  // namespace detail

/// Projected TD (w frozen at zero) or TDC for `params.steps` updates.
/// `source.next()` yields transitions in either sampling regime.
template <class Source, class Obs = NullObserver>
RunTrace run_baseline(const AlgoParams& params, Source& source, const EvaluationProblem& prob, Obs&& obs = Obs{}) {
  if (params.algo != Algo::TD && params.algo != Algo::TDC) throw InvalidParams("run_baseline needs TD or TDC");
  detail::check_dims(prob, params);
  const SampleContext ctx(prob);
  const std::size_t d = prob.dim();
  const bool two = params.algo == Algo::TDC;
  const std::uint64_t cost = two ? 2u : 1u;

  RunTrace trace;
  trace.algo = std::string(to_string(params.algo));
  trace.seed = params.seed;
  detail::Recorder rec(params, prob.moments, trace);
  UpdateSnapshot snap;
  detail::init_iterate(params, d, snap);
  snap.theta = project(snap.theta, params.radii.R_theta);
  snap.w = project(snap.w, params.radii.R_w);
  std::uint64_t count = 0;
  rec.initial(snap, obs);
  for (std::size_t t = 0; t < params.steps; ++t) {
    const Transition x = source.next();
    auto [dt, dw] = snap.update(x, ctx);
    Vector theta_next = snap.theta;
    axpy(params.alpha, dt, theta_next);
    theta_next = project(std::move(theta_next), params.radii.R_theta);
    Vector w_next = snap.w;
    if (two) {
      axpy(params.beta, dw, w_next);
      w_next = project(std::move(w_next), params.radii.R_w);
    }
    obs.on_step(StepEvent{snap, x, dt, dw, theta_next, w_next, count + cost});
    snap.theta = std::move(theta_next);
    snap.w = std::move(w_next);
    rec.advance(count, count + cost, snap, obs);
    count += cost;
  }
  trace.samples_used = params.steps;
  trace.final_theta = snap.theta;
  trace.final_w = snap.w;
  trace.total_pg_count = count;
  return trace;
}

/// Variance-reduced one time-scale TD with i.i.d. samples: fresh batch and
/// fresh inner samples every epoch.
template <class Source, class Obs = NullObserver>
RunTrace run_vrtd(const AlgoParams& params, Source& source, const EvaluationProblem& prob, Obs&& obs = Obs{}) {
  AlgoParams p = params;
  p.algo = Algo::VRTD;
  return detail::vr_loop(
      p, prob, true,
      [&](std::vector<Transition>& batch) {
        for (std::size_t k = 0; k < p.M; ++k) batch.push_back(source.next());
      },
      [&](const std::vector<Transition>&) { return source.next(); }, obs);
}

namespace detail {

inline void require_length(std::span<const Transition> trajectory, const AlgoParams& p) {
  if (trajectory.size() < p.epochs * p.M)
    throw TrajectoryTooShort("need " + std::to_string(p.epochs * p.M) + " transitions, have " +
                             std::to_string(trajectory.size()));
}

template <class Obs>
RunTrace markov_vr(const AlgoParams& p, std::span<const Transition> trajectory, const EvaluationProblem& prob,
                   Obs& obs) {
  p.validate();
  require_length(trajectory, p);
  Rng pick(derive_seed(p.seed, 0x1A2B));
  std::size_t offset = 0;
  return vr_loop(
      p, prob, false,
      [&](std::vector<Transition>& batch) {
        batch.assign(trajectory.begin() + static_cast<std::ptrdiff_t>(offset),
                     trajectory.begin() + static_cast<std::ptrdiff_t>(offset + p.M));
        offset += p.M;
      },
      [&](const std::vector<Transition>& batch) { return batch[pick.below(batch.size())]; }, obs);
}

}  // namespace detail

/// Variance-reduced one time-scale TD on a single trajectory: consecutive
/// batches, inner samples drawn uniformly with replacement from the batch.
template <class Obs = NullObserver>
RunTrace run_vrtd_markov(const AlgoParams& params, std::span<const Transition> trajectory,
                         const EvaluationProblem& prob, Obs&& obs = Obs{}) {
  AlgoParams p = params;
  p.algo = Algo::VRTD;
  return detail::markov_vr(p, trajectory, prob, obs);
}

/// Variance-reduced TDC with i.i.d. samples (M batch + M inner samples per epoch).
template <class Source, class Obs = NullObserver>
RunTrace run_vrtdc_iid(const AlgoParams& params, Source& source, const EvaluationProblem& prob, Obs&& obs = Obs{}) {
  AlgoParams p = params;
  p.algo = Algo::VRTDC_IID;
  return detail::vr_loop(
      p, prob, true,
      [&](std::vector<Transition>& batch) {
        for (std::size_t k = 0; k < p.M; ++k) batch.push_back(source.next());
      },
      [&](const std::vector<Transition>&) { return source.next(); }, obs);
}

/// Variance-reduced TDC on a single trajectory.
template <class Obs = NullObserver>
RunTrace run_vrtdc_markov(const AlgoParams& params, std::span<const Transition> trajectory,
                          const EvaluationProblem& prob, Obs&& obs = Obs{}) {
  AlgoParams p = params;
  p.algo = Algo::VRTDC_MARKOV;
  return detail::markov_vr(p, trajectory, prob, obs);
}

}  // namespace vrtdc
