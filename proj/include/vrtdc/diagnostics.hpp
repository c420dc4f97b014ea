#pragma once

// Error metrics, run traces, Monte-Carlo update variance and percentile
// envelopes across repetitions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vrtdc/env.hpp"
#include "vrtdc/errors.hpp"
#include "vrtdc/numerics.hpp"
#include "vrtdc/stats.hpp"

namespace vrtdc {

inline double convergence_error(std::span<const double> theta, std::span<const double> theta_star) {
  if (theta.size() != theta_star.size()) throw DimensionMismatch("theta vs theta*");
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - theta_star[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Tracking vector z = w + C^{-1}(b + A theta).
inline Vector tracking_vector(std::span<const double> theta, std::span<const double> w, const ExactMoments& m) {
  if (m.C_inv_A.rows() == 0) throw SingularC("moments carry no C^{-1} products");
  Vector z = m.C_inv_A * theta;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += m.C_inv_b[i] + w[i];
  return z;
}

inline double tracking_error_sq(std::span<const double> theta, std::span<const double> w, const ExactMoments& m) {
  const Vector z = tracking_vector(theta, w, m);
  return dot(z, z);
}

struct TracePoint {
  std::uint64_t pg_count = 0;
  double conv_error = 0.0;
  double tracking_error_sq = 0.0;
};

struct EpochRecord {
  Vector theta_tilde;
  Vector w_tilde;
  std::uint64_t pg_count = 0;
  double conv_error = 0.0;
  double tracking_error_sq = 0.0;
};

struct RunTrace {
  std::vector<TracePoint> points;
  std::vector<EpochRecord> epochs;
  Vector final_theta;
  Vector final_w;
  std::uint64_t total_pg_count = 0;
  std::uint64_t samples_used = 0;
  std::string algo;
  std::uint64_t seed = 0;
};

enum class Metric { ConvError, TrackingErrorSq };

inline double metric_value(const TracePoint& p, Metric m) {
  return m == Metric::ConvError ? p.conv_error : p.tracking_error_sq;
}

// ---------------------------------------------------------------------------
// Monte-Carlo variance of an update rule
// ---------------------------------------------------------------------------

struct VarianceEstimate {
  double var_theta = 0.0;
  double var_w = 0.0;
};

namespace detail {

// Trace of the unbiased sample covariance of a set of equal-length vectors.
inline double covariance_trace(const std::vector<Vector>& xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const std::size_t d = xs.front().size();
  // Welford per coordinate.
  Vector mean(d, 0.0), m2(d, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < d; ++i) {
      const double delta = xs[k][i] - mean[i];
      mean[i] += delta / static_cast<double>(k + 1);
      m2[i] += delta * (xs[k][i] - mean[i]);
    }
  double total = 0.0;
  for (double v : m2) total += v;
  return total / static_cast<double>(n - 1);
}

}  // namespace detail

/// Variance of the update (theta part, w part) over the given transitions.
/// `update` maps a Transition to a pair of update vectors.
template <class UpdateFn>
VarianceEstimate update_variance(const UpdateFn& update, std::span<const Transition> samples) {
  std::vector<Vector> gs, hs;
  gs.reserve(samples.size());
  hs.reserve(samples.size());
  for (const auto& x : samples) {
    auto [g, h] = update(x);
    gs.push_back(std::move(g));
    hs.push_back(std::move(h));
  }
  return {detail::covariance_trace(gs), detail::covariance_trace(hs)};
}

inline constexpr std::size_t kDefaultMonteCarloSamples = 500;

/// Draws n_mc fresh transitions from `source` and reports the trace of the
/// covariance of the update. The algorithm's own sample stream is untouched.
template <class UpdateFn, class Source>
VarianceEstimate mc_update_variance(const UpdateFn& update, Source& source,
                                    std::size_t n_mc = kDefaultMonteCarloSamples) {
  std::vector<Transition> xs;
  xs.reserve(n_mc);
  for (std::size_t k = 0; k < n_mc; ++k) xs.push_back(source.next());
  return update_variance(update, xs);
}

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

struct Envelope {
  std::vector<std::uint64_t> grid;
  Vector p5, p50, p95;
};

/// Nearest-rank percentile of sorted data: element ceil(p N / 100), at least the first.
inline double nearest_rank(const Vector& sorted, double p) {
  if (sorted.empty()) throw EmptyInput("no values");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

/// Value of the trace at `count`, carrying the last recorded value forward.
inline double value_at(const RunTrace& trace, std::uint64_t count, Metric metric) {
  if (trace.points.empty()) throw EmptyInput("trace has no points");
  auto it = std::upper_bound(trace.points.begin(), trace.points.end(), count,
                             [](std::uint64_t c, const TracePoint& p) { return c < p.pg_count; });
  if (it == trace.points.begin()) return metric_value(trace.points.front(), metric);
  return metric_value(*std::prev(it), metric);
}

inline std::vector<std::uint64_t> make_grid(std::uint64_t max_count, std::uint64_t step) {
  if (step == 0) throw InvalidParams("grid step must be positive");
  std::vector<std::uint64_t> grid;
  for (std::uint64_t c = 0; c <= max_count; c += step) grid.push_back(c);
  return grid;
}

inline Envelope aggregate_envelope(std::span<const RunTrace> traces, std::span<const std::uint64_t> grid,
                                   Metric metric = Metric::ConvError) {
  if (traces.empty()) throw EmptyInput("no traces to aggregate");
  Envelope env;
  env.grid.assign(grid.begin(), grid.end());
  Vector column(traces.size());
  for (std::uint64_t g : grid) {
    for (std::size_t k = 0; k < traces.size(); ++k) column[k] = value_at(traces[k], g, metric);
    std::sort(column.begin(), column.end());
    env.p5.push_back(nearest_rank(column, 5.0));
    env.p50.push_back(nearest_rank(column, 50.0));
    env.p95.push_back(nearest_rank(column, 95.0));
  }
  return env;
}

/// Mean of a metric over the points in the final `fraction` of the count range.
inline double tail_mean(const RunTrace& trace, double fraction, Metric metric = Metric::ConvError) {
  if (trace.points.empty()) throw EmptyInput("trace has no points");
  const double last = static_cast<double>(trace.points.back().pg_count);
  const double start = last * (1.0 - fraction);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : trace.points)
    if (static_cast<double>(p.pg_count) >= start) {
      sum += metric_value(p, metric);
      ++n;
    }
  return sum / static_cast<double>(n);
}

inline double median(Vector v) {
  if (v.empty()) throw EmptyInput("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace vrtdc
