#pragma once

// Per-sample TD statistics, exact population moments, theta*, spectral
// constants and projection radii.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "vrtdc/env.hpp"
#include "vrtdc/errors.hpp"
#include "vrtdc/numerics.hpp"

namespace vrtdc {

inline double importance_ratio(const Policy& target, const Policy& behavior, StateId s, ActionId a) {
  const double pi = target(s, a);
  const double pb = behavior(s, a);
  if (pb == 0.0) {
    if (pi > 0.0)
      throw CoverageViolation("behavior policy gives zero mass to (" + std::to_string(s) + "," +
                              std::to_string(a) + ") but target does not");
    return 0.0;
  }
  return pi / pb;
}

/// Table rho(s, a) of importance ratios.
inline Matrix ratio_table(const Policy& target, const Policy& behavior) {
  if (target.n_states() != behavior.n_states() || target.n_actions() != behavior.n_actions())
    throw DimensionMismatch("target/behavior policy shapes differ");
  Matrix rho(target.n_states(), target.n_actions());
  for (StateId s = 0; s < rho.rows(); ++s)
    for (ActionId a = 0; a < rho.cols(); ++a) rho(s, a) = importance_ratio(target, behavior, s, a);
  return rho;
}

/// Largest ratio over pairs the behavior policy supports.
inline double rho_max(const Policy& target, const Policy& behavior) {
  double best = 0.0;
  for (StateId s = 0; s < behavior.n_states(); ++s)
    for (ActionId a = 0; a < behavior.n_actions(); ++a)
      if (behavior(s, a) > 0.0) best = std::max(best, importance_ratio(target, behavior, s, a));
  return best;
}

struct SampleStats {
  Matrix A;
  Matrix B;
  Matrix C;
  Vector b;
  double rho = 1.0;
};

inline SampleStats sample_stats(const Transition& x, const FeatureMap& phi, double gamma, double rho_x) {
  const auto f = phi(x.s);
  const auto fn = phi(x.s_next);
  const std::size_t d = phi.dim();
  Vector diff(d);
  for (std::size_t i = 0; i < d; ++i) diff[i] = gamma * fn[i] - f[i];
  SampleStats st;
  st.rho = rho_x;
  st.A = Matrix::outer(f, diff);
  st.A *= rho_x;
  st.b = scale(f, x.r * rho_x);
  st.B = Matrix::outer(fn, f);
  st.B *= -gamma * rho_x;
  st.C = Matrix::outer(f, f);
  st.C *= -1.0;
  return st;
}

struct ExactMoments {
  Matrix A, B, C;
  Vector b;
  Matrix A_hat;
  Vector b_hat;
  Matrix A_bar;  // identically zero at the population level
  Vector b_bar;
  Matrix C_inv_A;
  Vector C_inv_b;
  Vector theta_star;
  Vector mu;
};

inline Vector optimal_theta(const Matrix& A, const Vector& b) {
  try {
    Vector x = solve_linear(A, b);
    for (double& v : x) v = -v;
    return x;
  } catch (const SingularMatrix& e) {
    throw SingularA(e.what());
  }
}

inline Vector optimal_theta(const ExactMoments& m) { return optimal_theta(m.A, m.b); }

/// Fills the derived quantities of an ExactMoments whose A, B, C, b are set.
inline void finalize_moments(ExactMoments& m) {
  try {
    m.C_inv_A = solve_linear(m.C, m.A);
    m.C_inv_b = solve_linear(m.C, m.b);
  } catch (const SingularMatrix& e) {
    throw SingularC(e.what());
  }
  m.theta_star = optimal_theta(m.A, m.b);
  m.A_hat = m.A - m.B * m.C_inv_A;
  m.b_hat = sub(m.b, m.B * m.C_inv_b);
  m.A_bar = m.A - m.C * m.C_inv_A;
  m.b_bar = sub(m.b, m.C * m.C_inv_b);
}

/// Exact A, B, C, b as weighted sums with weight mu(s) pi_b(a|s) P(s'|s,a).
inline ExactMoments exact_moments(const MDPModel& model, const Policy& target, const Policy& behavior,
                                  const FeatureMap& phi, const Vector& mu) {
  const std::size_t ns = model.n_states();
  if (phi.n_states() != ns || mu.size() != ns || behavior.n_states() != ns || target.n_states() != ns ||
      behavior.n_actions() != model.n_actions() || target.n_actions() != model.n_actions())
    throw DimensionMismatch("instance components disagree on state/action counts");
  const std::size_t d = phi.dim();
  const double gamma = model.gamma();
  ExactMoments m;
  m.A = Matrix(d, d);
  m.B = Matrix(d, d);
  m.C = Matrix(d, d);
  m.b = Vector(d, 0.0);
  m.mu = mu;
  Vector next_mean(d);
  for (StateId s = 0; s < ns; ++s) {
    if (mu[s] == 0.0) continue;
    const auto f = phi(s);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) m.C(i, j) -= mu[s] * f[i] * f[j];
    for (ActionId a = 0; a < model.n_actions(); ++a) {
      const double pb = behavior(s, a);
      const double rho = importance_ratio(target, behavior, s, a);
      if (pb == 0.0 || rho == 0.0) continue;
      std::fill(next_mean.begin(), next_mean.end(), 0.0);
      double r_mean = 0.0;
      for (const auto& [t, p] : model.successors(s, a)) {
        axpy(p, phi(t), next_mean);
        r_mean += p * model.r(s, a, t);
      }
      const double w = mu[s] * pb * rho;
      for (std::size_t i = 0; i < d; ++i) {
        m.b[i] += w * r_mean * f[i];
        for (std::size_t j = 0; j < d; ++j) {
          m.A(i, j) += w * f[i] * (gamma * next_mean[j] - f[j]);
          m.B(i, j) -= w * gamma * next_mean[i] * f[j];
        }
      }
    }
  }
  finalize_moments(m);
  return m;
}

struct TransformedSample {
  Matrix A_hat;
  Vector b_hat;
  Matrix A_bar;
  Vector b_bar;
};

inline TransformedSample hat_bar_transform(const SampleStats& x, const ExactMoments& m) {
  return {x.A - x.B * m.C_inv_A, sub(x.b, x.B * m.C_inv_b), x.A - x.C * m.C_inv_A, sub(x.b, x.C * m.C_inv_b)};
}

struct SpectralConstants {
  double lambda_A_hat = 0.0;
  double lambda_C = 0.0;
  double min_abs_eig_C = 0.0;
  double rho_max = 0.0;
  double r_max = 0.0;
};

inline SpectralConstants spectral_constants(const ExactMoments& m, const Policy& target, const Policy& behavior,
                                            double r_max) {
  SpectralConstants sc;
  // A^T C^{-1} A, symmetrized before the eigen-solve.
  const Matrix q = m.A.transpose() * m.C_inv_A;
  Matrix sym = q + q.transpose();
  sc.lambda_A_hat = -sym_max_eig(sym);
  const Matrix c2 = m.C + m.C.transpose();
  sc.lambda_C = -sym_max_eig(c2);
  Matrix c_sym = c2;
  c_sym *= 0.5;
  const Vector ev = sym_eigenvalues(c_sym);
  sc.min_abs_eig_C = std::abs(ev.front());
  for (double e : ev) sc.min_abs_eig_C = std::min(sc.min_abs_eig_C, std::abs(e));
  sc.rho_max = rho_max(target, behavior);
  sc.r_max = r_max;
  if (!(sc.lambda_A_hat > 0.0))
    throw NotNegativeDefinite("lambda_A_hat = " + std::to_string(sc.lambda_A_hat) + " is not positive");
  if (!(sc.lambda_C > 0.0)) throw NotNegativeDefinite("lambda_C = " + std::to_string(sc.lambda_C) + " is not positive");
  return sc;
}

struct Radii {
  double R_theta = 1.0;
  double R_w = 1.0;
};

inline constexpr double kMinRadius = 1e-6;

/// R_theta = safety * max{|A| |b|, |theta*|} (at least 1e-6);
/// R_w = 2 |C^{-1}| |A| R_theta.
inline Radii compute_radii(const ExactMoments& m, double safety = 1.0) {
  if (!(safety >= 1.0)) throw InvalidParams("radius safety factor must be >= 1");
  const double norm_A = spectral_norm(m.A);
  Radii r;
  r.R_theta = std::max(safety * std::max(norm_A * norm2(m.b), norm2(m.theta_star)), kMinRadius);
  double norm_C_inv = 0.0;
  try {
    norm_C_inv = spectral_norm(inverse(m.C));
  } catch (const SingularMatrix& e) {
    throw SingularC(e.what());
  }
  r.R_w = 2.0 * norm_C_inv * norm_A * r.R_theta;
  if (r.R_w < kMinRadius) r.R_w = kMinRadius;
  return r;
}

/// Everything needed to run and evaluate algorithms on one instance.
struct EvaluationProblem {
  MDPModel model;
  FeatureMap features;
  Policy target;
  Policy behavior;
  Matrix rho;  // importance ratios per (s, a)
  Vector mu;
  bool periodic = false;
  ExactMoments moments;
  SpectralConstants spectral;
  Radii radii;

  double gamma() const { return model.gamma(); }
  std::size_t dim() const { return features.dim(); }
};

inline EvaluationProblem make_problem(MDPModel model, FeatureMap features, Policy target, Policy behavior,
                                      double radius_safety = 1.0) {
  if (features.n_states() != model.n_states()) throw DimensionMismatch("feature rows vs states");
  EvaluationProblem p{std::move(model), std::move(features), std::move(target), std::move(behavior), {}, {}, false,
                      {}, {}, {}};
  p.rho = ratio_table(p.target, p.behavior);
  const ChainMatrix chain = induced_chain(p.model, p.behavior);
  auto st = stationary_distribution(chain);
  p.mu = std::move(st.mu);
  p.periodic = st.periodic;
  p.moments = exact_moments(p.model, p.target, p.behavior, p.features, p.mu);
  p.spectral = spectral_constants(p.moments, p.target, p.behavior, p.model.r_max());
  p.radii = compute_radii(p.moments, radius_safety);
  return p;
}

}  // namespace vrtdc
