#include <gtest/gtest.h>

#include <cmath>

#include "vrtdc/stats.hpp"

using namespace vrtdc;

namespace {

void expect_matrix_near(const Matrix& got, const Matrix& want, double tol) {
  ASSERT_EQ(got.rows(), want.rows());
  ASSERT_EQ(got.cols(), want.cols());
  for (std::size_t i = 0; i < got.rows(); ++i)
    for (std::size_t j = 0; j < got.cols(); ++j) EXPECT_NEAR(got(i, j), want(i, j), tol) << i << "," << j;
}

void expect_vector_near(const Vector& got, const Vector& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << i;
}

EvaluationProblem cycle2_problem() {
  auto c = make_cycle2();
  return make_problem(c.model, c.features, c.policy, c.policy);
}

EvaluationProblem small_garnet(std::uint64_t seed) {
  auto g = generate_garnet(20, 4, 3, 5, seed);
  return make_problem(g.model, g.features, make_policy(PolicyKind::Random, 20, 4, derive_seed(seed, 1)),
                      make_policy(PolicyKind::Uniform, 20, 4));
}

// Brute-force moments: explicit sum of sample_stats over every (s, a, s').
ExactMoments brute_force(const EvaluationProblem& p) {
  const std::size_t d = p.dim();
  ExactMoments m;
  m.A = Matrix(d, d);
  m.B = Matrix(d, d);
  m.C = Matrix(d, d);
  m.b = Vector(d, 0.0);
  for (StateId s = 0; s < p.model.n_states(); ++s)
    for (ActionId a = 0; a < p.model.n_actions(); ++a)
      for (StateId t = 0; t < p.model.n_states(); ++t) {
        const double w = p.mu[s] * p.behavior(s, a) * p.model.p(s, a, t);
        if (w == 0.0) continue;
        const SampleStats x = sample_stats({s, a, p.model.r(s, a, t), t}, p.features, p.gamma(), p.rho(s, a));
        m.A += w * x.A;
        m.B += w * x.B;
        m.C += w * x.C;
        axpy(w, x.b, m.b);
      }
  return m;
}

}  // namespace

TEST(ImportanceRatio, Basics) {
  const Policy target(Matrix{{0.6, 0.4}, {0.5, 0.5}});
  const Policy behavior(Matrix{{0.25, 0.75}, {1.0, 0.0}});
  EXPECT_DOUBLE_EQ(importance_ratio(target, behavior, 0, 0), 2.4);
  EXPECT_THROW(importance_ratio(target, behavior, 1, 1), CoverageViolation);
  const Policy t2(Matrix{{0.6, 0.4}, {1.0, 0.0}});
  EXPECT_EQ(importance_ratio(t2, behavior, 1, 1), 0.0);
  EXPECT_EQ(importance_ratio(behavior, behavior, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(rho_max(t2, behavior), 2.4);
}

TEST(SampleStats, Cycle2Transition) {
  const auto c = make_cycle2();
  const SampleStats x = sample_stats({0, 0, 1.0, 1}, c.features, 0.5, 1.0);
  expect_matrix_near(x.A, Matrix{{-1.0, 0.5}, {0.0, 0.0}}, 0.0);
  expect_vector_near(x.b, Vector{1.0, 0.0}, 0.0);
  expect_matrix_near(x.B, Matrix{{0.0, 0.0}, {-0.5, 0.0}}, 0.0);
  expect_matrix_near(x.C, Matrix{{-1.0, 0.0}, {0.0, 0.0}}, 0.0);
}

TEST(SampleStats, GammaZeroCollapse) {
  const FeatureMap phi(Matrix{{0.6, 0.8}});
  const SampleStats x = sample_stats({0, 0, 0.0, 0}, phi, 0.0, 1.7);
  expect_matrix_near(x.A, 1.7 * x.C, 1e-15);
  expect_vector_near(x.b, Vector{0.0, 0.0}, 0.0);
}

TEST(ExactMoments, Cycle2Table) {
  const auto p = cycle2_problem();
  const auto& m = p.moments;
  expect_matrix_near(m.A, Matrix{{-0.5, 0.25}, {0.25, -0.5}}, 1e-12);
  expect_vector_near(m.b, Vector{0.5, 0.5}, 1e-12);
  expect_matrix_near(m.B, Matrix{{0.0, -0.25}, {-0.25, 0.0}}, 1e-12);
  expect_matrix_near(m.C, Matrix{{-0.5, 0.0}, {0.0, -0.5}}, 1e-12);
  expect_vector_near(m.theta_star, Vector{2.0, 2.0}, 1e-12);
  expect_matrix_near(m.A_hat, Matrix{{-0.625, 0.5}, {0.5, -0.625}}, 1e-12);
  expect_vector_near(m.b_hat, Vector{0.25, 0.25}, 1e-12);
  expect_matrix_near(m.A_bar, Matrix(2, 2), 1e-12);
  expect_vector_near(m.b_bar, Vector{0.0, 0.0}, 1e-12);
}

TEST(ExactMoments, MatchesBruteForceEnumeration) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = small_garnet(seed);
    const ExactMoments oracle = brute_force(p);
    expect_matrix_near(p.moments.A, oracle.A, 1e-13);
    expect_matrix_near(p.moments.B, oracle.B, 1e-13);
    expect_matrix_near(p.moments.C, oracle.C, 1e-13);
    expect_vector_near(p.moments.b, oracle.b, 1e-13);
  }
}

TEST(ExactMoments, ZeroRewardGivesZeroTheta) {
  auto g = generate_garnet(10, 2, 3, 3, 4);
  MDPModel zero(10, 2, 0.9, g.model.kernel(), std::vector<double>(g.model.reward().size(), 0.0));
  const auto p = make_problem(zero, g.features, make_policy(PolicyKind::Uniform, 10, 2),
                              make_policy(PolicyKind::Uniform, 10, 2));
  for (double v : p.moments.b) EXPECT_EQ(v, 0.0);
  for (double v : p.moments.theta_star) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p.radii.R_theta, kMinRadius);
}

TEST(ExactMoments, FixedPointIdentities) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = small_garnet(seed);
    const auto& m = p.moments;
    EXPECT_LE(norm_inf(add(m.A * m.theta_star, m.b)), 1e-9);
    EXPECT_LE(norm_inf(add(m.A_hat * m.theta_star, m.b_hat)), 1e-9);
  }
}

TEST(ExactMoments, AHatEqualsSymmetricForm) {
  // With sum_a pi(a|s) = 1 the population identity A^T = C - B holds, hence A_hat = A^T C^{-1} A.
  const auto p = small_garnet(8);
  const auto& m = p.moments;
  expect_matrix_near(m.A.transpose(), m.C - m.B, 1e-12);
  expect_matrix_near(m.A_hat, m.A.transpose() * m.C_inv_A, 1e-10);
}

TEST(ExactMoments, MonteCarloMeansWithinThreeStandardErrors) {
  const auto p = small_garnet(2);
  const std::size_t d = p.dim();
  const int n = 100000;
  IidSampler sampler(p.model, p.behavior, p.mu, 17);
  Matrix sum_a(d, d), sq_a(d, d), sum_ah(d, d), sq_ah(d, d);
  for (int k = 0; k < n; ++k) {
    const Transition x = sampler.next();
    const SampleStats st = sample_stats(x, p.features, p.gamma(), p.rho(x.s, x.a));
    const Matrix ah = hat_bar_transform(st, p.moments).A_hat;
    for (std::size_t i = 0; i < d * d; ++i) {
      sum_a.data()[i] += st.A.data()[i];
      sq_a.data()[i] += st.A.data()[i] * st.A.data()[i];
      sum_ah.data()[i] += ah.data()[i];
      sq_ah.data()[i] += ah.data()[i] * ah.data()[i];
    }
  }
  auto check = [&](const Matrix& sum, const Matrix& sq, const Matrix& truth) {
    for (std::size_t i = 0; i < d * d; ++i) {
      const double mean = sum.data()[i] / n;
      const double var = std::max(sq.data()[i] / n - mean * mean, 0.0) * n / (n - 1);
      const double se = std::sqrt(var / n);
      EXPECT_LE(std::abs(mean - truth.data()[i]), 3.0 * se + 1e-15) << "entry " << i;
    }
  };
  check(sum_a, sq_a, p.moments.A);
  check(sum_ah, sq_ah, p.moments.A_hat);
}

TEST(HatBar, Cycle2HandProduct) {
  const auto p = cycle2_problem();
  const SampleStats x = sample_stats({0, 0, 1.0, 1}, p.features, 0.5, 1.0);
  const auto t = hat_bar_transform(x, p.moments);
  expect_matrix_near(t.A_hat, x.A + 2.0 * (x.B * p.moments.A), 1e-14);
}

TEST(HatBar, VanishingBLeavesSampleUnchanged) {
  auto p = cycle2_problem();
  SampleStats x = sample_stats({0, 0, 1.0, 1}, p.features, 0.5, 1.0);
  x.B = Matrix(2, 2);
  const auto t = hat_bar_transform(x, p.moments);
  expect_matrix_near(t.A_hat, x.A, 0.0);
  expect_vector_near(t.b_hat, x.b, 0.0);
}

TEST(Spectral, Cycle2Constants) {
  const auto p = cycle2_problem();
  EXPECT_NEAR(p.spectral.lambda_A_hat, 0.25, 1e-12);
  EXPECT_NEAR(p.spectral.lambda_C, 1.0, 1e-12);
  EXPECT_NEAR(p.spectral.min_abs_eig_C, 0.5, 1e-12);
  EXPECT_EQ(p.spectral.rho_max, 1.0);
  EXPECT_EQ(p.spectral.r_max, 1.0);
}

TEST(Spectral, MinusIdentityC) {
  ExactMoments m;
  m.A = Matrix{{-1.0, 0.0}, {0.0, -1.0}};
  m.B = Matrix(2, 2);
  m.C = Matrix{{-1.0, 0.0}, {0.0, -1.0}};
  m.b = Vector{1.0, 2.0};
  finalize_moments(m);
  expect_vector_near(m.theta_star, Vector{1.0, 2.0}, 0.0);
  const Policy u = make_policy(PolicyKind::Uniform, 1, 2);
  const auto sc = spectral_constants(m, u, u, 1.0);
  EXPECT_NEAR(sc.lambda_C, 2.0, 1e-14);
  EXPECT_NEAR(sc.min_abs_eig_C, 1.0, 1e-14);
  EXPECT_EQ(sc.rho_max, 1.0);
}

TEST(Spectral, PositiveDefiniteCRejected) {
  ExactMoments m;
  m.A = Matrix{{-1.0, 0.0}, {0.0, -1.0}};
  m.B = Matrix(2, 2);
  m.C = Matrix{{1.0, 0.0}, {0.0, 1.0}};
  m.b = Vector{1.0, 0.0};
  finalize_moments(m);
  const Policy u = make_policy(PolicyKind::Uniform, 1, 1);
  EXPECT_THROW(spectral_constants(m, u, u, 1.0), NotNegativeDefinite);
}

TEST(Moments, SingularityErrors) {
  ExactMoments m;
  m.A = Matrix{{1.0, 1.0}, {1.0, 1.0}};
  m.B = Matrix(2, 2);
  m.C = Matrix{{-1.0, 0.0}, {0.0, -1.0}};
  m.b = Vector{1.0, 0.0};
  EXPECT_THROW(finalize_moments(m), SingularA);
  m.A = Matrix::identity(2);
  m.C = Matrix(2, 2);
  EXPECT_THROW(finalize_moments(m), SingularC);
}

TEST(Radii, Cycle2Values) {
  const auto p = cycle2_problem();
  EXPECT_NEAR(p.radii.R_theta, 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(p.radii.R_w, 2.0 * 2.0 * 0.75 * 2.0 * std::sqrt(2.0), 1e-12);
  const Radii doubled = compute_radii(p.moments, 2.0);
  EXPECT_NEAR(doubled.R_theta, 2.0 * p.radii.R_theta, 1e-12);
  EXPECT_NEAR(doubled.R_w, 2.0 * p.radii.R_w, 1e-12);
  EXPECT_THROW(compute_radii(p.moments, 0.5), InvalidParams);
}

TEST(Radii, ContainThetaStar) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto p = small_garnet(seed);
    EXPECT_LE(norm2(p.moments.theta_star), p.radii.R_theta);
    EXPECT_GE(p.radii.R_w * (1 + 1e-15),
              2.0 * spectral_norm(inverse(p.moments.C)) * spectral_norm(p.moments.A) * p.radii.R_theta);
  }
}

TEST(SampleBounds, PerSampleNormBoundsHold) {
  const auto p = small_garnet(3);
  const auto& sc = p.spectral;
  const double g = p.gamma();
  const double hat_bound = (1 + g) * sc.rho_max * (1 + g * sc.rho_max / sc.min_abs_eig_C);
  const double affine_bound =
      ((1 + g) * p.radii.R_theta + sc.r_max) * sc.rho_max * (1 + g * sc.rho_max / sc.min_abs_eig_C);
  IidSampler sampler(p.model, p.behavior, p.mu, 3);
  for (int k = 0; k < 2000; ++k) {
    const Transition x = sampler.next();
    const SampleStats st = sample_stats(x, p.features, g, p.rho(x.s, x.a));
    const auto t = hat_bar_transform(st, p.moments);
    ASSERT_LE(spectral_norm(st.A), (1 + g) * sc.rho_max + 1e-12);
    ASSERT_LE(spectral_norm(st.B), g * sc.rho_max + 1e-12);
    ASSERT_LE(spectral_norm(st.C), 1.0 + 1e-12);
    ASSERT_LE(norm2(st.b), sc.rho_max * sc.r_max + 1e-12);
    ASSERT_LE(spectral_norm(t.A_hat), hat_bound + 1e-12);
    ASSERT_LE(norm2(add(t.A_hat * p.moments.theta_star, t.b_hat)), affine_bound + 1e-12);
  }
}
