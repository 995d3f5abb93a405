// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mtlqe/aggregators.hpp"
#include "mtlqe/error.hpp"
#include "test_util.hpp"

namespace mtlqe::agg {
namespace {

using testing::naive_gram;
using testing::naive_matvec;
using testing::random_matrix;

GradientMatrix cols(std::initializer_list<Vector> columns) {
  const std::vector<Vector> v(columns);
  return GradientMatrix::from_columns(v);
}

double nash_residual(const Matrix& m, const Vector& a) {
  const Vector ma = naive_matvec(m, a);
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(ma[i] - 1.0 / a[i]));
  return r;
}

// Undamped Newton on F(a) = M a - 1/a, halving steps to stay positive.
Vector newton_oracle(const Matrix& m) {
  const std::size_t n = m.rows();
  Vector a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = 1.0 / std::sqrt(m(i, i));
  for (int it = 0; it < 200; ++it) {
    const Vector ma = naive_matvec(m, a);
    Vector f(n);
    Matrix j = m;
    for (std::size_t i = 0; i < n; ++i) {
      f[i] = -(ma[i] - 1.0 / a[i]);
      j(i, i) += 1.0 / (a[i] * a[i]);
    }
    const Vector step = testing::naive_solve(j, f);
    double t = 1.0;
    auto positive = [&] {
      for (std::size_t i = 0; i < n; ++i)
        if (a[i] + t * step[i] <= 0.0) return false;
      return true;
    };
    while (!positive()) t *= 0.5;
    for (std::size_t i = 0; i < n; ++i) a[i] += t * step[i];
    if (nash_residual(m, a) < 1e-13) break;
  }
  return a;
}

// For two tasks, a2 follows from the first row of M a = 1/a; bisect the second row.
Vector bisection_oracle_2x2(const Matrix& m) {
  auto a2_of = [&](double a1) { return (1.0 / a1 - m(0, 0) * a1) / m(0, 1); };
  auto g = [&](double a1) {
    const double a2 = a2_of(a1);
    return m(1, 0) * a1 + m(1, 1) * a2 - 1.0 / a2;
  };
  // Feasible a1 keeps a2 > 0: a1 below 1/sqrt(M11) when M12 > 0, above it otherwise.
  const double root = 1.0 / std::sqrt(m(0, 0));
  double lo = m(0, 1) > 0 ? 1e-12 : root * (1 + 1e-15);
  double hi = m(0, 1) > 0 ? root * (1 - 1e-15) : root * 1e6;
  double glo = g(lo);
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if ((gm > 0) == (glo > 0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  const double a1 = 0.5 * (lo + hi);
  return {a1, a2_of(a1)};
}

// ---- linear ----

TEST(Linear, UnitImportanceSumsColumns) {
  const auto r = aggregate_linear(cols({{1, 2, 3}, {4, 5, 6}}), Vector{1, 1});
  EXPECT_EQ(r.direction, (Vector{5, 7, 9}));
  EXPECT_FALSE(r.fallback);
}

TEST(Linear, OneHotRecoversSingleTask) {
  const auto r = aggregate_linear(cols({{1, 2, 3}, {4, 5, 6}}), Vector{1, 0});
  EXPECT_EQ(r.direction, (Vector{1, 2, 3}));
}

TEST(Linear, MatchesDotProducts) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix g = random_matrix(rng, 30, 3);
    const Vector w = testing::random_vector(rng, 3, 0.0, 2.0);
    const auto r = aggregate_linear(GradientMatrix(g), w);
    const Vector ref = naive_matvec(g, w);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(r.direction[i], ref[i], 1e-12);
  }
}

// ---- Nash ----

TEST(Nash, IdentityGivesOnes) {
  const auto s = solve_nash(Matrix::identity(2));
  EXPECT_NEAR(s.alpha[0], 1.0, 1e-8);
  EXPECT_NEAR(s.alpha[1], 1.0, 1e-8);
}

TEST(Nash, ScalarCase) {
  const auto s = solve_nash(Matrix::from_rows({{4}}));
  EXPECT_NEAR(s.alpha[0], 0.5, 1e-12);
}

TEST(Nash, SymmetricPairIsOneOverRootThree) {
  const auto s = solve_nash(Matrix::from_rows({{2, 1}, {1, 2}}));
  EXPECT_NEAR(s.alpha[0], 1.0 / std::sqrt(3.0), 1e-8);
  EXPECT_NEAR(s.alpha[1], 1.0 / std::sqrt(3.0), 1e-8);
}

TEST(Nash, RandomSpdAgreesWithNewtonOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = testing::random_spd(rng, 3);
    const auto s = solve_nash(m);
    ASSERT_LE(nash_residual(m, s.alpha), 1e-8);
    const Vector ref = newton_oracle(m);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_GT(s.alpha[i], 0.0);
      EXPECT_NEAR(s.alpha[i], ref[i], 1e-7 * std::max(1.0, ref[i]));
    }
  }
}

TEST(Nash, TwoTaskAgreesWithBisection) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = testing::random_spd(rng, 2);
    const auto s = solve_nash(m);
    const Vector ref = bisection_oracle_2x2(m);
    EXPECT_NEAR(s.alpha[0], ref[0], 1e-7 * std::max(1.0, ref[0]));
    EXPECT_NEAR(s.alpha[1], ref[1], 1e-7 * std::max(1.0, ref[1]));
  }
}

TEST(Nash, StronglyConflictingGradientsStillSolve) {
  const Matrix m = Matrix::from_rows({{1, -0.99}, {-0.99, 1}});
  const auto s = solve_nash(m);
  EXPECT_LE(nash_residual(m, s.alpha), 1e-8);
}

TEST(Nash, ZeroGradientTaskThrows) {
  try {
    solve_nash(Matrix::from_rows({{1, 0}, {0, 0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kZeroGradientTask);
  }
}

TEST(Nash, OpposedGradientsFallBack) {
  const auto r = aggregate_nash(cols({{1, 0}, {-1, 0}}));
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.alpha, (Vector{1, 1}));
}

TEST(Nash, OrthonormalGradientsSum) {
  const auto r = aggregate_nash(cols({{1, 0, 0}, {0, 1, 0}}));
  EXPECT_NEAR(r.direction[0], 1.0, 1e-8);
  EXPECT_NEAR(r.direction[1], 1.0, 1e-8);
  EXPECT_NEAR(r.direction[2], 0.0, 1e-15);
}

TEST(Nash, ScaleInvariantDirection) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix g = random_matrix(rng, 50, 3);
    const auto base = aggregate_nash(GradientMatrix(g));
    for (std::size_t r = 0; r < g.rows(); ++r) g(r, 1) *= 10.0;
    const auto scaled = aggregate_nash(GradientMatrix(g));
    ASSERT_FALSE(base.fallback);
    EXPECT_LE(testing::rel_diff(scaled.direction, base.direction), 1e-6);
  }
}

TEST(Nash, RandomTallMatrixResidual) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = random_matrix(rng, 50, 3);
    const auto r = aggregate_nash(GradientMatrix(g));
    EXPECT_LE(nash_residual(naive_gram(g), r.alpha), 1e-8);
  }
}

// ---- Aligned ----

TEST(Aligned, ScaledIdentityGramKeepsImportance) {
  const auto r = aggregate_aligned(cols({{3, 0}, {0, 3}}), Vector{1, 2});
  EXPECT_NEAR(r.alpha[0], 1.0, 1e-12);
  EXPECT_NEAR(r.alpha[1], 2.0, 1e-12);
  EXPECT_NEAR(r.direction[0], 3.0, 1e-12);
  EXPECT_NEAR(r.direction[1], 6.0, 1e-12);
}

TEST(Aligned, HandCaseRescalesToSmallerNorm) {
  const auto r = aggregate_aligned(cols({{1, 0}, {0, 2}}), Vector{1, 1});
  EXPECT_NEAR(r.alpha[0], 1.0, 1e-12);
  EXPECT_NEAR(r.alpha[1], 0.5, 1e-12);
  EXPECT_NEAR(r.direction[0], 1.0, 1e-12);
  EXPECT_NEAR(r.direction[1], 1.0, 1e-12);
}

TEST(Aligned, AlignedGramIsScaledIdentity) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const GradientMatrix g(random_matrix(rng, 40, 3));
    const Matrix h = naive_gram(aligned_matrix(g).matrix());
    const auto eig = linalg::eigh_sym(naive_gram(g.matrix()));
    const double lambda_r = eig.eigenvalues.back();
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        EXPECT_NEAR(h(a, b), a == b ? lambda_r : 0.0, 1e-6 * lambda_r);
    EXPECT_NEAR(condition_number(aligned_matrix(g)), 1.0, 1e-6);
  }
}

TEST(Aligned, AllZeroThrows) {
  EXPECT_THROW(aggregate_aligned(cols({{0, 0}, {0, 0}}), Vector{1, 1}), Error);
}

// ---- condition number ----

TEST(ConditionNumber, Orthonormal) {
  EXPECT_NEAR(condition_number(cols({{1, 0}, {0, 1}})), 1.0, 1e-14);
}

TEST(ConditionNumber, SingularValueRatio) {
  EXPECT_NEAR(condition_number(cols({{1, 0}, {0, 2}})), 2.0, 1e-14);
}

// ---- DWA ----

TEST(Dwa, FirstEpochsUseOnes) {
  LossHistory h;
  h.per_task = {{1.0}, {2.0}};
  EXPECT_EQ(dwa_weights(h, 2, 2.0), (Vector{1, 1}));
  h.per_task = {{}, {}};
  EXPECT_EQ(dwa_weights(h, 2, 2.0), (Vector{1, 1}));
}

TEST(Dwa, EqualRatiosGiveOnes) {
  LossHistory h;
  h.per_task = {{2.0, 1.0}, {4.0, 2.0}, {1.0, 0.5}};
  const Vector w = dwa_weights(h, 3, 2.0);
  for (double x : w) EXPECT_NEAR(x, 1.0, 1e-15);
}

TEST(Dwa, HandComputedSoftmax) {
  LossHistory h;
  h.per_task = {{1.0, 1.0}, {1.0, 0.5}};
  const Vector w = dwa_weights(h, 2, 2.0);
  const double e1 = std::exp(0.5), e2 = std::exp(0.25);
  EXPECT_NEAR(w[0], 2.0 * e1 / (e1 + e2), 1e-14);
  EXPECT_NEAR(w[1], 2.0 * e2 / (e1 + e2), 1e-14);
  // Commonly quoted as (1.1245, 0.8755); the exact values round to 1.1244 / 0.8756.
  EXPECT_NEAR(w[0], 1.1245, 5e-4);
  EXPECT_NEAR(w[1], 0.8755, 5e-4);
}

TEST(Dwa, WeightsSumToTaskCount) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    LossHistory h;
    for (int t = 0; t < 3; ++t) h.per_task.push_back(testing::random_vector(rng, 4, 0.1, 3.0));
    const Vector w = dwa_weights(h, 3, 2.0);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 3.0, 1e-12);
  }
}

TEST(Dwa, ZeroLossFallsBack) {
  LossHistory h;
  h.per_task = {{1.0, 0.5}, {0.0, 0.5}};
  const auto r = aggregate_dwa(cols({{1, 0}, {0, 1}}), h);
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.alpha, (Vector{1, 1}));
}

// ---- IMTL ----

TEST(Imtl, EqualNormsSplitEvenly) {
  const double c = std::cos(1.1), s = std::sin(1.1);
  const auto r = aggregate_imtl(cols({{2, 0}, {2 * c, 2 * s}}));
  EXPECT_NEAR(r.alpha[0], 0.5, 1e-12);
  EXPECT_NEAR(r.alpha[1], 0.5, 1e-12);
}

TEST(Imtl, OrthogonalNormsOneAndTwo) {
  const auto r = aggregate_imtl(cols({{1, 0}, {0, 2}}));
  EXPECT_NEAR(r.alpha[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.alpha[1], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.direction[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.direction[1], 2.0 / 3.0, 1e-12);
}

TEST(Imtl, EqualProjectionsOnRandomInstances) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const GradientMatrix g(random_matrix(rng, 20, 3));
    const auto r = aggregate_imtl(g);
    ASSERT_FALSE(r.fallback);
    EXPECT_NEAR(std::accumulate(r.alpha.begin(), r.alpha.end(), 0.0), 1.0, 1e-12);
    const Vector norms = g.column_norms();
    Vector proj(3);
    for (std::size_t t = 0; t < 3; ++t) {
      const Vector col = g.matrix().column(t);
      proj[t] = linalg::dot(r.direction, col) / norms[t];
    }
    EXPECT_NEAR(proj[1], proj[0], 1e-8);
    EXPECT_NEAR(proj[2], proj[0], 1e-8);
  }
}

TEST(Imtl, ParallelGradientsFallBack) {
  const auto r = aggregate_imtl(cols({{1, 0}, {2, 0}}));
  EXPECT_TRUE(r.fallback);
}

// ---- dispatch ----

TEST(Dispatch, NamesRoundTrip) {
  for (auto k : {AggregatorKind::kLinear, AggregatorKind::kNash, AggregatorKind::kAligned,
                 AggregatorKind::kDwa, AggregatorKind::kImtl}) {
    EXPECT_EQ(aggregator_from_string(to_string(k)), k);
  }
  EXPECT_THROW(aggregator_from_string("pcgrad"), Error);
}

TEST(Dispatch, DegenerateInputNeverThrows) {
  AggregatorConfig cfg;
  LossHistory h;
  h.per_task = {{}, {}};
  for (auto k : {AggregatorKind::kLinear, AggregatorKind::kNash, AggregatorKind::kAligned,
                 AggregatorKind::kDwa, AggregatorKind::kImtl}) {
    cfg.kind = k;
    const auto r = aggregate(cfg, cols({{0, 0}, {0, 0}}), h);
    EXPECT_EQ(r.alpha.size(), 2u) << to_string(k);
  }
}

}  // namespace
}  // namespace mtlqe::agg
