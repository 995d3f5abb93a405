// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mtlqe/error.hpp"

namespace mtlqe::agg {

namespace {

constexpr double kZeroNorm = 1e-18;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector ones(std::size_t n) { return Vector(n, 1.0); }

Vector resolve_importance(std::span<const double> importance, std::size_t t) {
  if (importance.empty()) return ones(t);
  if (importance.size() != t) {
    throw Error(Errc::kConfigError, "task importance length does not match task count");
  }
  bool any_positive = false;
  for (double w : importance) {
    if (!(w >= 0.0)) throw Error(Errc::kConfigError, "task importance entries must be >= 0");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw Error(Errc::kConfigError, "task importance needs a positive entry");
  return Vector(importance.begin(), importance.end());
}

// Condition number of the raw system, NaN when every gradient is zero.
double safe_condition_number(const GradientMatrix& g, double rank_tol) {
  try {
    return condition_number(g, rank_tol);
  } catch (const Error&) {
    return kNaN;
  }
}

AggregationResult make_fallback(const GradientMatrix& g, std::string reason, double rank_tol) {
  AggregationResult r = aggregate_linear(g, {});
  r.fallback = true;
  r.fallback_reason = std::move(reason);
  r.condition_number = safe_condition_number(g, rank_tol);
  return r;
}

double nash_residual(const Matrix& m, std::span<const double> alpha, Vector& m_alpha) {
  m_alpha = linalg::multiply(m, alpha);
  double r = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    r = std::max(r, std::abs(m_alpha[i] - 1.0 / alpha[i]));
  }
  return r;
}

// Potential whose stationary point is M alpha = 1/alpha.
double nash_potential(const Matrix& m, std::span<const double> alpha) {
  const Vector ma = linalg::multiply(m, alpha);
  double f = 0.5 * linalg::dot(alpha, ma);
  for (double a : alpha) f -= std::log(a);
  return f;
}

}  // namespace

GradientMatrix::GradientMatrix(Matrix g) : g_(std::move(g)) {
  for (std::size_t c = 0; c < g_.cols(); ++c) {
    bool all_nan = true;
    for (std::size_t r = 0; r < g_.rows() && all_nan; ++r) all_nan = std::isnan(g_(r, c));
    if (all_nan) throw std::invalid_argument("gradient column is all NaN");
  }
}

GradientMatrix GradientMatrix::from_columns(std::span<const Vector> columns) {
  return GradientMatrix(Matrix::from_columns(columns));
}

Vector GradientMatrix::combine(std::span<const double> alpha) const {
  return linalg::multiply(g_, alpha);
}

Vector GradientMatrix::column_norms() const {
  const Matrix m = linalg::gram(g_);
  Vector out(num_tasks());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(m(i, i));
  return out;
}

std::string_view to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kLinear: return "linear";
    case AggregatorKind::kNash: return "nash";
    case AggregatorKind::kAligned: return "aligned";
    case AggregatorKind::kDwa: return "dwa";
    case AggregatorKind::kImtl: return "imtl";
  }
  return "unknown";
}

AggregatorKind aggregator_from_string(std::string_view name) {
  for (auto kind : {AggregatorKind::kLinear, AggregatorKind::kNash, AggregatorKind::kAligned,
                    AggregatorKind::kDwa, AggregatorKind::kImtl}) {
    if (to_string(kind) == name) return kind;
  }
  throw Error(Errc::kConfigError, "unknown aggregator '" + std::string(name) + "'");
}

AggregationResult aggregate_linear(const GradientMatrix& g, std::span<const double> importance) {
  AggregationResult r;
  r.alpha = resolve_importance(importance, g.num_tasks());
  r.direction = g.combine(r.alpha);
  return r;
}

NashSolution solve_nash(const Matrix& m, const NashSolverConfig& cfg) {
  if (m.rows() != m.cols()) throw std::invalid_argument("solve_nash: matrix not square");
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1 || !(cfg.damping > 0.0) || cfg.damping > 1.0) {
    throw Error(Errc::kConfigError, "invalid Nash solver configuration");
  }
  const std::size_t t = m.rows();
  for (std::size_t i = 0; i < t; ++i) {
    if (!(m(i, i) > kZeroNorm)) {
      throw Error(Errc::kZeroGradientTask, "task " + std::to_string(i) + " has a zero gradient");
    }
  }

  NashSolution sol;
  sol.alpha.resize(t);
  for (std::size_t i = 0; i < t; ++i) {
    sol.alpha[i] = 1.0 / std::sqrt(static_cast<double>(t) * m(i, i));
  }

  const double gamma = cfg.damping;
  Vector m_alpha;
  bool stalled = false;
  for (; sol.iterations < cfg.max_iter; ++sol.iterations) {
    sol.residual = nash_residual(m, sol.alpha, m_alpha);
    if (sol.residual <= cfg.tol) return sol;
    Vector next(t);
    for (std::size_t i = 0; i < t; ++i) {
      // Conflicting gradients can push (M alpha)_i to zero or below, where
      // the reciprocal map leaves the positive orthant.
      if (!(m_alpha[i] > 0.0)) {
        stalled = true;
        break;
      }
      next[i] = (1.0 - gamma) * sol.alpha[i] + gamma / m_alpha[i];
    }
    if (stalled) break;
    sol.alpha = std::move(next);
  }
  sol.residual = nash_residual(m, sol.alpha, m_alpha);
  if (sol.residual <= cfg.tol) return sol;

  // Newton polish on the strictly convex potential
  //   f(alpha) = 0.5 alpha^T M alpha - sum log alpha_i,
  // whose gradient is M alpha - 1/alpha and Hessian M + diag(1/alpha^2).
  sol.newton_polished = true;
  for (int it = 0; it < cfg.max_iter; ++it) {
    Vector grad(t);
    for (std::size_t i = 0; i < t; ++i) grad[i] = m_alpha[i] - 1.0 / sol.alpha[i];
    Matrix hess = m;
    for (std::size_t i = 0; i < t; ++i) hess(i, i) += 1.0 / (sol.alpha[i] * sol.alpha[i]);
    Vector step;
    try {
      step = linalg::solve_spd(hess, grad);
    } catch (const Error&) {
      break;
    }
    const double f0 = nash_potential(m, sol.alpha);
    const double slope = -linalg::dot(grad, step);
    double s = 1.0;
    Vector trial(t);
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, s *= 0.5) {
      bool positive = true;
      for (std::size_t i = 0; i < t; ++i) {
        trial[i] = sol.alpha[i] - s * step[i];
        positive = positive && trial[i] > 0.0;
      }
      if (!positive) continue;
      if (nash_potential(m, trial) <= f0 + 1e-4 * s * slope || s < 1e-6) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    sol.alpha = trial;
    ++sol.iterations;
    sol.residual = nash_residual(m, sol.alpha, m_alpha);
    if (sol.residual <= cfg.tol) return sol;
  }
  throw Error(Errc::kNoConvergence,
              "Nash residual " + std::to_string(sol.residual) + " above tolerance");
}

AggregationResult aggregate_nash(const GradientMatrix& g, const NashSolverConfig& cfg) {
  const Matrix m = linalg::gram(g.matrix());
  try {
    NashSolution sol = solve_nash(m, cfg);
    AggregationResult r;
    r.direction = g.combine(sol.alpha);
    r.alpha = std::move(sol.alpha);
    r.residual = sol.residual;
    r.condition_number = safe_condition_number(g, 1e-10);
    return r;
  } catch (const Error& e) {
    if (e.code() == Errc::kConfigError) throw;
    return make_fallback(g, std::string(to_string(e.code())), 1e-10);
  }
}

namespace {

struct AlignedTransform {
  Matrix b;
  double lambda_r = 0.0;
};

AlignedTransform aligned_transform(const Matrix& m, double rank_tol) {
  const std::size_t t = m.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < t; ++i) max_diag = std::max(max_diag, m(i, i));
  if (!(std::sqrt(max_diag) > kZeroNorm)) {
    throw Error(Errc::kAllZeroGradients, "every task gradient is zero");
  }
  const linalg::SymEigen eig = linalg::eigh_sym(m);
  const double lambda_1 = eig.eigenvalues.front();
  std::size_t retained = 0;
  while (retained < t && eig.eigenvalues[retained] > rank_tol * lambda_1) ++retained;

  AlignedTransform out{Matrix(t, t), eig.eigenvalues[retained - 1]};
  const double sigma = std::sqrt(out.lambda_r);
  for (std::size_t k = 0; k < retained; ++k) {
    const double scale = sigma / std::sqrt(eig.eigenvalues[k]);
    for (std::size_t i = 0; i < t; ++i) {
      const double vik = eig.eigenvectors(i, k) * scale;
      for (std::size_t j = 0; j < t; ++j) out.b(i, j) += vik * eig.eigenvectors(j, k);
    }
  }
  return out;
}

}  // namespace

AggregationResult aggregate_aligned(const GradientMatrix& g, std::span<const double> importance,
                                    double rank_tol) {
  const Vector w = resolve_importance(importance, g.num_tasks());
  const Matrix m = linalg::gram(g.matrix());
  const AlignedTransform tr = aligned_transform(m, rank_tol);
  AggregationResult r;
  r.alpha = linalg::multiply(tr.b, w);
  r.direction = g.combine(r.alpha);
  r.condition_number = condition_number(g, rank_tol);
  return r;
}

GradientMatrix aligned_matrix(const GradientMatrix& g, double rank_tol) {
  const AlignedTransform tr = aligned_transform(linalg::gram(g.matrix()), rank_tol);
  return GradientMatrix(linalg::multiply(g.matrix(), tr.b));
}

Vector dwa_weights(const LossHistory& history, std::size_t num_tasks, double temperature) {
  if (!(temperature > 0.0)) throw Error(Errc::kConfigError, "DWA temperature must be > 0");
  const std::size_t epochs = history.completed_epochs();
  if (epochs < 2) return ones(num_tasks);
  if (history.per_task.size() != num_tasks) {
    throw std::invalid_argument("loss history task count does not match gradient matrix");
  }
  Vector ratio(num_tasks);
  for (std::size_t i = 0; i < num_tasks; ++i) {
    const Vector& l = history.per_task[i];
    if (l.size() != epochs) throw std::invalid_argument("loss history lengths differ across tasks");
    const double prev = l[epochs - 2];
    if (!(prev > kZeroNorm)) throw Error(Errc::kZeroLoss, "zero loss in reference epoch");
    ratio[i] = l[epochs - 1] / prev;
  }
  const double top = *std::max_element(ratio.begin(), ratio.end());
  Vector alpha(num_tasks);
  double z = 0.0;
  for (std::size_t i = 0; i < num_tasks; ++i) {
    alpha[i] = std::exp((ratio[i] - top) / temperature);
    z += alpha[i];
  }
  for (double& a : alpha) a *= static_cast<double>(num_tasks) / z;
  return alpha;
}

AggregationResult aggregate_dwa(const GradientMatrix& g, const LossHistory& history,
                                double temperature) {
  AggregationResult r;
  try {
    r.alpha = dwa_weights(history, g.num_tasks(), temperature);
  } catch (const Error& e) {
    if (e.code() != Errc::kZeroLoss) throw;
    return make_fallback(g, std::string(to_string(e.code())), 1e-10);
  }
  r.direction = g.combine(r.alpha);
  r.condition_number = safe_condition_number(g, 1e-10);
  return r;
}

AggregationResult aggregate_imtl(const GradientMatrix& g) {
  const std::size_t t = g.num_tasks();
  const Matrix m = linalg::gram(g.matrix());
  Vector norm(t);
  for (std::size_t i = 0; i < t; ++i) {
    norm[i] = std::sqrt(m(i, i));
    if (!(norm[i] > kZeroNorm)) return make_fallback(g, "ZeroGradientTask", 1e-10);
  }

  AggregationResult r;
  r.alpha.assign(t, 1.0);
  if (t > 1) {
    // Unknowns alpha_1..alpha_{T-1}; alpha_0 = 1 - sum. Row k enforces
    //   (G alpha) . (u_0 - u_k) = 0,  with G alpha = g_0 + sum_j alpha_j (g_j - g_0).
    // g_a . u_b = M_ab / |g_b|.
    auto proj = [&](std::size_t a, std::size_t b) { return m(a, b) / norm[b]; };
    const std::size_t n = t - 1;
    Matrix a(n, n);
    Vector rhs(n);
    for (std::size_t k = 1; k < t; ++k) {
      rhs[k - 1] = -(proj(0, 0) - proj(0, k));
      for (std::size_t j = 1; j < t; ++j) {
        a(k - 1, j - 1) = (proj(j, 0) - proj(j, k)) - (proj(0, 0) - proj(0, k));
      }
    }
    Vector rest;
    try {
      rest = linalg::solve_general(a, rhs, 1e-10);
    } catch (const Error&) {
      return make_fallback(g, "DegenerateSystem", 1e-10);
    }
    double sum = 0.0;
    for (std::size_t j = 1; j < t; ++j) {
      r.alpha[j] = rest[j - 1];
      sum += rest[j - 1];
    }
    r.alpha[0] = 1.0 - sum;
  }
  r.direction = g.combine(r.alpha);
  r.condition_number = safe_condition_number(g, 1e-10);
  return r;
}

double condition_number(const GradientMatrix& g, double rank_tol) {
  const Matrix m = linalg::gram(g.matrix());
  double max_diag = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) max_diag = std::max(max_diag, m(i, i));
  if (!(std::sqrt(max_diag) > kZeroNorm)) {
    throw Error(Errc::kAllZeroGradients, "every task gradient is zero");
  }
  const linalg::SymEigen eig = linalg::eigh_sym(m);
  const double lambda_1 = eig.eigenvalues.front();
  double lambda_min = lambda_1;
  for (double l : eig.eigenvalues) {
    if (l > rank_tol * lambda_1) lambda_min = l;
  }
  return std::sqrt(lambda_1 / lambda_min);
}

AggregationResult aggregate(const AggregatorConfig& cfg, const GradientMatrix& g,
                            const LossHistory& history) {
  switch (cfg.kind) {
    case AggregatorKind::kLinear: {
      AggregationResult r = aggregate_linear(g, cfg.importance);
      r.condition_number = safe_condition_number(g, cfg.rank_tol);
      return r;
    }
    case AggregatorKind::kNash:
      return aggregate_nash(g, cfg.nash);
    case AggregatorKind::kAligned:
      try {
        return aggregate_aligned(g, cfg.importance, cfg.rank_tol);
      } catch (const Error& e) {
        if (e.code() != Errc::kAllZeroGradients) throw;
        return make_fallback(g, std::string(to_string(e.code())), cfg.rank_tol);
      }
    case AggregatorKind::kDwa:
      return aggregate_dwa(g, history, cfg.dwa_temperature);
    case AggregatorKind::kImtl:
      return aggregate_imtl(g);
  }
  throw std::logic_error("unhandled aggregator kind");
}

}  // namespace mtlqe::agg
