// SPDX-License-Identifier: Apache-2.0
//
// Loss-combination heuristics over per-task shared-parameter gradients.
//
// Every aggregator maps a gradient matrix G (one column per task) to task
// weights alpha and the combined direction G * alpha. The direction is the
// unscaled descent direction; the learning rate is applied by the optimizer.

#ifndef MTLQE_AGGREGATORS_HPP_
#define MTLQE_AGGREGATORS_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtlqe/linalg.hpp"

namespace mtlqe::agg {

using linalg::Matrix;
using linalg::Vector;

// |theta_shared| x T matrix, column i is the gradient of task i.
class GradientMatrix {
 public:
  explicit GradientMatrix(Matrix g);
  static GradientMatrix from_columns(std::span<const Vector> columns);

  std::size_t num_tasks() const noexcept { return g_.cols(); }
  std::size_t num_params() const noexcept { return g_.rows(); }
  const Matrix& matrix() const noexcept { return g_; }

  Vector combine(std::span<const double> alpha) const;
  Vector column_norms() const;

 private:
  Matrix g_;
};

struct NashSolverConfig {
  double tol = 1e-8;
  int max_iter = 200;
  double damping = 0.5;
};

struct NashSolution {
  Vector alpha;
  double residual = 0.0;  // ||M alpha - 1/alpha||_inf
  int iterations = 0;
  // Set when the damped fixed-point iteration stalled and the Newton
  // polish on the convex potential finished the solve.
  bool newton_polished = false;
};

// Per task, the mean training loss of each completed epoch.
struct LossHistory {
  std::vector<Vector> per_task;
  std::size_t completed_epochs() const { return per_task.empty() ? 0 : per_task.front().size(); }
};

struct AggregationResult {
  Vector direction;
  Vector alpha;
  double residual = 0.0;
  // sqrt(lambda_max / lambda_min+) of the raw gradient system; NaN when undefined.
  double condition_number = 0.0;
  bool fallback = false;
  std::string fallback_reason;
};

enum class AggregatorKind { kLinear, kNash, kAligned, kDwa, kImtl };

std::string_view to_string(AggregatorKind kind);
AggregatorKind aggregator_from_string(std::string_view name);

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::kLinear;
  NashSolverConfig nash;
  double rank_tol = 1e-10;
  double dwa_temperature = 2.0;
  Vector importance;  // empty means all ones
};

AggregationResult aggregate_linear(const GradientMatrix& g, std::span<const double> importance);

// Solves M alpha = 1/alpha, alpha > 0.
// Throws Errc::kZeroGradientTask if some M_ii <= 1e-18 and
// Errc::kNoConvergence if the residual stays above cfg.tol.
NashSolution solve_nash(const Matrix& m, const NashSolverConfig& cfg = {});

// On solver failure returns the all-ones linear combination with fallback set.
AggregationResult aggregate_nash(const GradientMatrix& g, const NashSolverConfig& cfg = {});

// Throws Errc::kAllZeroGradients when every column norm is <= 1e-18.
AggregationResult aggregate_aligned(const GradientMatrix& g, std::span<const double> importance,
                                    double rank_tol = 1e-10);

// Throws Errc::kConfigError for a non-positive temperature. A zero loss in
// the reference epoch falls back to all-ones weights.
AggregationResult aggregate_dwa(const GradientMatrix& g, const LossHistory& history,
                                double temperature = 2.0);

// IMTL-G. Zero-norm tasks or a singular balancing system fall back to linear.
AggregationResult aggregate_imtl(const GradientMatrix& g);

// Throws Errc::kAllZeroGradients.
double condition_number(const GradientMatrix& g, double rank_tol = 1e-10);

// The aligned matrix G * B from the same construction used by aggregate_aligned.
GradientMatrix aligned_matrix(const GradientMatrix& g, double rank_tol = 1e-10);

// DWA weights alone: all ones until two epochs are complete.
Vector dwa_weights(const LossHistory& history, std::size_t num_tasks, double temperature);

// Dispatches on cfg.kind; never throws for numerical degeneracy, which is
// reported through AggregationResult::fallback instead.
AggregationResult aggregate(const AggregatorConfig& cfg, const GradientMatrix& g,
                            const LossHistory& history);

}  // namespace mtlqe::agg

#endif  // MTLQE_AGGREGATORS_HPP_
