// SPDX-License-Identifier: Apache-2.0
//
// AdamW with a linear warmup / linear decay schedule, and the multi-task
// step that feeds an aggregated shared direction through it.

#ifndef MTLQE_OPTIM_HPP_
#define MTLQE_OPTIM_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "mtlqe/aggregators.hpp"
#include "mtlqe/model.hpp"

namespace mtlqe::optim {

using linalg::Vector;

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  Vector m;
  Vector v;
  std::int64_t step = 0;

  explicit AdamWState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct ScheduleConfig {
  double base_lr = 1e-3;
  double warmup_fraction = 0.1;
  std::int64_t total_steps = 1;

  std::int64_t warmup_steps() const;
  void validate() const;
};

// 0 -> base_lr over the warmup steps, then linearly back to 0 at total_steps.
double lr_at(std::int64_t step, const ScheduleConfig& cfg);

// Decoupled weight decay, then the bias-corrected Adam update.
void adamw_step(std::span<double> block, std::span<const double> grad, AdamWState& state,
                double lr, const AdamWHyper& hyper);

struct OptimizerState {
  AdamWState shared;
  std::array<AdamWState, model::kNumTasks> heads;

  static OptimizerState for_params(const model::Parameters& params);
};

struct StepDiagnostics {
  Vector alpha;  // in enabled-task order
  double condition_number = 0.0;
  double residual = 0.0;
  bool fallback = false;
  std::string fallback_reason;
  double lr = 0.0;
};

// Aggregates the shared-gradient columns, steps the shared block with the
// aggregated direction and each enabled head with its own task gradient.
StepDiagnostics mtl_step(model::Parameters& params, const model::TaskGradients& grads,
                         const agg::AggregatorConfig& aggregator, const agg::LossHistory& history,
                         OptimizerState& state, double lr, const AdamWHyper& hyper);

}  // namespace mtlqe::optim

#endif  // MTLQE_OPTIM_HPP_
