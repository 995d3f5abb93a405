// SPDX-License-Identifier: Apache-2.0

#include "mtlqe/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "mtlqe/error.hpp"

namespace mtlqe::optim {

std::int64_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::int64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
}

void ScheduleConfig::validate() const {
  if (!(base_lr > 0.0)) throw Error(Errc::kConfigError, "base_lr must be > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw Error(Errc::kConfigError, "warmup_fraction must lie in [0, 1)");
  if (total_steps < 1) throw Error(Errc::kConfigError, "total_steps must be >= 1");
}

double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw std::out_of_range("lr_at: step outside schedule");
  const std::int64_t warmup = cfg.warmup_steps();
  if (step < warmup) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (warmup == cfg.total_steps) return cfg.base_lr;  // no decay phase
  return cfg.base_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - warmup);
}

void adamw_step(std::span<double> block, std::span<const double> grad, AdamWState& state,
                double lr, const AdamWHyper& hyper) {
  if (block.size() != grad.size() || state.m.size() != block.size() ||
      state.v.size() != block.size()) {
    throw std::invalid_argument("adamw_step: shape mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * hyper.weight_decay;
  const double step_size = lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t i = 0; i < block.size(); ++i) {
    const double g = grad[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    block[i] *= decay;
    block[i] -= step_size * state.m[i] / (std::sqrt(state.v[i]) / sqrt_bc2 + hyper.eps);
  }
}

OptimizerState OptimizerState::for_params(const model::Parameters& params) {
  OptimizerState s;
  s.shared = AdamWState(params.shared.size());
  for (std::size_t t = 0; t < model::kNumTasks; ++t) s.heads[t] = AdamWState(params.heads[t].size());
  return s;
}

StepDiagnostics mtl_step(model::Parameters& params, const model::TaskGradients& grads,
                         const agg::AggregatorConfig& aggregator, const agg::LossHistory& history,
                         OptimizerState& state, double lr, const AdamWHyper& hyper) {
  // Weights are computed on the raw gradients; AdamW preconditions afterwards.
  agg::AggregationResult r = agg::aggregate(aggregator, grads.matrix(), history);
  adamw_step(params.shared, r.direction, state.shared, lr, hyper);
  for (model::Task t : grads.tasks) {
    const auto i = static_cast<std::size_t>(t);
    adamw_step(params.heads[i], grads.heads[i], state.heads[i], lr, hyper);
  }
  return {std::move(r.alpha), r.condition_number, r.residual, r.fallback,
          std::move(r.fallback_reason), lr};
}

}  // namespace mtlqe::optim
