#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dslu/tensor.hpp"

namespace dslu {

// Adam with linear warmup to `peak_lr` followed by inverse-square-root decay.
struct AdamConfig {
  double peak_lr = 2e-3;
  std::uint64_t warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

OptimizerState make_optimizer_state(std::span<const Tensor> params, const AdamConfig& config);

// Rate used for update number `step` (1-based).
double learning_rate(const AdamConfig& config, std::uint64_t step);

// Applies one update in place and advances the step counter. Throws if a
// parameter has no gradient buffer or its shape disagrees with the state.
void optimizer_step(std::span<Tensor> params, OptimizerState& state);

// Scales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace dslu
