#include "dslu/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dslu {

OptimizerState make_optimizer_state(std::span<const Tensor> params, const AdamConfig& config) {
  OptimizerState st;
  st.config = config;
  for (const auto& p : params) {
    st.first_moment.emplace_back(p.numel(), 0.0);
    st.second_moment.emplace_back(p.numel(), 0.0);
  }
  return st;
}

double learning_rate(const AdamConfig& config, std::uint64_t step) {
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  const double w = static_cast<double>(std::max<std::uint64_t>(config.warmup_steps, 1));
  return config.peak_lr * std::min(s / w, std::sqrt(w / s));
}

void optimizer_step(std::span<Tensor> params, OptimizerState& state) {
  if (params.size() != state.first_moment.size())
    throw std::invalid_argument("optimizer_step: " + std::to_string(params.size()) +
                                " parameters for state with " +
                                std::to_string(state.first_moment.size()) + " buffers");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad() || params[i].grad().size() != params[i].numel())
      throw std::invalid_argument("optimizer_step: parameter " + std::to_string(i) +
                                  " has no gradient");
    if (state.first_moment[i].size() != params[i].numel())
      throw DimensionError("optimizer_step: moment buffer size mismatch for parameter " +
                           std::to_string(i));
  }
  const AdamConfig& c = state.config;
  const std::uint64_t t = ++state.step;
  const double lr = learning_rate(c, t);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto g = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.grad()) g *= s;
  }
  return norm;
}

}  // namespace dslu
