#include "rwd/nn/adamw.hpp"

#include <cmath>
#include <string>

#include "rwd/error.hpp"
#include "rwd/nn/tensor.hpp"

namespace rwd::nn {

OptimizerState make_optimizer_state(std::span<const std::span<double>> params,
                                    const AdamWConfig& config) {
  if (!(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 && config.beta2 < 1.0)) {
    throw ContractViolation("adamw: beta1 and beta2 must lie in (0, 1)");
  }
  OptimizerState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ContractViolation("adamw: parameter/gradient/state group count mismatch");
  }
  for (std::size_t g = 0; g < params.size(); ++g) {
    if (params[g].size() != grads[g].size() || params[g].size() != state.first_moment[g].size()) {
      throw ContractViolation("adamw: group " + std::to_string(g) + " shape mismatch");
    }
    if (!all_finite(grads[g])) {
      throw NumericError("adamw: non-finite gradient in group " + std::to_string(g));
    }
  }

  const AdamWConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double decay = c.lr * c.weight_decay;
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto p = params[g];
    auto gr = grads[g];
    auto& m = state.first_moment[g];
    auto& v = state.second_moment[g];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gr[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gr[k] * gr[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      double theta = p[k] - c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
      theta -= decay * theta;
      p[k] = theta;
    }
  }
}

}  // namespace rwd::nn
