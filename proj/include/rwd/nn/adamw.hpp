#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace rwd::nn {

struct AdamWConfig {
  double lr = 3e-4;
  double weight_decay = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moments plus the hyperparameters they were accumulated under.
/// Moment groups mirror the parameter groups passed to adamw_step.
struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

OptimizerState make_optimizer_state(std::span<const std::span<double>> params,
                                    const AdamWConfig& config);

/// Bias-corrected Adam step followed by decoupled decay theta -= lr*wd*theta.
/// Non-finite gradients raise NumericError before anything is modified.
void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, OptimizerState& state);

}  // namespace rwd::nn
