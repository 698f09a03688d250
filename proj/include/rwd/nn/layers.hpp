#pragma once

#include <span>
#include <vector>

#include "rwd/nn/tensor.hpp"
#include "rwd/rng.hpp"

namespace rwd::nn {

inline constexpr double kDefaultLeakySlope = 0.01;
inline constexpr double kDefaultLayerNormEps = 1e-5;

enum class Activation { kNone, kLeakyRelu };

struct LayerSpec {
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  bool has_layernorm = false;
  bool has_film = false;
  Activation activation = Activation::kNone;
  double leaky_slope = kDefaultLeakySlope;
  double layernorm_eps = kDefaultLayerNormEps;

  /// Throws ContractViolation on zero widths or a slope outside (0, 1).
  void validate() const;
};

/// y = x W^T + b, with W stored out_width x in_width.
struct Linear {
  Tensor2 weight;
  std::vector<double> bias;

  std::size_t in_width() const noexcept { return weight.cols(); }
  std::size_t out_width() const noexcept { return weight.rows(); }
};

Tensor2 linear_forward(const Linear& layer, const Tensor2& input);

/// Accumulates dW and db into `grad`; writes dX into `grad_in` when non-null.
void linear_backward(const Linear& layer, const Tensor2& input, const Tensor2& grad_out,
                     Linear& grad, Tensor2* grad_in);

struct LayerNormCache {
  Tensor2 normalized;  // pre-affine
  std::vector<double> inv_std;
  std::vector<double> mean;
  std::vector<double> variance;
};

Tensor2 layernorm_forward(const Tensor2& input, std::span<const double> gain,
                          std::span<const double> shift, double eps,
                          LayerNormCache* cache = nullptr);

/// Returns dX; accumulates into grad_gain / grad_shift.
Tensor2 layernorm_backward(const LayerNormCache& cache, std::span<const double> gain,
                           const Tensor2& grad_out, std::span<double> grad_gain,
                           std::span<double> grad_shift);

/// Feature-wise affine modulation gamma (.) x + beta for one conditioning vector.
struct FilmParams {
  std::vector<double> gamma;
  std::vector<double> beta;
};

Tensor2 film_forward(const Tensor2& input, const FilmParams& film);

/// FiLM coefficients materialized per input row (each row may carry a
/// different goal).
struct RowModulation {
  Tensor2 gamma;
  Tensor2 beta;
};

Tensor2 film_forward(const Tensor2& input, const RowModulation& mod);

/// Writes dX into grad_in and accumulates d(gamma), d(beta) into grad_mod.
void film_backward(const Tensor2& input, const RowModulation& mod, const Tensor2& grad_out,
                   Tensor2& grad_in, RowModulation& grad_mod);

Tensor2 leaky_relu_forward(const Tensor2& input, double slope);

/// The subgradient at exactly zero is taken from the positive branch.
Tensor2 leaky_relu_backward(const Tensor2& pre_activation, const Tensor2& grad_out, double slope);

/// linear -> [layernorm gain/shift] -> [FiLM] -> [activation]
struct DenseLayer {
  LayerSpec spec;
  Linear linear;
  std::vector<double> ln_gain;
  std::vector<double> ln_shift;
};

/// Glorot-uniform weights, zero biases, unit LayerNorm gain and zero shift.
DenseLayer make_dense_layer(const LayerSpec& spec, Rng& rng);

/// Same shapes as `layer`, every entry zero. Used as a gradient accumulator.
DenseLayer zeros_like(const DenseLayer& layer);

/// Trainable tensors of a layer in a fixed order (weight, bias, gain, shift).
std::vector<std::span<double>> parameter_groups(DenseLayer& layer);
std::vector<std::span<const double>> parameter_groups(const DenseLayer& layer);

struct DenseCache {
  Tensor2 input;
  LayerNormCache layernorm;
  Tensor2 film_input;
  Tensor2 pre_activation;
};

struct StackCache {
  std::vector<DenseCache> layers;
};

/// Runs the layers in order. `modulation` holds one entry per layer with
/// has_film set, in layer order.
Tensor2 stack_forward(std::span<const DenseLayer> layers, const Tensor2& input,
                      std::span<const RowModulation> modulation, StackCache* cache = nullptr);

/// Reverse pass over a cached forward. Parameter gradients are accumulated
/// into `layer_grads`, FiLM gradients into `modulation_grads` (both shaped like
/// their forward counterparts). dX is written to `grad_in` when non-null.
void stack_backward(std::span<const DenseLayer> layers, const StackCache& cache,
                    std::span<const RowModulation> modulation, const Tensor2& grad_out,
                    std::span<DenseLayer> layer_grads,
                    std::span<RowModulation> modulation_grads, Tensor2* grad_in);

}  // namespace rwd::nn
