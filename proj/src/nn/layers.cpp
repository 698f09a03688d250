#include "rwd/nn/layers.hpp"

#include <cmath>
#include <string>

#include "rwd/error.hpp"

namespace rwd::nn {
namespace {

void require_width(std::size_t expected, std::size_t found, const char* what) {
  if (expected != found) {
    throw DimensionError(std::string(what) + ": expected width " + std::to_string(expected) +
                         ", found " + std::to_string(found));
  }
}

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape " + a.shape() + " vs " + b.shape());
  }
}

}  // namespace

void LayerSpec::validate() const {
  if (in_width == 0 || out_width == 0) throw ContractViolation("layer widths must be positive");
  if (activation == Activation::kLeakyRelu && !(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw ContractViolation("leaky slope must lie in (0, 1)");
  }
  if (!(layernorm_eps >= 0.0)) throw ContractViolation("layernorm eps must be non-negative");
}

Tensor2 linear_forward(const Linear& layer, const Tensor2& input) {
  if (input.cols() != layer.in_width() || layer.bias.size() != layer.out_width()) {
    throw DimensionError("linear: input " + input.shape() + " vs weight " +
                         layer.weight.shape() + " (bias " + std::to_string(layer.bias.size()) +
                         ")");
  }
  const std::size_t n_out = layer.out_width();
  const std::size_t n_in = layer.in_width();
  Tensor2 out(input.rows(), n_out);
  for (std::size_t i = 0; i < input.rows(); ++i) {
    const double* x = input.row(i).data();
    double* y = out.row(i).data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* w = layer.weight.row(o).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < n_in; ++k) acc += x[k] * w[k];
      y[o] = acc + layer.bias[o];
    }
  }
  return out;
}

void linear_backward(const Linear& layer, const Tensor2& input, const Tensor2& grad_out,
                     Linear& grad, Tensor2* grad_in) {
  const std::size_t n_out = layer.out_width();
  const std::size_t n_in = layer.in_width();
  require_width(n_in, input.cols(), "linear_backward input");
  require_width(n_out, grad_out.cols(), "linear_backward grad_out");
  if (input.rows() != grad_out.rows()) throw ContractViolation("linear_backward: row mismatch");
  if (grad.weight.rows() != n_out || grad.weight.cols() != n_in || grad.bias.size() != n_out) {
    throw ContractViolation("linear_backward: gradient accumulator shape mismatch");
  }
  for (std::size_t i = 0; i < input.rows(); ++i) {
    const double* x = input.row(i).data();
    const double* gy = grad_out.row(i).data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double g = gy[o];
      if (g == 0.0) continue;
      double* gw = grad.weight.row(o).data();
      for (std::size_t k = 0; k < n_in; ++k) gw[k] += g * x[k];
      grad.bias[o] += g;
    }
  }
  if (grad_in != nullptr) {
    *grad_in = Tensor2(input.rows(), n_in);
    for (std::size_t i = 0; i < input.rows(); ++i) {
      const double* gy = grad_out.row(i).data();
      double* gx = grad_in->row(i).data();
      for (std::size_t o = 0; o < n_out; ++o) {
        const double g = gy[o];
        if (g == 0.0) continue;
        const double* w = layer.weight.row(o).data();
        for (std::size_t k = 0; k < n_in; ++k) gx[k] += g * w[k];
      }
    }
  }
}

Tensor2 layernorm_forward(const Tensor2& input, std::span<const double> gain,
                          std::span<const double> shift, double eps, LayerNormCache* cache) {
  require_width(input.cols(), gain.size(), "layernorm gain");
  require_width(input.cols(), shift.size(), "layernorm shift");
  if (!input.all_finite()) throw NumericError("layernorm: non-finite input " + input.shape());
  const std::size_t n = input.cols();
  Tensor2 out(input.rows(), n);
  if (cache != nullptr) {
    cache->normalized = Tensor2(input.rows(), n);
    cache->inv_std.assign(input.rows(), 0.0);
    cache->mean.assign(input.rows(), 0.0);
    cache->variance.assign(input.rows(), 0.0);
  }
  for (std::size_t i = 0; i < input.rows(); ++i) {
    auto x = input.row(i);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    if (!std::isfinite(inv)) {
      throw NumericError("layernorm: zero variance row with eps = 0");
    }
    auto y = out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (x[j] - mean) * inv;
      if (cache != nullptr) cache->normalized(i, j) = xhat;
      y[j] = gain[j] * xhat + shift[j];
    }
    if (cache != nullptr) {
      cache->inv_std[i] = inv;
      cache->mean[i] = mean;
      cache->variance[i] = var;
    }
  }
  return out;
}

Tensor2 layernorm_backward(const LayerNormCache& cache, std::span<const double> gain,
                           const Tensor2& grad_out, std::span<double> grad_gain,
                           std::span<double> grad_shift) {
  const Tensor2& xhat = cache.normalized;
  require_same_shape(xhat, grad_out, "layernorm_backward");
  require_width(xhat.cols(), gain.size(), "layernorm_backward gain");
  require_width(xhat.cols(), grad_gain.size(), "layernorm_backward grad_gain");
  require_width(xhat.cols(), grad_shift.size(), "layernorm_backward grad_shift");
  const std::size_t n = xhat.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor2 grad_in(xhat.rows(), n);
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < xhat.rows(); ++i) {
    auto xh = xhat.row(i);
    auto gy = grad_out.row(i);
    double sum_d = 0.0;
    double sum_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      grad_gain[j] += gy[j] * xh[j];
      grad_shift[j] += gy[j];
      dxhat[j] = gy[j] * gain[j];
      sum_d += dxhat[j];
      sum_dx += dxhat[j] * xh[j];
    }
    const double mean_d = sum_d * inv_n;
    const double mean_dx = sum_dx * inv_n;
    auto gx = grad_in.row(i);
    const double inv = cache.inv_std[i];
    for (std::size_t j = 0; j < n; ++j) gx[j] = inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
  }
  return grad_in;
}

Tensor2 film_forward(const Tensor2& input, const FilmParams& film) {
  require_width(input.cols(), film.gamma.size(), "film gamma");
  require_width(input.cols(), film.beta.size(), "film beta");
  Tensor2 out(input.rows(), input.cols());
  for (std::size_t i = 0; i < input.rows(); ++i) {
    auto x = input.row(i);
    auto y = out.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) y[j] = film.gamma[j] * x[j] + film.beta[j];
  }
  return out;
}

Tensor2 film_forward(const Tensor2& input, const RowModulation& mod) {
  require_same_shape(input, mod.gamma, "film gamma");
  require_same_shape(input, mod.beta, "film beta");
  Tensor2 out(input.rows(), input.cols());
  auto x = input.values();
  auto g = mod.gamma.values();
  auto b = mod.beta.values();
  auto y = out.values();
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = g[k] * x[k] + b[k];
  return out;
}

void film_backward(const Tensor2& input, const RowModulation& mod, const Tensor2& grad_out,
                   Tensor2& grad_in, RowModulation& grad_mod) {
  require_same_shape(input, grad_out, "film_backward");
  require_same_shape(input, mod.gamma, "film_backward gamma");
  require_same_shape(input, grad_mod.gamma, "film_backward grad gamma");
  require_same_shape(input, grad_mod.beta, "film_backward grad beta");
  grad_in = Tensor2(input.rows(), input.cols());
  auto x = input.values();
  auto g = mod.gamma.values();
  auto gy = grad_out.values();
  auto gx = grad_in.values();
  auto dg = grad_mod.gamma.values();
  auto db = grad_mod.beta.values();
  for (std::size_t k = 0; k < x.size(); ++k) {
    gx[k] = gy[k] * g[k];
    dg[k] += gy[k] * x[k];
    db[k] += gy[k];
  }
}

Tensor2 leaky_relu_forward(const Tensor2& input, double slope) {
  Tensor2 out(input.rows(), input.cols());
  auto x = input.values();
  auto y = out.values();
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] >= 0.0 ? x[k] : slope * x[k];
  return out;
}

Tensor2 leaky_relu_backward(const Tensor2& pre_activation, const Tensor2& grad_out, double slope) {
  require_same_shape(pre_activation, grad_out, "leaky_relu_backward");
  Tensor2 grad_in(grad_out.rows(), grad_out.cols());
  auto x = pre_activation.values();
  auto gy = grad_out.values();
  auto gx = grad_in.values();
  for (std::size_t k = 0; k < x.size(); ++k) gx[k] = x[k] >= 0.0 ? gy[k] : slope * gy[k];
  return grad_in;
}

DenseLayer make_dense_layer(const LayerSpec& spec, Rng& rng) {
  spec.validate();
  DenseLayer layer;
  layer.spec = spec;
  layer.linear.weight = Tensor2(spec.out_width, spec.in_width);
  const double limit = std::sqrt(6.0 / static_cast<double>(spec.in_width + spec.out_width));
  for (double& w : layer.linear.weight.values()) w = rng.uniform(-limit, limit);
  layer.linear.bias.assign(spec.out_width, 0.0);
  if (spec.has_layernorm) {
    layer.ln_gain.assign(spec.out_width, 1.0);
    layer.ln_shift.assign(spec.out_width, 0.0);
  }
  return layer;
}

DenseLayer zeros_like(const DenseLayer& layer) {
  DenseLayer z;
  z.spec = layer.spec;
  z.linear.weight = Tensor2(layer.linear.weight.rows(), layer.linear.weight.cols());
  z.linear.bias.assign(layer.linear.bias.size(), 0.0);
  z.ln_gain.assign(layer.ln_gain.size(), 0.0);
  z.ln_shift.assign(layer.ln_shift.size(), 0.0);
  return z;
}

std::vector<std::span<double>> parameter_groups(DenseLayer& layer) {
  std::vector<std::span<double>> groups{layer.linear.weight.values(), layer.linear.bias};
  if (layer.spec.has_layernorm) {
    groups.emplace_back(layer.ln_gain);
    groups.emplace_back(layer.ln_shift);
  }
  return groups;
}

std::vector<std::span<const double>> parameter_groups(const DenseLayer& layer) {
  std::vector<std::span<const double>> groups{layer.linear.weight.values(), layer.linear.bias};
  if (layer.spec.has_layernorm) {
    groups.emplace_back(layer.ln_gain);
    groups.emplace_back(layer.ln_shift);
  }
  return groups;
}

Tensor2 stack_forward(std::span<const DenseLayer> layers, const Tensor2& input,
                      std::span<const RowModulation> modulation, StackCache* cache) {
  if (cache != nullptr) cache->layers.assign(layers.size(), DenseCache{});
  std::size_t film_slot = 0;
  Tensor2 x = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    DenseCache* c = cache != nullptr ? &cache->layers[l] : nullptr;
    Tensor2 z = linear_forward(layer.linear, x);
    if (c != nullptr) c->input = std::move(x);
    if (layer.spec.has_layernorm) {
      z = layernorm_forward(z, layer.ln_gain, layer.ln_shift, layer.spec.layernorm_eps,
                            c != nullptr ? &c->layernorm : nullptr);
    }
    if (layer.spec.has_film) {
      if (film_slot >= modulation.size()) {
        throw ContractViolation("stack_forward: missing FiLM modulation for layer " +
                                std::to_string(l));
      }
      Tensor2 m = film_forward(z, modulation[film_slot++]);
      if (c != nullptr) c->film_input = std::move(z);
      z = std::move(m);
    }
    if (layer.spec.activation == Activation::kLeakyRelu) {
      Tensor2 a = leaky_relu_forward(z, layer.spec.leaky_slope);
      if (c != nullptr) c->pre_activation = std::move(z);
      z = std::move(a);
    }
    x = std::move(z);
  }
  if (film_slot != modulation.size()) {
    throw ContractViolation("stack_forward: " + std::to_string(modulation.size()) +
                            " modulations supplied for " + std::to_string(film_slot) +
                            " FiLM layers");
  }
  return x;
}

void stack_backward(std::span<const DenseLayer> layers, const StackCache& cache,
                    std::span<const RowModulation> modulation, const Tensor2& grad_out,
                    std::span<DenseLayer> layer_grads,
                    std::span<RowModulation> modulation_grads, Tensor2* grad_in) {
  if (cache.layers.size() != layers.size() || layer_grads.size() != layers.size()) {
    throw ContractViolation("stack_backward: cache/stack mismatch (" +
                            std::to_string(cache.layers.size()) + " caches, " +
                            std::to_string(layers.size()) + " layers)");
  }
  if (modulation_grads.size() != modulation.size()) {
    throw ContractViolation("stack_backward: modulation gradient count mismatch");
  }
  std::size_t film_slot = modulation.size();
  Tensor2 g = grad_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const DenseCache& c = cache.layers[l];
    DenseLayer& lg = layer_grads[l];
    if (layer.spec.activation == Activation::kLeakyRelu) {
      g = leaky_relu_backward(c.pre_activation, g, layer.spec.leaky_slope);
    }
    if (layer.spec.has_film) {
      if (film_slot == 0) throw ContractViolation("stack_backward: FiLM slot underflow");
      --film_slot;
      Tensor2 gx;
      film_backward(c.film_input, modulation[film_slot], g, gx, modulation_grads[film_slot]);
      g = std::move(gx);
    }
    if (layer.spec.has_layernorm) {
      g = layernorm_backward(c.layernorm, layer.ln_gain, g, lg.ln_gain, lg.ln_shift);
    }
    const bool need_input_grad = l > 0 || grad_in != nullptr;
    Tensor2 gx;
    linear_backward(layer.linear, c.input, g, lg.linear, need_input_grad ? &gx : nullptr);
    g = std::move(gx);
  }
  if (grad_in != nullptr) *grad_in = std::move(g);
}

}  // namespace rwd::nn
