#include <cmath>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "rwd/error.hpp"
#include "rwd/nn/adamw.hpp"
#include "rwd/nn/layers.hpp"

using namespace rwd;
using namespace rwd::nn;
using rwd::testing::random_tensor;
using rwd::testing::random_vector;

TEST_SUITE("nn") {

TEST_CASE("linear_forward hand cases") {
  Linear id{Tensor2{{1, 0}, {0, 1}}, {0, 0}};
  CHECK(linear_forward(id, Tensor2{{3, 4}}) == Tensor2{{3, 4}});

  Linear sum{Tensor2{{1, 1}}, {1}};
  CHECK(linear_forward(sum, Tensor2{{2, 3}})(0, 0) == 6.0);
}

TEST_CASE("linear_forward matches triple-loop matmul") {
  Rng rng(11);
  Linear layer{random_tensor(4, 3, rng), random_vector(4, rng)};
  Tensor2 x = random_tensor(5, 3, rng);
  Tensor2 y = linear_forward(layer, x);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t o = 0; o < 4; ++o) {
      double ref = layer.bias[o];
      for (std::size_t k = 0; k < 3; ++k) ref += x(i, k) * layer.weight(o, k);
      CHECK(std::abs(y(i, o) - ref) < 1e-12);
    }
  }
}

TEST_CASE("linear_forward rejects shape mismatch naming both shapes") {
  Linear layer{Tensor2(2, 3), {0, 0}};
  try {
    linear_forward(layer, Tensor2(1, 4));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x4]") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("layernorm examples") {
  std::vector<double> one3(3, 1.0), zero3(3, 0.0);
  Tensor2 c = layernorm_forward(Tensor2{{5, 5, 5}}, one3, zero3, kDefaultLayerNormEps);
  for (double v : c.values()) CHECK(v == 0.0);

  std::vector<double> one2(2, 1.0), zero2(2, 0.0);
  Tensor2 t = layernorm_forward(Tensor2{{1, 3}}, one2, zero2, 0.0);
  CHECK(t(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(t(0, 1) == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng(3);
  Tensor2 x = random_tensor(8, 16, rng, 20.0);  // var >> eps
  std::vector<double> g(16, 1.0), s(16, 0.0);
  LayerNormCache cache;
  layernorm_forward(x, g, s, kDefaultLayerNormEps, &cache);
  for (std::size_t i = 0; i < 8; ++i) {
    double m = 0.0, v = 0.0;
    for (double e : cache.normalized.row(i)) m += e;
    m /= 16;
    for (double e : cache.normalized.row(i)) v += (e - m) * (e - m);
    v /= 16;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
}

TEST_CASE("layernorm rejects non-finite input") {
  std::vector<double> g(2, 1.0), s(2, 0.0);
  CHECK_THROWS_AS(layernorm_forward(Tensor2{{1.0, NAN}}, g, s, 1e-5), NumericError);
}

TEST_CASE("film examples") {
  Rng rng(5);
  Tensor2 x = random_tensor(3, 2, rng);
  CHECK(film_forward(x, FilmParams{{1, 1}, {0, 0}}) == x);

  Tensor2 shifted = film_forward(x, FilmParams{{0, 0}, {7, -2}});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(shifted(i, 0) == 7.0);
    CHECK(shifted(i, 1) == -2.0);
  }
  CHECK(film_forward(Tensor2{{3, 4}}, FilmParams{{2, -1}, {0, 1}}) == Tensor2{{6, -3}});
  CHECK_THROWS_AS(film_forward(x, FilmParams{{1}, {0}}), DimensionError);
}

TEST_CASE("leaky relu subgradient at zero uses positive branch") {
  Tensor2 pre{{0.0, -1.0, 2.0}};
  Tensor2 g = leaky_relu_backward(pre, Tensor2{{1.0, 1.0, 1.0}}, 0.01);
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 1) == 0.01);
  CHECK(g(0, 2) == 1.0);
}

TEST_CASE("single linear layer squared loss gradient is 2(yhat - y)x") {
  Rng rng(8);
  Linear layer{random_tensor(1, 3, rng), {0.25}};
  Tensor2 x = random_tensor(1, 3, rng);
  const double target = 0.7;
  Tensor2 yhat = linear_forward(layer, x);
  Tensor2 dy{{2.0 * (yhat(0, 0) - target)}};
  Linear grad{Tensor2(1, 3), {0.0}};
  linear_backward(layer, x, dy, grad, nullptr);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(grad.weight(0, k) == doctest::Approx(2.0 * (yhat(0, 0) - target) * x(0, k)));
  }
  CHECK(grad.bias[0] == doctest::Approx(2.0 * (yhat(0, 0) - target)));
}

TEST_CASE("stack_backward matches central finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    std::vector<DenseLayer> layers;
    const std::size_t widths[] = {6, 9, 7, 5, 3};
    for (std::size_t l = 0; l + 1 < std::size(widths); ++l) {
      LayerSpec spec{.in_width = widths[l],
                     .out_width = widths[l + 1],
                     .has_layernorm = true,
                     .has_film = l < 3,
                     .activation = Activation::kLeakyRelu};
      layers.push_back(make_dense_layer(spec, rng));
      for (auto g : parameter_groups(layers.back())) {
        for (double& v : g) v += rng.uniform(-0.3, 0.3);
      }
    }
    const std::size_t rows = 4;
    Tensor2 x = random_tensor(rows, widths[0], rng);
    std::vector<RowModulation> mods;
    for (std::size_t l = 0; l < 3; ++l) {
      mods.push_back({random_tensor(rows, widths[l + 1], rng, 1.5),
                      random_tensor(rows, widths[l + 1], rng)});
    }
    Tensor2 target = random_tensor(rows, widths[4], rng);
    auto loss = [&] {
      Tensor2 y = stack_forward(layers, x, mods);
      double acc = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) {
        acc += 0.5 * (y.values()[k] - target.values()[k]) * (y.values()[k] - target.values()[k]);
      }
      return acc;
    };

    StackCache cache;
    Tensor2 y = stack_forward(layers, x, mods, &cache);
    Tensor2 dy(y.rows(), y.cols());
    for (std::size_t k = 0; k < y.size(); ++k) dy.values()[k] = y.values()[k] - target.values()[k];
    std::vector<DenseLayer> grads;
    for (const auto& l : layers) grads.push_back(zeros_like(l));
    std::vector<RowModulation> dmods;
    for (const auto& m : mods) {
      dmods.push_back({Tensor2(m.gamma.rows(), m.gamma.cols()), Tensor2(m.beta.rows(), m.beta.cols())});
    }
    Tensor2 dx;
    stack_backward(layers, cache, mods, dy, grads, dmods, &dx);

    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto p = parameter_groups(layers[l]);
      auto g = parameter_groups(std::as_const(grads[l]));
      for (std::size_t k = 0; k < p.size(); ++k) {
        CHECK(rwd::testing::max_fd_error(p[k], g[k], loss) < 1e-4);
      }
    }
    for (std::size_t l = 0; l < mods.size(); ++l) {
      CHECK(rwd::testing::max_fd_error(mods[l].gamma.values(), dmods[l].gamma.values(), loss) < 1e-4);
      CHECK(rwd::testing::max_fd_error(mods[l].beta.values(), dmods[l].beta.values(), loss) < 1e-4);
    }
    CHECK(rwd::testing::max_fd_error(x.values(), dx.values(), loss) < 1e-4);
  }
}

TEST_CASE("stack_backward rejects mismatched caches") {
  Rng rng(1);
  std::vector<DenseLayer> layers{make_dense_layer({.in_width = 2, .out_width = 2}, rng)};
  StackCache empty;
  std::vector<DenseLayer> grads{zeros_like(layers[0])};
  CHECK_THROWS_AS(stack_backward(layers, empty, {}, Tensor2(1, 2), grads, {}, nullptr),
                  ContractViolation);
}

TEST_CASE("forward pass is deterministic") {
  Rng rng(4);
  std::vector<DenseLayer> layers{
      make_dense_layer({.in_width = 5, .out_width = 4, .has_layernorm = true,
                        .activation = Activation::kLeakyRelu}, rng)};
  Tensor2 x = random_tensor(3, 5, rng);
  Tensor2 a = stack_forward(layers, x, {});
  Tensor2 b = stack_forward(layers, x, {});
  CHECK(a == b);
}

TEST_CASE("adamw examples") {
  std::vector<double> theta{1.0, -2.0, 0.5};
  std::vector<double> grad(3, 0.0);
  std::vector<std::span<double>> params{theta};
  std::vector<std::span<const double>> grads{grad};

  SUBCASE("zero gradient and no decay is a fixed point") {
    auto state = make_optimizer_state(params, {.lr = 3e-4, .weight_decay = 0.0});
    adamw_step(params, grads, state);
    CHECK(theta == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(state.step == 1);
  }
  SUBCASE("decay applies without gradient") {
    auto state = make_optimizer_state(params, {.lr = 0.0003, .weight_decay = 0.03});
    adamw_step(params, grads, state);
    CHECK(theta[0] == doctest::Approx(1.0 * (1.0 - 9e-6)).epsilon(1e-14));
    CHECK(theta[1] == doctest::Approx(-2.0 * (1.0 - 9e-6)).epsilon(1e-14));
  }
  SUBCASE("first step from zero moments moves by lr") {
    std::vector<double> g{0.3, -7.0, 1e-3};
    grads[0] = g;
    auto state = make_optimizer_state(params, {.lr = 1e-3, .weight_decay = 0.0});
    adamw_step(params, grads, state);
    // mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
    CHECK(theta[0] == doctest::Approx(1.0 - 1e-3 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
    CHECK(theta[1] == doctest::Approx(-2.0 + 1e-3 * 7.0 / (7.0 + 1e-8)).epsilon(1e-14));
    CHECK(std::abs(theta[2] - 0.5) == doctest::Approx(1e-3).epsilon(1e-4));
  }
  SUBCASE("zero learning rate is the identity") {
    std::vector<double> g{5.0, -1.0, 2.0};
    grads[0] = g;
    auto state = make_optimizer_state(params, {.lr = 0.0, .weight_decay = 0.03});
    for (int i = 0; i < 3; ++i) adamw_step(params, grads, state);
    CHECK(theta == std::vector<double>{1.0, -2.0, 0.5});
  }
  SUBCASE("NaN gradient leaves state untouched") {
    std::vector<double> g{NAN, 0.0, 0.0};
    grads[0] = g;
    auto state = make_optimizer_state(params, {});
    CHECK_THROWS_AS(adamw_step(params, grads, state), NumericError);
    CHECK(state.step == 0);
    CHECK(state.first_moment[0][1] == 0.0);
    CHECK(theta == std::vector<double>{1.0, -2.0, 0.5});
  }
}

}  // TEST_SUITE
