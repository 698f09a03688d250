#include "rwd/model/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "rwd/error.hpp"
#include "rwd/rng.hpp"

namespace rwd::model {
namespace {

constexpr std::size_t kScoreChunk = 256;

nn::Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  nn::LayerSpec spec{.in_width = in, .out_width = out};
  return nn::make_dense_layer(spec, rng).linear;
}

nn::Linear zeros_like(const nn::Linear& l) {
  return {nn::Tensor2(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)};
}

template <typename Params, typename Out>
void collect_tensors(Params& p, Out&& emit) {
  emit(p.projection.weight.values(), p.projection.weight.rows(), p.projection.weight.cols());
  emit(std::span(p.projection.bias), 1, p.projection.bias.size());
  auto stack = [&](auto& layers) {
    for (auto& layer : layers) {
      emit(layer.linear.weight.values(), layer.linear.weight.rows(), layer.linear.weight.cols());
      emit(std::span(layer.linear.bias), 1, layer.linear.bias.size());
      if (layer.spec.has_layernorm) {
        emit(std::span(layer.ln_gain), 1, layer.ln_gain.size());
        emit(std::span(layer.ln_shift), 1, layer.ln_shift.size());
      }
    }
  };
  stack(p.film_generator);
  stack(p.head);
  emit(p.scalar_out.weight.values(), p.scalar_out.weight.rows(), p.scalar_out.weight.cols());
  emit(std::span(p.scalar_out.bias), 1, p.scalar_out.bias.size());
}

std::vector<nn::LayerSpec> film_generator_specs(const ModelConfig& c) {
  std::vector<nn::LayerSpec> specs;
  std::size_t in = c.goal_dim;
  for (std::size_t w : c.film_generator_widths) {
    specs.push_back({.in_width = in,
                     .out_width = w,
                     .activation = nn::Activation::kLeakyRelu,
                     .leaky_slope = c.leaky_slope});
    in = w;
  }
  specs.push_back({.in_width = in, .out_width = c.film_output_width()});
  return specs;
}

std::vector<nn::LayerSpec> head_specs(const ModelConfig& c) {
  std::vector<nn::LayerSpec> specs;
  std::size_t in = c.head_input_width();
  for (std::size_t l = 0; l < c.head_widths.size(); ++l) {
    specs.push_back({.in_width = in,
                     .out_width = c.head_widths[l],
                     .has_layernorm = true,
                     .has_film = l < c.film_layers,
                     .activation = nn::Activation::kLeakyRelu,
                     .leaky_slope = c.leaky_slope,
                     .layernorm_eps = c.layernorm_eps});
    in = c.head_widths[l];
  }
  return specs;
}

void check_layer(const nn::DenseLayer& layer, const nn::LayerSpec& spec, const char* where) {
  const bool ok = layer.linear.weight.rows() == spec.out_width &&
                  layer.linear.weight.cols() == spec.in_width &&
                  layer.linear.bias.size() == spec.out_width &&
                  layer.ln_gain.size() == (spec.has_layernorm ? spec.out_width : 0) &&
                  layer.ln_shift.size() == (spec.has_layernorm ? spec.out_width : 0);
  if (!ok) {
    throw FormatError(std::string(where) + ": layer shape " + layer.linear.weight.shape() +
                      " does not match config " + std::to_string(spec.out_width) + "x" +
                      std::to_string(spec.in_width));
  }
}

}  // namespace

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.token_dim = 32;
  c.tokens_per_view = 16;
  c.num_views = 2;
  c.proj_dim = 4;
  c.head_widths = {256, 64, 16, 8};
  c.goal_dim = 32;
  c.film_generator_widths = {64};
  return c;
}

std::size_t ModelConfig::film_output_width() const noexcept {
  const std::size_t n = std::min(film_layers, head_widths.size());
  return 2 * std::accumulate(head_widths.begin(), head_widths.begin() + static_cast<long>(n),
                             std::size_t{0});
}

void ModelConfig::validate() const {
  if (token_dim == 0 || proj_dim == 0 || tokens_per_view == 0 || goal_dim == 0) {
    throw ConfigError("model config: dimensions must be positive");
  }
  if (num_views < 1) throw ConfigError("model config: num_views must be >= 1");
  if (head_widths.empty()) throw ConfigError("model config: head_widths must be nonempty");
  if (film_layers > head_widths.size()) {
    throw ConfigError("model config: film_layers exceeds head depth");
  }
  for (std::size_t w : head_widths) {
    if (w == 0) throw ConfigError("model config: zero head width");
  }
  for (std::size_t w : film_generator_widths) {
    if (w == 0) throw ConfigError("model config: zero FiLM generator width");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw ConfigError("model config: leaky slope must lie in (0, 1)");
  }
  if (!(layernorm_eps > 0.0)) throw ConfigError("model config: layernorm eps must be positive");
}

std::vector<TensorView> tensor_views(RewardModelParams& params) {
  std::vector<TensorView> out;
  collect_tensors(params, [&](std::span<double> d, std::size_t r, std::size_t c) {
    out.push_back({d, r, c});
  });
  return out;
}

std::vector<std::span<double>> parameter_groups(RewardModelParams& params) {
  std::vector<std::span<double>> out;
  collect_tensors(params, [&](std::span<double> d, std::size_t, std::size_t) { out.push_back(d); });
  return out;
}

std::vector<std::span<const double>> parameter_groups(const RewardModelParams& params) {
  std::vector<std::span<const double>> out;
  collect_tensors(params,
                  [&](std::span<const double> d, std::size_t, std::size_t) { out.push_back(d); });
  return out;
}

RewardModelParams zeros_like(const RewardModelParams& params) {
  RewardModelParams z;
  z.projection = zeros_like(params.projection);
  for (const auto& l : params.film_generator) z.film_generator.push_back(nn::zeros_like(l));
  for (const auto& l : params.head) z.head.push_back(nn::zeros_like(l));
  z.scalar_out = zeros_like(params.scalar_out);
  return z;
}

ScoringBatch::ScoringBatch(const ModelConfig& config)
    : sample_width_(config.sample_width()),
      token_dim_(config.token_dim),
      goal_dim_(config.goal_dim) {}

std::size_t ScoringBatch::add_goal(std::span<const float> goal) {
  if (goal.size() != goal_dim_) {
    throw DimensionError("goal embedding: expected dimension " + std::to_string(goal_dim_) +
                         ", found " + std::to_string(goal.size()));
  }
  for (std::size_t g = 0; g < goals_.size(); ++g) {
    if (std::equal(goal.begin(), goal.end(), goals_[g].begin())) return g;
  }
  if (!std::all_of(goal.begin(), goal.end(), [](float v) { return std::isfinite(v); })) {
    throw NumericError("goal embedding contains non-finite values");
  }
  goals_.emplace_back(goal.begin(), goal.end());
  return goals_.size() - 1;
}

void ScoringBatch::add_sample(std::span<const float> views, std::size_t goal_slot) {
  if (views.size() != sample_width_) {
    throw DimensionError("sample views: expected " + std::to_string(sample_width_) +
                         " values (views x tokens x dim), found " + std::to_string(views.size()));
  }
  if (goal_slot >= goals_.size()) throw ContractViolation("sample references unknown goal slot");
  const std::size_t base = tokens_.size();
  tokens_.resize(base + views.size());
  for (std::size_t k = 0; k < views.size(); ++k) {
    const float v = views[k];
    if (!std::isfinite(v)) throw NumericError("sample embedding contains non-finite values");
    tokens_[base + k] = v;
  }
  goal_index_.push_back(goal_slot);
}

void ScoringBatch::reserve(std::size_t rows) {
  tokens_.reserve(rows * sample_width_);
  goal_index_.reserve(rows);
}

nn::Tensor2 ScoringBatch::token_matrix() const {
  return nn::Tensor2(tokens_.size() / token_dim_, token_dim_, tokens_);
}

nn::Tensor2 ScoringBatch::goal_matrix() const {
  nn::Tensor2 g(goals_.size(), goal_dim_);
  for (std::size_t r = 0; r < goals_.size(); ++r) {
    std::copy(goals_[r].begin(), goals_[r].end(), g.row(r).begin());
  }
  return g;
}

RewardModel::RewardModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  params_.projection = make_linear(config_.token_dim, config_.proj_dim, rng);
  for (const auto& spec : film_generator_specs(config_)) {
    params_.film_generator.push_back(nn::make_dense_layer(spec, rng));
  }
  // Identity modulation at init: zero output weights, gamma bias 1, beta bias 0.
  nn::DenseLayer& out = params_.film_generator.back();
  out.linear.weight.fill(0.0);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < std::min(config_.film_layers, config_.head_widths.size()); ++l) {
    const std::size_t w = config_.head_widths[l];
    std::fill_n(out.linear.bias.begin() + static_cast<long>(offset), w, 1.0);
    offset += 2 * w;
  }
  for (const auto& spec : head_specs(config_)) {
    params_.head.push_back(nn::make_dense_layer(spec, rng));
  }
  params_.scalar_out = make_linear(config_.head_widths.back(), 1, rng);
}

RewardModel::RewardModel(ModelConfig config, RewardModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_params();
}

void RewardModel::check_params() const {
  const auto& p = params_;
  if (p.projection.weight.rows() != config_.proj_dim ||
      p.projection.weight.cols() != config_.token_dim ||
      p.projection.bias.size() != config_.proj_dim) {
    throw FormatError("projection shape " + p.projection.weight.shape() +
                      " does not match config");
  }
  const auto fg = film_generator_specs(config_);
  const auto hd = head_specs(config_);
  if (p.film_generator.size() != fg.size() || p.head.size() != hd.size()) {
    throw FormatError("layer count does not match config");
  }
  for (std::size_t i = 0; i < fg.size(); ++i) check_layer(p.film_generator[i], fg[i], "film");
  for (std::size_t i = 0; i < hd.size(); ++i) check_layer(p.head[i], hd[i], "head");
  if (p.scalar_out.weight.rows() != 1 || p.scalar_out.weight.cols() != config_.head_widths.back() ||
      p.scalar_out.bias.size() != 1) {
    throw FormatError("scalar read-out shape does not match config");
  }
}

std::vector<double> RewardModel::forward(const ScoringBatch& batch, ForwardCache* cache) const {
  const std::size_t rows = batch.rows();
  if (rows == 0) return {};
  const ModelConfig& c = config_;

  nn::Tensor2 tokens = batch.token_matrix();
  nn::Tensor2 projected = nn::linear_forward(params_.projection, tokens);
  nn::Tensor2 head_in(rows, c.head_input_width(), std::vector<double>(projected.values().begin(),
                                                                      projected.values().end()));

  nn::Tensor2 goals = batch.goal_matrix();
  nn::StackCache film_cache;
  nn::Tensor2 film_raw = nn::stack_forward(params_.film_generator, goals, {},
                                           cache != nullptr ? &film_cache : nullptr);

  const std::size_t n_film = std::min(c.film_layers, c.head_widths.size());
  std::vector<nn::RowModulation> modulation(n_film);
  std::size_t offset = 0;
  const auto& gidx = batch.goal_index();
  for (std::size_t l = 0; l < n_film; ++l) {
    const std::size_t w = c.head_widths[l];
    modulation[l].gamma = nn::Tensor2(rows, w);
    modulation[l].beta = nn::Tensor2(rows, w);
    for (std::size_t r = 0; r < rows; ++r) {
      auto src = film_raw.row(gidx[r]);
      std::copy_n(src.begin() + static_cast<long>(offset), w, modulation[l].gamma.row(r).begin());
      std::copy_n(src.begin() + static_cast<long>(offset + w), w,
                  modulation[l].beta.row(r).begin());
    }
    offset += 2 * w;
  }

  nn::StackCache head_cache;
  nn::Tensor2 head_out = nn::stack_forward(params_.head, head_in, modulation,
                                           cache != nullptr ? &head_cache : nullptr);
  nn::Tensor2 out = nn::linear_forward(params_.scalar_out, head_out);

  std::vector<double> scores(out.values().begin(), out.values().end());
  if (cache != nullptr) {
    cache->tokens = std::move(tokens);
    cache->goals = std::move(goals);
    cache->goal_index = gidx;
    cache->film = std::move(film_cache);
    cache->head = std::move(head_cache);
    cache->modulation = std::move(modulation);
    cache->head_output = std::move(head_out);
  }
  return scores;
}

void RewardModel::backward(const ForwardCache& cache, std::span<const double> dscores,
                           RewardModelParams& grads) const {
  const std::size_t rows = cache.goal_index.size();
  if (dscores.size() != rows || cache.head_output.rows() != rows) {
    throw ContractViolation("backward: " + std::to_string(dscores.size()) +
                            " score gradients for a cache of " + std::to_string(rows) + " rows");
  }
  const ModelConfig& c = config_;

  nn::Tensor2 dscore_t(rows, 1, std::vector<double>(dscores.begin(), dscores.end()));
  nn::Tensor2 dhead;
  nn::linear_backward(params_.scalar_out, cache.head_output, dscore_t, grads.scalar_out, &dhead);

  std::vector<nn::RowModulation> dmod(cache.modulation.size());
  for (std::size_t l = 0; l < dmod.size(); ++l) {
    dmod[l].gamma = nn::Tensor2(rows, cache.modulation[l].gamma.cols());
    dmod[l].beta = nn::Tensor2(rows, cache.modulation[l].beta.cols());
  }
  nn::Tensor2 dhead_in;
  nn::stack_backward(params_.head, cache.head, cache.modulation, dhead, grads.head, dmod,
                     &dhead_in);

  // Fold per-row FiLM gradients back onto the distinct goals.
  nn::Tensor2 dfilm(cache.goals.rows(), c.film_output_width());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < dmod.size(); ++l) {
    const std::size_t w = dmod[l].gamma.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      auto dst = dfilm.row(cache.goal_index[r]);
      auto dg = dmod[l].gamma.row(r);
      auto db = dmod[l].beta.row(r);
      for (std::size_t j = 0; j < w; ++j) {
        dst[offset + j] += dg[j];
        dst[offset + w + j] += db[j];
      }
    }
    offset += 2 * w;
  }
  nn::stack_backward(params_.film_generator, cache.film, {}, dfilm, grads.film_generator, {},
                     nullptr);

  nn::Tensor2 dprojected(cache.tokens.rows(), c.proj_dim,
                         std::vector<double>(dhead_in.values().begin(), dhead_in.values().end()));
  nn::linear_backward(params_.projection, cache.tokens, dprojected, grads.projection, nullptr);
}

double RewardModel::score(std::span<const float> views, const GoalEmbedding& goal) const {
  ScoringBatch batch(config_);
  batch.add_sample(views, batch.add_goal(goal.vector));
  return forward(batch).front();
}

std::vector<double> RewardModel::score_batch(std::span<const std::span<const float>> samples,
                                             std::span<const GoalEmbedding> goals,
                                             unsigned threads) const {
  if (samples.size() != goals.size()) {
    throw DimensionError("score_batch: " + std::to_string(samples.size()) + " samples but " +
                         std::to_string(goals.size()) + " goals");
  }
  std::vector<double> out(samples.size());
  const std::size_t n_chunks = (samples.size() + kScoreChunk - 1) / kScoreChunk;
  auto run_chunk = [&](std::size_t chunk) {
    const std::size_t begin = chunk * kScoreChunk;
    const std::size_t end = std::min(samples.size(), begin + kScoreChunk);
    ScoringBatch batch(config_);
    batch.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      batch.add_sample(samples[i], batch.add_goal(goals[i].vector));
    }
    auto s = forward(batch);
    std::copy(s.begin(), s.end(), out.begin() + static_cast<long>(begin));
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_chunks)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < n_chunks; ++k) run_chunk(k);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < n_chunks; k += workers) run_chunk(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<nn::FilmParams> RewardModel::film_generate(const GoalEmbedding& goal) const {
  if (goal.vector.size() != config_.goal_dim) {
    throw DimensionError("film_generate: expected goal dimension " +
                         std::to_string(config_.goal_dim) + ", found " +
                         std::to_string(goal.vector.size()));
  }
  nn::Tensor2 g(1, config_.goal_dim);
  std::copy(goal.vector.begin(), goal.vector.end(), g.row(0).begin());
  nn::Tensor2 raw = nn::stack_forward(params_.film_generator, g, {});
  std::vector<nn::FilmParams> films;
  std::size_t offset = 0;
  auto row = raw.row(0);
  for (std::size_t l = 0; l < std::min(config_.film_layers, config_.head_widths.size()); ++l) {
    const std::size_t w = config_.head_widths[l];
    nn::FilmParams f;
    f.gamma.assign(row.begin() + static_cast<long>(offset),
                   row.begin() + static_cast<long>(offset + w));
    f.beta.assign(row.begin() + static_cast<long>(offset + w),
                  row.begin() + static_cast<long>(offset + 2 * w));
    films.push_back(std::move(f));
    offset += 2 * w;
  }
  return films;
}

}  // namespace rwd::model
