#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rwd/nn/layers.hpp"

namespace rwd::model {

/// Shape of the scoring network. Defaults are the full-size geometry
/// (ViT-S/16 patch grid on two 512x512 views); desk() is the scaled-down
/// geometry used by the synthetic world.
struct ModelConfig {
  std::size_t token_dim = 384;
  std::size_t proj_dim = 4;
  std::size_t tokens_per_view = 1024;
  std::size_t num_views = 2;
  std::vector<std::size_t> head_widths{4096, 512, 64, 8};
  std::size_t goal_dim = 384;
  std::vector<std::size_t> film_generator_widths{256};
  /// Number of leading head layers modulated by FiLM.
  std::size_t film_layers = 3;
  double leaky_slope = nn::kDefaultLeakySlope;
  double layernorm_eps = nn::kDefaultLayerNormEps;

  static ModelConfig desk();

  std::size_t sample_width() const noexcept { return num_views * tokens_per_view * token_dim; }
  std::size_t head_input_width() const noexcept { return num_views * tokens_per_view * proj_dim; }
  /// 2 * (sum of modulated layer widths).
  std::size_t film_output_width() const noexcept;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct GoalEmbedding {
  std::uint32_t id = 0;
  std::vector<float> vector;
};

struct RewardModelParams {
  nn::Linear projection;  // token_dim -> proj_dim, shared by every token of every view
  std::vector<nn::DenseLayer> film_generator;
  std::vector<nn::DenseLayer> head;
  nn::Linear scalar_out;  // head_widths.back() -> 1
};

/// A parameter tensor with its logical 2-D shape (vectors are 1 x n).
struct TensorView {
  std::span<double> data;
  std::size_t rows;
  std::size_t cols;
};

/// All trainable tensors in checkpoint order.
std::vector<TensorView> tensor_views(RewardModelParams& params);
std::vector<std::span<double>> parameter_groups(RewardModelParams& params);
std::vector<std::span<const double>> parameter_groups(const RewardModelParams& params);
RewardModelParams zeros_like(const RewardModelParams& params);

/// Rows of (views, goal) pairs laid out for one network pass. Goals are
/// de-duplicated so the FiLM generator runs once per distinct goal.
class ScoringBatch {
 public:
  explicit ScoringBatch(const ModelConfig& config);

  /// Returns the slot of `goal`, adding it if no identical vector exists.
  std::size_t add_goal(std::span<const float> goal);
  void add_sample(std::span<const float> views, std::size_t goal_slot);
  void reserve(std::size_t rows);

  std::size_t rows() const noexcept { return goal_index_.size(); }
  std::size_t goal_count() const noexcept { return goals_.size(); }

  /// (rows * num_views * tokens_per_view) x token_dim
  nn::Tensor2 token_matrix() const;
  nn::Tensor2 goal_matrix() const;
  const std::vector<std::size_t>& goal_index() const noexcept { return goal_index_; }

 private:
  std::size_t sample_width_;
  std::size_t token_dim_;
  std::size_t goal_dim_;
  std::vector<double> tokens_;
  std::vector<std::vector<float>> goals_;
  std::vector<std::size_t> goal_index_;
};

struct ForwardCache {
  nn::Tensor2 tokens;
  nn::Tensor2 goals;
  std::vector<std::size_t> goal_index;
  nn::StackCache film;
  nn::StackCache head;
  std::vector<nn::RowModulation> modulation;
  nn::Tensor2 head_output;
};

class RewardModel {
 public:
  /// Fresh initialization: Glorot weights, zero biases, identity FiLM.
  RewardModel(ModelConfig config, std::uint64_t seed);
  /// Adopts existing parameters; throws FormatError if they do not fit `config`.
  RewardModel(ModelConfig config, RewardModelParams params);

  const ModelConfig& config() const noexcept { return config_; }
  const RewardModelParams& params() const noexcept { return params_; }
  RewardModelParams& mutable_params() noexcept { return params_; }

  /// `views` is num_views x tokens_per_view x token_dim, row-major.
  double score(std::span<const float> views, const GoalEmbedding& goal) const;

  /// Element i equals score(samples[i], goals[i]) bit for bit. Rows are sharded
  /// across up to `threads` workers.
  std::vector<double> score_batch(std::span<const std::span<const float>> samples,
                                  std::span<const GoalEmbedding> goals,
                                  unsigned threads = 1) const;

  std::vector<double> forward(const ScoringBatch& batch, ForwardCache* cache = nullptr) const;

  /// Accumulates d(sum_i dscores[i] * s_i)/d(theta) into `grads`.
  void backward(const ForwardCache& cache, std::span<const double> dscores,
                RewardModelParams& grads) const;

  /// FiLM coefficients for each modulated head layer.
  std::vector<nn::FilmParams> film_generate(const GoalEmbedding& goal) const;

 private:
  void check_params() const;

  ModelConfig config_;
  RewardModelParams params_;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// "RWDM" | u16 version | config block | u32 tensor count |
/// per tensor: u32 rows, u32 cols, rows*cols little-endian f32.
void save_checkpoint(const RewardModel& model, const std::filesystem::path& path);
RewardModel load_checkpoint(const std::filesystem::path& path);

}  // namespace rwd::model
