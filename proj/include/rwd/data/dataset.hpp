#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwd/model/reward_model.hpp"

namespace rwd::data {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::uint16_t kEmbeddingBlobVersion = 1;

struct DataConfig {
  double eps_c = 0.01;  // Cartesian bin edge, meters
  double eps_r = 0.01;  // normalized reward bin edge
  std::size_t action_repeat_n = 1;
  double pair_min_gap = 0.01;

  void validate() const;
};

enum class PolicyTag { kRandom, kExpert, kMixed };

std::string to_string(PolicyTag tag);
PolicyTag parse_policy_tag(const std::string& s);

struct EmbeddingGeometry {
  std::size_t num_views = 2;
  std::size_t tokens_per_view = 16;
  std::size_t token_dim = 32;
  std::size_t goal_dim = 32;

  std::size_t sample_width() const noexcept { return num_views * tokens_per_view * token_dim; }
  friend bool operator==(const EmbeddingGeometry&, const EmbeddingGeometry&) = default;
};

struct PromptInfo {
  std::string text;
  std::uint32_t embedding_id = 0;  // row in goals.emb
  bool heldout = false;            // paraphrase reserved for evaluation
};

struct TaskInfo {
  std::string id;
  std::string base_task;
  std::string variant;
  std::vector<PromptInfo> prompts;
  double reward_min = 0.0;
  double reward_max = 1.0;

  std::vector<std::uint32_t> train_prompts() const;
  std::vector<std::uint32_t> heldout_prompts() const;
};

struct StepRecord {
  std::uint32_t task = 0;          // index into Dataset::tasks
  std::uint32_t trajectory = 0;    // index into Dataset::trajectories
  std::uint32_t trajectory_id = 0;
  std::uint32_t step_index = 0;
  double reward_raw = 0.0;
  double reward_norm = 0.0;
  std::array<double, 3> cartesian{};
  bool success = false;
};

struct Trajectory {
  std::uint32_t id = 0;
  std::uint32_t task = 0;
  PolicyTag policy = PolicyTag::kRandom;
  std::size_t first_step = 0;  // into Dataset::steps
  std::size_t step_count = 0;
  std::vector<float> embeddings;  // [step][view][token][dim]
};

/// In-memory form of a dataset directory. Immutable once loaded.
struct Dataset {
  EmbeddingGeometry geometry;
  std::vector<std::string> view_configs{"default"};
  std::vector<TaskInfo> tasks;
  std::vector<Trajectory> trajectories;
  std::vector<model::GoalEmbedding> goals;
  std::vector<StepRecord> steps;
  nlohmann::json generation = nlohmann::json::object();
  /// Steps whose raw reward fell outside the task's stored range on load.
  std::size_t clamped_rewards = 0;

  /// All views of one step, num_views x tokens_per_view x token_dim.
  std::span<const float> views(const StepRecord& step) const;
  std::vector<std::size_t> task_steps(std::uint32_t task) const;
  std::uint32_t task_index(const std::string& id) const;
};

/// Structural checks shared by the reader and the generator: shapes,
/// index ranges, prompt ids, reward ranges.
void validate(const Dataset& ds);

struct RewardRange {
  double min;
  double max;
};

/// Fits min/max over `steps` and writes reward_norm. Throws ConfigError if
/// all raw rewards are equal.
RewardRange normalize_rewards(std::span<StepRecord> steps);

/// Applies a stored range, clamping into [0, 1]. Returns how many values were clamped.
std::size_t apply_normalization(std::span<StepRecord> steps, RewardRange range);

double denormalize(double reward_norm, RewardRange range);

using BinKey = std::array<std::int64_t, 5>;  // task, x, y, z, reward

BinKey bin_key(const StepRecord& step, const DataConfig& config);

/// Keeps the lowest (trajectory_id, step_index) step of every occupied
/// (task, Cartesian, reward) bin. Returns indices into `steps`, sorted by
/// (task, trajectory_id, step_index).
std::vector<std::size_t> dedup_bin(std::span<const StepRecord> steps, const DataConfig& config,
                                   std::span<const std::size_t> subset = {});

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// Assigns each step to held-out iff a hash of its bin key falls in the
/// lowest `heldout_fraction` of the hash range.
Split split_by_bin(std::span<const StepRecord> steps, std::span<const std::size_t> indices,
                   const DataConfig& config, double heldout_fraction = 0.1);

struct TrainingPair {
  std::size_t a = 0;  // index into Dataset::steps
  std::size_t b = 0;
  int label = 1;      // +1 iff reward_norm(a) > reward_norm(b)
  std::uint32_t prompt_id = 0;
  std::uint32_t view_config_id = 0;
};

struct PairSampleResult {
  std::vector<TrainingPair> pairs;
  std::vector<std::string> warnings;
};

enum class PromptSet { kTrain, kHeldout, kAll };

/// Draws a task uniformly, then a qualifying step pair uniformly within it
/// (|reward gap| >= pair_min_gap, any trajectories), orientation by coin flip,
/// prompt uniformly from the task's prompt set.
class PairSampler {
 public:
  PairSampler(const Dataset& ds, std::span<const std::size_t> subset, const DataConfig& config,
              PromptSet prompts = PromptSet::kTrain);

  PairSampleResult sample(std::uint64_t seed, std::size_t count) const;
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  std::size_t usable_tasks() const noexcept { return pools_.size(); }

 private:
  struct TaskPool {
    std::uint32_t task;
    std::vector<std::size_t> steps;      // sorted by reward_norm
    std::vector<double> rewards;
    std::vector<std::size_t> first_far;  // first sorted index j with r_j - r_i >= gap
    std::vector<std::uint64_t> cumulative;
    std::vector<std::uint32_t> prompts;
  };

  std::vector<TaskPool> pools_;
  std::vector<std::string> warnings_;
};

/// Convenience wrapper; throws ConfigError when no task has a qualifying pair.
PairSampleResult sample_pairs(const Dataset& ds, std::span<const std::size_t> subset,
                              const DataConfig& config, std::uint64_t seed, std::size_t count);

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace rwd::data
