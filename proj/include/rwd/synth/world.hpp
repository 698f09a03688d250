#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rwd/data/dataset.hpp"
#include "rwd/rng.hpp"

namespace rwd::synth {

using Vec3 = std::array<double, 3>;

/// Axis-aligned box every coordinate of a LatentState lives in.
inline constexpr double kWorkspaceLo = -0.25;
inline constexpr double kWorkspaceHi = 0.25;

struct LatentState {
  Vec3 tcp{};
  Vec3 object{};
  Vec3 target{};
  double grip = 0.0;  // 0 open, 1 closed
};

double distance(const Vec3& a, const Vec3& b);

enum class Variant { kForward, kReverse };

std::string to_string(Variant v);

/// One prompted task of the synthetic world. Forward and reverse variants of
/// the same base task share the scene, the target and the encoder.
struct SynthTask {
  std::uint32_t base_index = 0;
  std::string id;
  Variant variant = Variant::kForward;
  Vec3 target{};
  std::vector<std::string> prompt_texts;
  std::vector<std::vector<float>> prompt_embeddings;  // paraphrases; last is held out
  std::uint64_t encoder_seed = 0;
};

/// Forward: 0.5(1 - tanh(5|tcp - object|)) + 0.5(1 - tanh(5|object - target|)).
/// Reverse: 1 - forward.
double ground_truth_reward(Variant variant, const LatentState& state);
inline double ground_truth_reward(const SynthTask& task, const LatentState& state) {
  return ground_truth_reward(task.variant, state);
}

struct EncoderConfig {
  std::size_t num_views = 2;
  std::size_t tokens_per_view = 16;
  std::size_t token_dim = 32;
  double noise_sigma = 0.0;
  /// Per-view probability that the object position is masked from that view.
  double occlusion_rate = 0.0;
};

/// Frozen random-feature stand-in for a patch encoder:
/// token t of view k = tanh(W_kt * features(state) + b_kt) + noise.
class SynthEncoder {
 public:
  static constexpr std::size_t kFeatureDim = 10;  // tcp, object, target, grip

  SynthEncoder(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t view_width() const noexcept { return config_.tokens_per_view * config_.token_dim; }

  /// Writes one view (tokens_per_view x token_dim) into `out`.
  void encode(const LatentState& state, std::size_t view, Rng& rng, std::span<float> out) const;
  /// All views concatenated, the layout a dataset step stores.
  std::vector<float> encode_all(const LatentState& state, Rng& rng) const;

  std::span<const double> weights(std::size_t view) const;

 private:
  EncoderConfig config_;
  std::vector<double> weights_;  // [view][token][dim][feature]
  std::vector<double> biases_;   // [view][token][dim]
};

enum class PolicyKind { kRandomRepeat, kExpert, kMixed };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kRandomRepeat;
  std::size_t repeat_n = 1;
  double max_speed = 0.05;
  double solved_threshold = 0.95;
};

struct TrajectoryStep {
  LatentState state;
  double reward = 0.0;
};

using SynthTrajectory = std::vector<TrajectoryStep>;

/// Rolls out `episodes` trajectories of `horizon` states. Random actions are
/// held for repeat_n steps; the expert reaches, grasps and carries the object
/// to the target; mixed runs the expert, switches to random actions once the
/// task is solved and back to the expert afterwards. Reverse-variant expert and
/// mixed trajectories are forward rollouts played backwards in time.
std::vector<SynthTrajectory> generate_trajectories(const SynthTask& task,
                                                   const PolicyConfig& policy,
                                                   std::size_t episodes, std::size_t horizon,
                                                   std::uint64_t seed);

struct WorldConfig {
  std::size_t tasks = 4;
  bool variants = true;
  std::size_t episodes = 90;
  std::size_t horizon = 50;
  std::size_t action_repeat = 4;
  std::size_t prompts = 3;
  double paraphrase_fraction = 0.1;
  double max_speed = 0.05;
  data::EmbeddingGeometry geometry;
  double noise_sigma = 0.01;
  double occlusion_rate = 0.0;
  /// Defines the world: targets, encoders and prompt embeddings.
  std::uint64_t world_seed = 1;
  /// Drives the rollouts and encoder noise only.
  std::uint64_t seed = 7;
  /// Overrides the sampled per-task targets when non-empty.
  std::vector<Vec3> targets;
  /// Reuse stored reward ranges (keyed by task id) instead of fitting them.
  std::map<std::string, data::RewardRange> reward_ranges;

  void validate() const;
};

std::vector<SynthTask> make_tasks(const WorldConfig& config);
SynthEncoder make_encoder(const WorldConfig& config, const SynthTask& task);

/// Builds a complete dataset container; episode e of each task uses the
/// random, expert and mixed policies in rotation.
data::Dataset generate_dataset(const WorldConfig& config);

/// Rebuilds the world a dataset was generated from (its `generation` record
/// plus geometry). Throws FormatError on missing or mistyped fields.
WorldConfig world_config_from_dataset(const data::Dataset& ds);

}  // namespace rwd::synth
