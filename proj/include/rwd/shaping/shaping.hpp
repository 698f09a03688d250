#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwd/model/reward_model.hpp"
#include "rwd/synth/world.hpp"

namespace rwd::shaping {

/// Declaration order is the greedy tie-break order.
enum class Action : std::uint8_t { kUp, kRight, kDown, kLeft };
inline constexpr std::array<Action, 4> kActions{Action::kUp, Action::kRight, Action::kDown,
                                                Action::kLeft};
std::string to_string(Action a);

struct Cell {
  std::size_t x = 0;
  std::size_t y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Deterministic 4-neighbour grid; moves into a wall leave the agent in place.
/// The goal is terminal: any action there collects goal_reward and moves to
/// an absorbing exit state whose potential is 0. Every other transition
/// costs step_cost.
struct GridworldMDP {
  std::size_t width = 9;
  std::size_t height = 9;
  Cell start{0, 0};
  Cell goal{8, 8};
  double step_cost = 0.0;
  double goal_reward = 1.0;
  double gamma = 0.95;

  void validate() const;
  std::size_t cells() const noexcept { return width * height; }
  std::size_t exit_state() const noexcept { return cells(); }
  std::size_t index(Cell c) const noexcept { return c.y * width + c.x; }
  Cell cell(std::size_t s) const noexcept { return {s % width, s / width}; }
  bool is_goal(std::size_t s) const noexcept { return s == index(goal); }
  /// Successor of `s` under `a`; the goal always moves to exit_state().
  std::size_t next(std::size_t s, Action a) const;
  std::size_t manhattan_to_goal(std::size_t s) const;
};

using RewardFn = std::function<double(std::size_t s, Action a, std::size_t next)>;

/// Potential over grid cells (exit state excluded; its potential is 0).
struct Potential {
  std::string name;
  std::vector<double> values;

  double at(std::size_t s) const { return s < values.size() ? values[s] : 0.0; }
};

RewardFn base_reward(const GridworldMDP& mdp);

/// R(s, a, s') + gamma * phi(s') - phi(s).
RewardFn shape(RewardFn base, const Potential& phi, double gamma);

/// F(s, a, s') summed with discounting over a state sequence.
double discounted_shaping(const std::vector<std::size_t>& states, const Potential& phi,
                          double gamma);

struct ValueResult {
  std::vector<double> values;   // per cell
  std::vector<Action> policy;   // greedy, per cell
  std::size_t iterations = 0;
};

/// Synchronous value iteration until the values are within `tol` of the fixed point.
ValueResult value_iteration(const GridworldMDP& mdp, const RewardFn& reward, double tol = 1e-10,
                            std::size_t max_iterations = 1000000);

/// Greedy action with a fixed tie-break; `q` holds 4 action values.
Action greedy_action(const std::array<double, 4>& q, double tie_tol = 1e-9);

/// Steps the greedy policy from start; nullopt if the goal is not reached within `cap`.
std::optional<std::size_t> greedy_path_length(const GridworldMDP& mdp,
                                              const std::vector<Action>& policy,
                                              std::size_t cap = 10000);

struct QLearningConfig {
  double alpha = 0.1;
  double epsilon = 0.1;
  double epsilon_decay = 0.999;
  std::size_t horizon = 500;
  std::size_t episodes = 1000;
};

struct QLearningResult {
  std::vector<std::size_t> steps;  // per episode, capped at horizon
  std::vector<bool> success;       // goal reached within the horizon
  /// 1-based episode after which the greedy policy first reaches the goal.
  std::optional<std::size_t> first_success;
  std::vector<Action> greedy_policy;  // after the last episode
};

/// Tabular epsilon-greedy Q-learning from zero initial values.
QLearningResult q_learning(const GridworldMDP& mdp, const RewardFn& reward, std::uint64_t seed,
                           const QLearningConfig& config = {});

/// scale * (1 - manhattan / (width + height - 2)): negative distance shifted so
/// the goal sits at `scale`. The shift adds a constant (gamma - 1) * scale per
/// step, which keeps wall bumps from paying off under zero-initialized Q.
Potential manhattan_potential(const GridworldMDP& mdp, double scale = 1.0);
Potential random_potential(const GridworldMDP& mdp, std::uint64_t seed, double scale = 1.0);

/// Places the grid in the workspace so the goal cell sits on the task target,
/// one axis per grid direction, spacing capped so every cell stays inside.
struct GridEmbedding {
  synth::Vec3 target{};
  double spacing = 0.0;
  std::array<double, 2> direction{1.0, 1.0};

  static GridEmbedding fit(const GridworldMDP& mdp, const synth::Vec3& target);
  synth::LatentState state(const GridworldMDP& mdp, std::size_t s) const;
};

/// The encoder, goal and target of one task of a generated dataset.
struct TaskScene {
  synth::SynthEncoder encoder;
  model::GoalEmbedding goal;  // the task's first training prompt
  synth::Vec3 target{};
};

/// Rebuilds the scene of `task_id` (empty: the first forward task) from the
/// dataset's generation record. A non-negative `occlusion_rate` replaces the
/// recorded one.
TaskScene task_scene(const data::Dataset& ds, const std::string& task_id = {},
                     double occlusion_rate = -1.0);

/// Scores every cell with the reward model (tcp at the cell, object already
/// at the target) and min-max normalizes the scores to [0, scale].
Potential learned_potential(const GridworldMDP& mdp, const model::RewardModel& model,
                            const synth::SynthEncoder& encoder,
                            const model::GoalEmbedding& goal, const synth::Vec3& target,
                            std::uint64_t seed, double scale = 1.0);

struct InvarianceCheck {
  std::string potential;
  std::size_t states_compared = 0;
  std::size_t policy_mismatches = 0;
  double max_value_identity_error = 0.0;  // max |V'(s) - (V(s) - phi(s))|
};

InvarianceCheck check_invariance(const GridworldMDP& mdp, const Potential& phi);

/// Shaping from partially observed potentials: each transition sees its own
/// noisy/occluded score draws, so F is no longer potential-based.
struct DegradationProbe {
  double occlusion_rate = 0.0;
  std::size_t trials = 0;
  std::size_t states_compared = 0;
  std::size_t policy_mismatches = 0;

  double divergence_frequency() const {
    return states_compared ? static_cast<double>(policy_mismatches) /
                                 static_cast<double>(states_compared)
                           : 0.0;
  }
};

DegradationProbe occlusion_probe(const GridworldMDP& mdp, const model::RewardModel& model,
                                 const synth::SynthEncoder& encoder,
                                 const model::GoalEmbedding& goal, const synth::Vec3& target,
                                 std::size_t trials, std::uint64_t seed);

struct SpeedupArm {
  std::string name;
  std::vector<std::optional<std::size_t>> first_success;  // per seed
  std::vector<std::vector<std::size_t>> steps;             // per seed, per episode
  double median = 0.0;  // unsolved seeds count as episodes + 1
};

struct SpeedupStudy {
  std::vector<SpeedupArm> arms;  // arms[0] is the sparse baseline
};

SpeedupStudy speedup_study(const GridworldMDP& mdp, const std::vector<Potential>& potentials,
                           std::size_t seeds, std::uint64_t base_seed,
                           const QLearningConfig& config = {});

nlohmann::json to_json(const InvarianceCheck& c);
nlohmann::json to_json(const DegradationProbe& p);
nlohmann::json to_json(const SpeedupStudy& s);

}  // namespace rwd::shaping
