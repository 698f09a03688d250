#include "rwd/shaping/shaping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rwd/error.hpp"
#include "rwd/rng.hpp"

namespace rwd::shaping {
using nlohmann::json;

std::string to_string(Action a) {
  switch (a) {
    case Action::kUp: return "up";
    case Action::kRight: return "right";
    case Action::kDown: return "down";
    case Action::kLeft: return "left";
  }
  return "up";
}

void GridworldMDP::validate() const {
  if (width == 0 || height == 0) throw ConfigError("gridworld must have positive size");
  if (start.x >= width || start.y >= height || goal.x >= width || goal.y >= height) {
    throw ConfigError("gridworld start and goal must lie on the grid");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gridworld discount must lie in (0, 1)");
  if (!std::isfinite(step_cost) || !std::isfinite(goal_reward)) {
    throw ConfigError("gridworld rewards must be finite");
  }
}

std::size_t GridworldMDP::next(std::size_t s, Action a) const {
  if (s >= cells() || is_goal(s)) return exit_state();
  Cell c = cell(s);
  // y grows downwards: "up" decrements the row.
  switch (a) {
    case Action::kUp:
      if (c.y > 0) --c.y;
      break;
    case Action::kRight:
      if (c.x + 1 < width) ++c.x;
      break;
    case Action::kDown:
      if (c.y + 1 < height) ++c.y;
      break;
    case Action::kLeft:
      if (c.x > 0) --c.x;
      break;
  }
  return index(c);
}

std::size_t GridworldMDP::manhattan_to_goal(std::size_t s) const {
  const Cell c = cell(s);
  auto d = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
  return d(c.x, goal.x) + d(c.y, goal.y);
}

RewardFn base_reward(const GridworldMDP& mdp) {
  return [mdp](std::size_t s, Action, std::size_t) {
    return mdp.is_goal(s) ? mdp.goal_reward : -mdp.step_cost;
  };
}

RewardFn shape(RewardFn base, const Potential& phi, double gamma) {
  for (double v : phi.values) {
    if (!std::isfinite(v)) throw NumericError("potential " + phi.name + " has non-finite values");
  }
  return [base = std::move(base), phi, gamma](std::size_t s, Action a, std::size_t next) {
    return base(s, a, next) + gamma * phi.at(next) - phi.at(s);
  };
}

double discounted_shaping(const std::vector<std::size_t>& states, const Potential& phi,
                          double gamma) {
  double acc = 0.0, discount = 1.0;
  for (std::size_t t = 0; t + 1 < states.size(); ++t) {
    acc += discount * (gamma * phi.at(states[t + 1]) - phi.at(states[t]));
    discount *= gamma;
  }
  return acc;
}

Action greedy_action(const std::array<double, 4>& q, double tie_tol) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < 4; ++k) {
    if (q[k] > q[best] + tie_tol) best = k;
  }
  return kActions[best];
}

namespace {

std::array<double, 4> backup(const GridworldMDP& mdp, const RewardFn& reward,
                             const std::vector<double>& v, std::size_t s) {
  std::array<double, 4> q{};
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t n = mdp.next(s, kActions[k]);
    const double vn = n == mdp.exit_state() ? 0.0 : v[n];
    q[k] = reward(s, kActions[k], n) + mdp.gamma * vn;
  }
  return q;
}

}  // namespace

ValueResult value_iteration(const GridworldMDP& mdp, const RewardFn& reward, double tol,
                            std::size_t max_iterations) {
  mdp.validate();
  const std::size_t n = mdp.cells();
  ValueResult r;
  r.values.assign(n, 0.0);
  std::vector<double> next(n);
  // Contraction bound: |V_k+1 - V*| <= gamma / (1 - gamma) |V_k+1 - V_k|.
  const double stop = tol * (1.0 - mdp.gamma) / mdp.gamma;
  for (r.iterations = 1; r.iterations <= max_iterations; ++r.iterations) {
    double delta = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const auto q = backup(mdp, reward, r.values, s);
      next[s] = *std::max_element(q.begin(), q.end());
      if (!std::isfinite(next[s])) throw NumericError("value iteration diverged");
      delta = std::max(delta, std::abs(next[s] - r.values[s]));
    }
    r.values.swap(next);
    if (delta <= stop) break;
  }
  if (r.iterations > max_iterations) throw NumericError("value iteration did not converge");
  r.policy.resize(n);
  for (std::size_t s = 0; s < n; ++s) r.policy[s] = greedy_action(backup(mdp, reward, r.values, s));
  return r;
}

std::optional<std::size_t> greedy_path_length(const GridworldMDP& mdp,
                                              const std::vector<Action>& policy, std::size_t cap) {
  std::size_t s = mdp.index(mdp.start);
  for (std::size_t t = 0; t <= cap; ++t) {
    if (mdp.is_goal(s)) return t;
    s = mdp.next(s, policy.at(s));
  }
  return std::nullopt;
}

QLearningResult q_learning(const GridworldMDP& mdp, const RewardFn& reward, std::uint64_t seed,
                           const QLearningConfig& config) {
  mdp.validate();
  const std::size_t n = mdp.cells();
  std::vector<std::array<double, 4>> q(n, std::array<double, 4>{});
  Rng rng(seed);
  // The goal's value is the single exit transition; it needs no learning.
  const std::size_t goal = mdp.index(mdp.goal);
  const double terminal = reward(goal, Action::kUp, mdp.exit_state());
  auto value = [&](std::size_t s) {
    return s == goal ? terminal : *std::max_element(q[s].begin(), q[s].end());
  };

  QLearningResult r;
  double eps = config.epsilon;
  for (std::size_t ep = 1; ep <= config.episodes; ++ep) {
    std::size_t s = mdp.index(mdp.start);
    std::size_t t = 0;
    while (!mdp.is_goal(s) && t < config.horizon) {
      std::size_t k;
      if (rng.bernoulli(eps)) {
        k = rng.index(4);
      } else {
        // Random tie-break while acting so all-zero rows do not pin one action.
        const double best = *std::max_element(q[s].begin(), q[s].end());
        std::array<std::size_t, 4> ties{};
        std::size_t m = 0;
        for (std::size_t j = 0; j < 4; ++j) {
          if (q[s][j] == best) ties[m++] = j;
        }
        k = ties[m == 1 ? 0 : rng.index(m)];
      }
      const std::size_t nx = mdp.next(s, kActions[k]);
      const double target = reward(s, kActions[k], nx) + mdp.gamma * value(nx);
      q[s][k] += config.alpha * (target - q[s][k]);
      s = nx;
      ++t;
    }
    r.steps.push_back(t);
    r.success.push_back(mdp.is_goal(s));
    eps *= config.epsilon_decay;

    if (!r.first_success) {
      std::vector<Action> policy(n);
      for (std::size_t c = 0; c < n; ++c) policy[c] = greedy_action(q[c], 0.0);
      if (greedy_path_length(mdp, policy, config.horizon)) r.first_success = ep;
    }
  }
  r.greedy_policy.resize(n);
  for (std::size_t c = 0; c < n; ++c) r.greedy_policy[c] = greedy_action(q[c], 0.0);
  return r;
}

Potential manhattan_potential(const GridworldMDP& mdp, double scale) {
  Potential p{"manhattan", std::vector<double>(mdp.cells())};
  const double span = static_cast<double>(std::max<std::size_t>(mdp.width + mdp.height - 2, 1));
  for (std::size_t s = 0; s < mdp.cells(); ++s) {
    p.values[s] = scale * (1.0 - static_cast<double>(mdp.manhattan_to_goal(s)) / span);
  }
  return p;
}

Potential random_potential(const GridworldMDP& mdp, std::uint64_t seed, double scale) {
  Rng rng(seed);
  Potential p{"random:" + std::to_string(seed), std::vector<double>(mdp.cells())};
  for (double& v : p.values) v = rng.uniform(-scale, scale);
  return p;
}

GridEmbedding GridEmbedding::fit(const GridworldMDP& mdp, const synth::Vec3& target) {
  GridEmbedding e;
  e.target = target;
  e.spacing = 0.05;
  const std::array<std::size_t, 2> size{mdp.width, mdp.height};
  const std::array<std::size_t, 2> goal{mdp.goal.x, mdp.goal.y};
  auto limit = [](double room, std::size_t cells) {
    return cells == 0 ? INFINITY : 0.95 * room / static_cast<double>(cells);
  };
  for (int axis = 0; axis < 2; ++axis) {
    const std::size_t below = goal[axis], above = size[axis] - 1 - goal[axis];
    const double lo_room = target[axis] - synth::kWorkspaceLo;
    const double hi_room = synth::kWorkspaceHi - target[axis];
    // Grid direction +1 puts cells above the goal toward the upper wall.
    const double plus = std::min(limit(hi_room, above), limit(lo_room, below));
    const double minus = std::min(limit(lo_room, above), limit(hi_room, below));
    e.direction[axis] = plus >= minus ? 1.0 : -1.0;
    e.spacing = std::min(e.spacing, std::max(plus, minus));
  }
  return e;
}

synth::LatentState GridEmbedding::state(const GridworldMDP& mdp, std::size_t s) const {
  const Cell c = mdp.cell(s);
  synth::Vec3 p = target;
  p[0] += direction[0] * (static_cast<double>(c.x) - static_cast<double>(mdp.goal.x)) * spacing;
  p[1] += direction[1] * (static_cast<double>(c.y) - static_cast<double>(mdp.goal.y)) * spacing;
  for (double& v : p) v = std::clamp(v, synth::kWorkspaceLo, synth::kWorkspaceHi);
  return {p, target, target, 0.0};
}

namespace {

double cell_score(const model::RewardModel& model, const synth::SynthEncoder& encoder,
                  const model::GoalEmbedding& goal, const synth::LatentState& state, Rng& rng) {
  return model.score(encoder.encode_all(state, rng), goal);
}

}  // namespace

Potential learned_potential(const GridworldMDP& mdp, const model::RewardModel& model,
                            const synth::SynthEncoder& encoder, const model::GoalEmbedding& goal,
                            const synth::Vec3& target, std::uint64_t seed, double scale) {
  const auto emb = GridEmbedding::fit(mdp, target);
  Rng rng(seed);
  Potential p{"learned", std::vector<double>(mdp.cells())};
  for (std::size_t s = 0; s < mdp.cells(); ++s) {
    p.values[s] = cell_score(model, encoder, goal, emb.state(mdp, s), rng);
  }
  const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
  const double a = *lo, range = *hi - *lo;
  for (double& v : p.values) v = range > 0.0 ? scale * (v - a) / range : 0.0;
  return p;
}

TaskScene task_scene(const data::Dataset& ds, const std::string& task_id,
                     double occlusion_rate) {
  auto config = synth::world_config_from_dataset(ds);
  if (occlusion_rate >= 0.0) config.occlusion_rate = occlusion_rate;
  const auto tasks = synth::make_tasks(config);
  for (std::size_t i = 0; i < tasks.size() && i < ds.tasks.size(); ++i) {
    const bool match = task_id.empty() ? tasks[i].variant == synth::Variant::kForward
                                       : tasks[i].id == task_id;
    if (!match) continue;
    const auto prompts = ds.tasks[i].train_prompts();
    if (prompts.empty()) throw ConfigError("task " + tasks[i].id + " has no training prompt");
    return {synth::make_encoder(config, tasks[i]), ds.goals.at(prompts.front()), tasks[i].target};
  }
  throw UsageError("unknown task '" + task_id + "'");
}

InvarianceCheck check_invariance(const GridworldMDP& mdp, const Potential& phi) {
  const auto base = value_iteration(mdp, base_reward(mdp));
  const auto shaped = value_iteration(mdp, shape(base_reward(mdp), phi, mdp.gamma));
  InvarianceCheck c;
  c.potential = phi.name;
  for (std::size_t s = 0; s < mdp.cells(); ++s) {
    c.max_value_identity_error = std::max(
        c.max_value_identity_error, std::abs(shaped.values[s] - (base.values[s] - phi.at(s))));
    if (mdp.is_goal(s)) continue;
    ++c.states_compared;
    c.policy_mismatches += base.policy[s] != shaped.policy[s];
  }
  return c;
}

DegradationProbe occlusion_probe(const GridworldMDP& mdp, const model::RewardModel& model,
                                 const synth::SynthEncoder& encoder,
                                 const model::GoalEmbedding& goal, const synth::Vec3& target,
                                 std::size_t trials, std::uint64_t seed) {
  const auto emb = GridEmbedding::fit(mdp, target);
  const auto base = value_iteration(mdp, base_reward(mdp));
  DegradationProbe probe;
  probe.occlusion_rate = encoder.config().occlusion_rate;
  probe.trials = trials;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, trial));
    // Per transition: the potential of s and of s' come from separate observations.
    std::vector<std::array<double, 4>> phi_src(mdp.cells()), phi_dst(mdp.cells());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t s = 0; s < mdp.cells(); ++s) {
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t n = mdp.next(s, kActions[k]);
        phi_src[s][k] = cell_score(model, encoder, goal, emb.state(mdp, s), rng);
        phi_dst[s][k] = n == mdp.exit_state()
                            ? 0.0
                            : cell_score(model, encoder, goal, emb.state(mdp, n), rng);
        lo = std::min({lo, phi_src[s][k], n == mdp.exit_state() ? lo : phi_dst[s][k]});
        hi = std::max({hi, phi_src[s][k], n == mdp.exit_state() ? hi : phi_dst[s][k]});
      }
    }
    const double range = hi > lo ? hi - lo : 1.0;
    auto norm = [&](double v) { return (v - lo) / range; };
    auto reward = [&, r0 = base_reward(mdp)](std::size_t s, Action a, std::size_t n) {
      const auto k = static_cast<std::size_t>(a);
      const double dst = n == mdp.exit_state() ? 0.0 : norm(phi_dst[s][k]);
      return r0(s, a, n) + mdp.gamma * dst - norm(phi_src[s][k]);
    };
    const auto shaped = value_iteration(mdp, reward);
    for (std::size_t s = 0; s < mdp.cells(); ++s) {
      if (mdp.is_goal(s)) continue;
      ++probe.states_compared;
      probe.policy_mismatches += base.policy[s] != shaped.policy[s];
    }
  }
  return probe;
}

SpeedupStudy speedup_study(const GridworldMDP& mdp, const std::vector<Potential>& potentials,
                           std::size_t seeds, std::uint64_t base_seed,
                           const QLearningConfig& config) {
  SpeedupStudy study;
  auto run_arm = [&](const std::string& name, const RewardFn& reward) {
    SpeedupArm arm;
    arm.name = name;
    std::vector<double> eps;
    for (std::size_t k = 0; k < seeds; ++k) {
      // Arms share seeds so they differ only in the reward.
      auto r = q_learning(mdp, reward, derive_seed(base_seed, k), config);
      arm.first_success.push_back(r.first_success);
      arm.steps.push_back(std::move(r.steps));
      eps.push_back(static_cast<double>(r.first_success.value_or(config.episodes + 1)));
    }
    std::sort(eps.begin(), eps.end());
    const std::size_t m = eps.size();
    arm.median = m == 0 ? 0.0 : (m % 2 ? eps[m / 2] : 0.5 * (eps[m / 2 - 1] + eps[m / 2]));
    study.arms.push_back(std::move(arm));
  };
  run_arm("sparse", base_reward(mdp));
  for (const auto& phi : potentials) {
    run_arm("shaped:" + phi.name, shape(base_reward(mdp), phi, mdp.gamma));
  }
  return study;
}

json to_json(const InvarianceCheck& c) {
  return {{"potential", c.potential},
          {"states_compared", c.states_compared},
          {"policy_mismatches", c.policy_mismatches},
          {"max_value_identity_error", c.max_value_identity_error},
          {"invariant", c.policy_mismatches == 0}};
}

json to_json(const DegradationProbe& p) {
  return {{"occlusion_rate", p.occlusion_rate},
          {"trials", p.trials},
          {"states_compared", p.states_compared},
          {"policy_mismatches", p.policy_mismatches},
          {"divergence_frequency", p.divergence_frequency()}};
}

json to_json(const SpeedupStudy& s) {
  json arms = json::array();
  for (const auto& a : s.arms) {
    json firsts = json::array();
    for (const auto& f : a.first_success) {
      if (f) firsts.push_back(*f);
      else firsts.push_back(nullptr);
    }
    arms.push_back({{"name", a.name},
                    {"first_success", firsts},
                    {"median", a.median},
                    {"steps_per_episode", a.steps}});
  }
  return {{"arms", arms}};
}

}  // namespace rwd::shaping
