#include "rwd/synth/world.hpp"

#include <algorithm>
#include <cmath>

#include "rwd/error.hpp"

namespace rwd::synth {
namespace {

constexpr double kGraspRadius = 0.02;
constexpr double kArrivalTol = 1e-9;

double clip(double v) { return std::clamp(v, kWorkspaceLo, kWorkspaceHi); }

Vec3 clip(const Vec3& v) { return {clip(v[0]), clip(v[1]), clip(v[2])}; }

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

/// Scales `d` down to at most `cap` in Euclidean norm.
Vec3 capped(const Vec3& d, double cap) {
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (n <= cap) return d;
  const double s = cap / n;
  return {d[0] * s, d[1] * s, d[2] * s};
}

Vec3 random_point(Rng& rng, double lo = kWorkspaceLo, double hi = kWorkspaceHi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

struct Action {
  Vec3 delta{};
  double grip = 0.0;
};

LatentState apply(const LatentState& s, const Action& a, double max_speed) {
  LatentState next = s;
  const bool holding = s.grip > 0.5 && a.grip > 0.5 && distance(s.tcp, s.object) < kGraspRadius;
  next.tcp = clip(add(s.tcp, capped(a.delta, max_speed)));
  if (holding) next.object = clip(add(s.object, sub(next.tcp, s.tcp)));
  next.grip = a.grip;
  return next;
}

Action expert_action(const LatentState& s) {
  const double reach = distance(s.tcp, s.object);
  if (reach > kArrivalTol && !(s.grip > 0.5 && reach < kGraspRadius)) {
    return {sub(s.object, s.tcp), 0.0};
  }
  if (s.grip <= 0.5) return {{0.0, 0.0, 0.0}, 1.0};
  return {sub(s.target, s.object), 1.0};
}

Action random_action(Rng& rng, double max_speed) {
  return {random_point(rng, -max_speed, max_speed), rng.bernoulli(0.5) ? 1.0 : 0.0};
}

SynthTrajectory rollout_forward(const SynthTask& task, const PolicyConfig& policy,
                                std::size_t horizon, Rng& rng) {
  LatentState s;
  s.tcp = random_point(rng);
  s.object = random_point(rng);
  s.target = task.target;
  s.grip = 0.0;

  SynthTrajectory traj;
  traj.reserve(horizon);
  Action held;
  std::size_t held_left = 0;
  bool exploring = false;
  for (std::size_t t = 0; t < horizon; ++t) {
    traj.push_back({s, ground_truth_reward(Variant::kForward, s)});
    if (t + 1 == horizon) break;
    Action a;
    switch (policy.kind) {
      case PolicyKind::kRandomRepeat:
        if (held_left == 0) {
          held = random_action(rng, policy.max_speed);
          held_left = policy.repeat_n;
        }
        a = held;
        --held_left;
        break;
      case PolicyKind::kExpert:
        a = expert_action(s);
        break;
      case PolicyKind::kMixed:
        if (!exploring && traj.back().reward > policy.solved_threshold) {
          exploring = true;
          held_left = policy.repeat_n * (1 + rng.index(3));
        }
        if (exploring && held_left > 0) {
          if (held_left % policy.repeat_n == 0 || t == 0) held = random_action(rng, policy.max_speed);
          a = held;
          if (--held_left == 0) exploring = false;
        } else {
          a = expert_action(s);
        }
        break;
    }
    s = apply(s, a, policy.max_speed);
  }
  return traj;
}

}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::string to_string(Variant v) { return v == Variant::kForward ? "forward" : "reverse"; }

double ground_truth_reward(Variant variant, const LatentState& s) {
  const double r = 0.5 * (1.0 - std::tanh(5.0 * distance(s.tcp, s.object))) +
                   0.5 * (1.0 - std::tanh(5.0 * distance(s.object, s.target)));
  return variant == Variant::kForward ? r : 1.0 - r;
}

SynthEncoder::SynthEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.num_views == 0 || config.tokens_per_view == 0 || config.token_dim == 0) {
    throw ConfigError("encoder geometry must be positive");
  }
  if (!(config.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!(config.occlusion_rate >= 0.0 && config.occlusion_rate <= 1.0)) {
    throw ConfigError("occlusion_rate must lie in [0, 1]");
  }
  Rng rng(seed);
  const std::size_t units = config.num_views * config.tokens_per_view * config.token_dim;
  const double scale = 2.0 / std::sqrt(static_cast<double>(kFeatureDim));
  weights_.resize(units * kFeatureDim);
  biases_.resize(units);
  for (double& w : weights_) w = rng.normal(0.0, scale);
  for (double& b : biases_) b = rng.uniform(-1.0, 1.0);
}

std::span<const double> SynthEncoder::weights(std::size_t view) const {
  const std::size_t per_view = view_width() * kFeatureDim;
  return std::span<const double>(weights_).subspan(view * per_view, per_view);
}

void SynthEncoder::encode(const LatentState& state, std::size_t view, Rng& rng,
                          std::span<float> out) const {
  if (view >= config_.num_views) throw DimensionError("encode: view index out of range");
  if (out.size() != view_width()) throw DimensionError("encode: output span has wrong size");

  // Coordinates rescaled to roughly [-1, 1].
  const double k = 1.0 / kWorkspaceHi;
  std::array<double, kFeatureDim> f{state.tcp[0] * k,    state.tcp[1] * k,    state.tcp[2] * k,
                                    state.object[0] * k, state.object[1] * k, state.object[2] * k,
                                    state.target[0] * k, state.target[1] * k, state.target[2] * k,
                                    2.0 * state.grip - 1.0};
  if (config_.occlusion_rate > 0.0 && rng.bernoulli(config_.occlusion_rate)) {
    f[3] = f[4] = f[5] = 0.0;
  }
  const double* w = weights(view).data();
  const double* b = biases_.data() + view * view_width();
  for (std::size_t u = 0; u < view_width(); ++u) {
    double acc = b[u];
    for (std::size_t j = 0; j < kFeatureDim; ++j) acc += w[u * kFeatureDim + j] * f[j];
    double v = std::tanh(acc);
    if (config_.noise_sigma > 0.0) v += rng.normal(0.0, config_.noise_sigma);
    out[u] = static_cast<float>(v);
  }
}

std::vector<float> SynthEncoder::encode_all(const LatentState& state, Rng& rng) const {
  std::vector<float> out(config_.num_views * view_width());
  for (std::size_t v = 0; v < config_.num_views; ++v) {
    encode(state, v, rng, std::span(out).subspan(v * view_width(), view_width()));
  }
  return out;
}

std::vector<SynthTrajectory> generate_trajectories(const SynthTask& task,
                                                   const PolicyConfig& policy,
                                                   std::size_t episodes, std::size_t horizon,
                                                   std::uint64_t seed) {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (policy.repeat_n < 1) throw ConfigError("action repeat must be >= 1");
  std::vector<SynthTrajectory> out;
  out.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, e));
    SynthTrajectory traj = rollout_forward(task, policy, horizon, rng);
    if (task.variant == Variant::kReverse && policy.kind != PolicyKind::kRandomRepeat) {
      std::reverse(traj.begin(), traj.end());
    }
    for (auto& step : traj) step.reward = ground_truth_reward(task.variant, step.state);
    out.push_back(std::move(traj));
  }
  return out;
}

void WorldConfig::validate() const {
  if (tasks == 0) throw UsageError("--tasks must be >= 1");
  if (episodes == 0) throw UsageError("--episodes must be >= 1");
  if (horizon == 0) throw UsageError("--horizon must be >= 1");
  if (action_repeat == 0) throw UsageError("--action-repeat must be >= 1");
  if (prompts == 0) throw UsageError("--prompts must be >= 1");
  if (!(paraphrase_fraction >= 0.0 && paraphrase_fraction <= 0.1)) {
    throw UsageError("paraphrase fraction must lie in [0, 0.1]");
  }
  if (geometry.num_views == 0 || geometry.tokens_per_view == 0 || geometry.token_dim == 0 ||
      geometry.goal_dim == 0) {
    throw UsageError("embedding geometry must be positive");
  }
  if (!(noise_sigma >= 0.0)) throw UsageError("--noise-sigma must be >= 0");
  if (!(occlusion_rate >= 0.0 && occlusion_rate <= 1.0)) {
    throw UsageError("--occlusion-rate must lie in [0, 1]");
  }
  if (!targets.empty() && targets.size() != tasks) {
    throw UsageError("explicit targets must match the task count");
  }
}

std::vector<SynthTask> make_tasks(const WorldConfig& config) {
  config.validate();
  static const char* kForwardTemplates[] = {"move the object to target {}",
                                            "place the object at goal {}",
                                            "put the object onto target {}",
                                            "bring the object over to marker {}"};
  static const char* kReverseTemplates[] = {"move the object away from target {}",
                                            "take the object off goal {}",
                                            "remove the object from target {}",
                                            "carry the object away from marker {}"};
  auto render = [](const char* tmpl, std::uint32_t k, std::size_t p) {
    std::string s = tmpl;
    const auto pos = s.find("{}");
    s.replace(pos, 2, std::to_string(k));
    if (p >= 4) s += " (variant " + std::to_string(p) + ")";
    return s;
  };

  const std::size_t dim = config.geometry.goal_dim;
  Rng world(derive_seed(config.world_seed, 0xA11));
  auto gaussian = [&](double scale) {
    std::vector<double> v(dim);
    for (double& x : v) x = world.normal(0.0, scale / std::sqrt(static_cast<double>(dim)));
    return v;
  };
  const std::vector<double> variant_dir[2] = {gaussian(1.0), gaussian(1.0)};

  std::vector<SynthTask> tasks;
  for (std::uint32_t k = 0; k < config.tasks; ++k) {
    const Vec3 target = config.targets.empty() ? random_point(world, -0.15, 0.15) : config.targets[k];
    const auto task_vec = gaussian(1.0);
    const std::uint64_t encoder_seed = derive_seed(config.world_seed, 0xE2C, k);
    for (Variant v : {Variant::kForward, Variant::kReverse}) {
      if (v == Variant::kReverse && !config.variants) continue;
      SynthTask t;
      t.base_index = k;
      t.id = "task" + std::to_string(k) + "/" + to_string(v);
      t.variant = v;
      t.target = target;
      t.encoder_seed = encoder_seed;
      std::vector<double> base(dim);
      const auto& dir = variant_dir[v == Variant::kForward ? 0 : 1];
      for (std::size_t i = 0; i < dim; ++i) base[i] = task_vec[i] + dir[i];
      double base_norm = 0.0;
      for (double x : base) base_norm += x * x;
      base_norm = std::sqrt(base_norm);
      for (std::size_t p = 0; p < config.prompts; ++p) {
        const auto& templates = v == Variant::kForward ? kForwardTemplates : kReverseTemplates;
        t.prompt_texts.push_back(render(templates[p % 4], k, p));
        std::vector<double> noise = gaussian(1.0);
        double nn = 0.0;
        for (double x : noise) nn += x * x;
        nn = std::sqrt(nn);
        // The first paraphrase is the base phrasing; the rest are perturbed
        // by at most paraphrase_fraction of the base norm.
        const double mag =
            p == 0 ? 0.0 : config.paraphrase_fraction * base_norm * world.uniform(0.5, 1.0);
        std::vector<float> emb(dim);
        for (std::size_t i = 0; i < dim; ++i) {
          emb[i] = static_cast<float>(base[i] + (nn > 0 ? mag * noise[i] / nn : 0.0));
        }
        t.prompt_embeddings.push_back(std::move(emb));
      }
      tasks.push_back(std::move(t));
    }
  }
  return tasks;
}

SynthEncoder make_encoder(const WorldConfig& config, const SynthTask& task) {
  EncoderConfig ec{.num_views = config.geometry.num_views,
                   .tokens_per_view = config.geometry.tokens_per_view,
                   .token_dim = config.geometry.token_dim,
                   .noise_sigma = config.noise_sigma,
                   .occlusion_rate = config.occlusion_rate};
  return SynthEncoder(ec, task.encoder_seed);
}

data::Dataset generate_dataset(const WorldConfig& config) {
  const auto tasks = make_tasks(config);
  data::Dataset ds;
  ds.geometry = config.geometry;
  ds.view_configs = {"default"};

  for (const auto& t : tasks) {
    data::TaskInfo info;
    info.id = t.id;
    info.base_task = "task" + std::to_string(t.base_index);
    info.variant = to_string(t.variant);
    for (std::size_t p = 0; p < t.prompt_embeddings.size(); ++p) {
      const auto id = static_cast<std::uint32_t>(ds.goals.size());
      ds.goals.push_back({id, t.prompt_embeddings[p]});
      info.prompts.push_back(
          {t.prompt_texts[p], id, config.prompts >= 2 && p + 1 == t.prompt_embeddings.size()});
    }
    ds.tasks.push_back(std::move(info));
  }

  const PolicyKind rotation[] = {PolicyKind::kRandomRepeat, PolicyKind::kExpert, PolicyKind::kMixed};
  const data::PolicyTag tags[] = {data::PolicyTag::kRandom, data::PolicyTag::kExpert,
                                  data::PolicyTag::kMixed};
  std::uint32_t next_id = 0;
  for (std::uint32_t ti = 0; ti < tasks.size(); ++ti) {
    const SynthTask& task = tasks[ti];
    const SynthEncoder encoder = make_encoder(config, task);
    const std::size_t first_traj = ds.trajectories.size();
    for (std::size_t e = 0; e < config.episodes; ++e) {
      const std::size_t kind = e % 3;
      PolicyConfig pc{.kind = rotation[kind],
                      .repeat_n = config.action_repeat,
                      .max_speed = config.max_speed};
      const std::uint64_t ep_seed = derive_seed(config.seed, ti, e);
      auto traj = generate_trajectories(task, pc, 1, config.horizon, ep_seed).front();

      data::Trajectory tr;
      tr.id = next_id++;
      tr.task = ti;
      tr.policy = tags[kind];
      tr.first_step = ds.steps.size();
      tr.step_count = traj.size();
      tr.embeddings.reserve(traj.size() * config.geometry.sample_width());
      Rng noise(derive_seed(ep_seed, 0x0B5));
      for (std::size_t s = 0; s < traj.size(); ++s) {
        const auto emb = encoder.encode_all(traj[s].state, noise);
        tr.embeddings.insert(tr.embeddings.end(), emb.begin(), emb.end());
        data::StepRecord rec;
        rec.task = ti;
        rec.trajectory = static_cast<std::uint32_t>(ds.trajectories.size());
        rec.trajectory_id = tr.id;
        rec.step_index = static_cast<std::uint32_t>(s);
        rec.reward_raw = traj[s].reward;
        rec.cartesian = traj[s].state.tcp;
        rec.success = traj[s].reward > 0.95;
        ds.steps.push_back(rec);
      }
      ds.trajectories.push_back(std::move(tr));
    }

    // Normalize over everything collected for this task, or reuse a stored range.
    const std::size_t begin = ds.trajectories[first_traj].first_step;
    auto task_steps = std::span(ds.steps).subspan(begin, ds.steps.size() - begin);
    data::RewardRange range{};
    if (auto it = config.reward_ranges.find(task.id); it != config.reward_ranges.end()) {
      range = it->second;
      ds.clamped_rewards += data::apply_normalization(task_steps, range);
    } else {
      range = data::normalize_rewards(task_steps);
    }
    ds.tasks[ti].reward_min = range.min;
    ds.tasks[ti].reward_max = range.max;
  }

  ds.generation = {{"tasks", config.tasks},
                   {"variants", config.variants},
                   {"episodes", config.episodes},
                   {"horizon", config.horizon},
                   {"action_repeat", config.action_repeat},
                   {"prompts", config.prompts},
                   {"paraphrase_fraction", config.paraphrase_fraction},
                   {"max_speed", config.max_speed},
                   {"noise_sigma", config.noise_sigma},
                   {"occlusion_rate", config.occlusion_rate},
                   {"world_seed", config.world_seed},
                   {"seed", config.seed},
                   {"policy_rotation", {"random", "expert", "mixed"}}};
  if (!config.targets.empty()) ds.generation["targets"] = config.targets;
  data::validate(ds);
  return ds;
}

WorldConfig world_config_from_dataset(const data::Dataset& ds) {
  const auto& g = ds.generation;
  WorldConfig c;
  try {
    c.tasks = g.at("tasks").get<std::size_t>();
    c.variants = g.at("variants").get<bool>();
    c.episodes = g.at("episodes").get<std::size_t>();
    c.horizon = g.at("horizon").get<std::size_t>();
    c.action_repeat = g.at("action_repeat").get<std::size_t>();
    c.prompts = g.at("prompts").get<std::size_t>();
    c.paraphrase_fraction = g.at("paraphrase_fraction").get<double>();
    c.max_speed = g.at("max_speed").get<double>();
    c.noise_sigma = g.at("noise_sigma").get<double>();
    c.occlusion_rate = g.at("occlusion_rate").get<double>();
    c.world_seed = g.at("world_seed").get<std::uint64_t>();
    c.seed = g.at("seed").get<std::uint64_t>();
    if (g.contains("targets")) c.targets = g.at("targets").get<std::vector<Vec3>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset generation record: ") + e.what());
  }
  c.geometry = ds.geometry;
  for (const auto& t : ds.tasks) c.reward_ranges[t.id] = {t.reward_min, t.reward_max};
  c.validate();
  return c;
}

}  // namespace rwd::synth
