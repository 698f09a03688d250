#include "rwd/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "rwd/error.hpp"
#include "rwd/rng.hpp"

namespace rwd::data {

void DataConfig::validate() const {
  if (!(eps_c > 0.0) || !(eps_r > 0.0) || !(pair_min_gap > 0.0)) {
    throw ConfigError("data config: eps_c, eps_r and pair_min_gap must be positive");
  }
  if (action_repeat_n == 0) throw ConfigError("data config: action_repeat_n must be >= 1");
}

std::string to_string(PolicyTag tag) {
  switch (tag) {
    case PolicyTag::kRandom: return "random";
    case PolicyTag::kExpert: return "expert";
    case PolicyTag::kMixed: return "mixed";
  }
  return "random";
}

PolicyTag parse_policy_tag(const std::string& s) {
  if (s == "random") return PolicyTag::kRandom;
  if (s == "expert") return PolicyTag::kExpert;
  if (s == "mixed") return PolicyTag::kMixed;
  throw FormatError("unknown policy tag \"" + s + "\"");
}

std::vector<std::uint32_t> TaskInfo::train_prompts() const {
  std::vector<std::uint32_t> out;
  for (const auto& p : prompts) {
    if (!p.heldout) out.push_back(p.embedding_id);
  }
  return out;
}

std::vector<std::uint32_t> TaskInfo::heldout_prompts() const {
  std::vector<std::uint32_t> out;
  for (const auto& p : prompts) {
    if (p.heldout) out.push_back(p.embedding_id);
  }
  return out;
}

std::span<const float> Dataset::views(const StepRecord& step) const {
  const Trajectory& t = trajectories.at(step.trajectory);
  const std::size_t w = geometry.sample_width();
  return std::span<const float>(t.embeddings).subspan(step.step_index * w, w);
}

std::vector<std::size_t> Dataset::task_steps(std::uint32_t task) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].task == task) out.push_back(i);
  }
  return out;
}

std::uint32_t Dataset::task_index(const std::string& id) const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].id == id) return static_cast<std::uint32_t>(i);
  }
  throw ConfigError("unknown task \"" + id + "\"");
}

void validate(const Dataset& ds) {
  const std::size_t w = ds.geometry.sample_width();
  if (w == 0 || ds.geometry.goal_dim == 0) throw FormatError("dataset geometry has zero extent");
  if (ds.view_configs.empty()) throw FormatError("dataset has no view configurations");
  for (const auto& g : ds.goals) {
    if (g.vector.size() != ds.geometry.goal_dim) {
      throw FormatError("goal " + std::to_string(g.id) + " has dimension " +
                        std::to_string(g.vector.size()) + ", expected " +
                        std::to_string(ds.geometry.goal_dim));
    }
  }
  for (const auto& t : ds.tasks) {
    if (t.prompts.empty()) throw FormatError("task " + t.id + " has no prompts");
    for (const auto& p : t.prompts) {
      if (p.embedding_id >= ds.goals.size()) {
        throw FormatError("task " + t.id + " references missing prompt embedding " +
                          std::to_string(p.embedding_id));
      }
    }
    if (!(t.reward_max > t.reward_min)) {
      throw FormatError("task " + t.id + " has a degenerate reward range");
    }
  }
  std::size_t expected_first = 0;
  for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
    const auto& tr = ds.trajectories[k];
    if (tr.task >= ds.tasks.size()) throw FormatError("trajectory references unknown task");
    if (tr.first_step != expected_first) throw FormatError("trajectory step ranges not contiguous");
    if (tr.embeddings.size() != tr.step_count * w) {
      throw FormatError("trajectory " + std::to_string(tr.id) + ": embedding block holds " +
                        std::to_string(tr.embeddings.size()) + " values, expected " +
                        std::to_string(tr.step_count * w));
    }
    for (std::size_t s = 0; s < tr.step_count; ++s) {
      const StepRecord& st = ds.steps.at(tr.first_step + s);
      if (st.trajectory != k || st.step_index != s || st.task != tr.task ||
          st.trajectory_id != tr.id) {
        throw FormatError("step record " + std::to_string(tr.first_step + s) +
                          " is inconsistent with trajectory " + std::to_string(tr.id));
      }
      if (!(st.reward_norm >= 0.0 && st.reward_norm <= 1.0)) {
        throw FormatError("normalized reward out of [0, 1]");
      }
      for (double c : st.cartesian) {
        if (!std::isfinite(c)) throw FormatError("non-finite Cartesian coordinate");
      }
    }
    expected_first += tr.step_count;
  }
  if (expected_first != ds.steps.size()) throw FormatError("steps not covered by trajectories");
}

RewardRange normalize_rewards(std::span<StepRecord> steps) {
  if (steps.empty()) throw ConfigError("normalize_rewards: no steps");
  auto [lo, hi] = std::minmax_element(steps.begin(), steps.end(), [](const auto& a, const auto& b) {
    return a.reward_raw < b.reward_raw;
  });
  RewardRange range{lo->reward_raw, hi->reward_raw};
  if (!(range.max > range.min)) {
    throw ConfigError("normalize_rewards: degenerate task, all raw rewards equal " +
                      std::to_string(range.min));
  }
  apply_normalization(steps, range);
  return range;
}

std::size_t apply_normalization(std::span<StepRecord> steps, RewardRange range) {
  std::size_t clamped = 0;
  const double span = range.max - range.min;
  for (auto& s : steps) {
    double v = (s.reward_raw - range.min) / span;
    if (v < 0.0 || v > 1.0) {
      ++clamped;
      v = std::clamp(v, 0.0, 1.0);
    }
    s.reward_norm = v;
  }
  return clamped;
}

double denormalize(double reward_norm, RewardRange range) {
  return reward_norm * (range.max - range.min) + range.min;
}

BinKey bin_key(const StepRecord& step, const DataConfig& config) {
  auto cell = [](double v, double eps) { return static_cast<std::int64_t>(std::floor(v / eps)); };
  return {static_cast<std::int64_t>(step.task), cell(step.cartesian[0], config.eps_c),
          cell(step.cartesian[1], config.eps_c), cell(step.cartesian[2], config.eps_c),
          cell(step.reward_norm, config.eps_r)};
}

std::vector<std::size_t> dedup_bin(std::span<const StepRecord> steps, const DataConfig& config,
                                   std::span<const std::size_t> subset) {
  config.validate();
  std::vector<std::size_t> all;
  if (subset.empty()) {
    all.resize(steps.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    subset = all;
  }
  auto earlier = [&](std::size_t a, std::size_t b) {
    return std::tie(steps[a].trajectory_id, steps[a].step_index) <
           std::tie(steps[b].trajectory_id, steps[b].step_index);
  };
  std::map<BinKey, std::size_t> keep;
  for (std::size_t i : subset) {
    auto [it, inserted] = keep.try_emplace(bin_key(steps[i], config), i);
    if (!inserted && earlier(i, it->second)) it->second = i;
  }
  std::vector<std::size_t> out;
  out.reserve(keep.size());
  for (const auto& [key, idx] : keep) out.push_back(idx);
  std::sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(steps[a].task, steps[a].trajectory_id, steps[a].step_index) <
           std::tie(steps[b].task, steps[b].trajectory_id, steps[b].step_index);
  });
  return out;
}

Split split_by_bin(std::span<const StepRecord> steps, std::span<const std::size_t> indices,
                   const DataConfig& config, double heldout_fraction) {
  Split split;
  const auto threshold = static_cast<std::uint64_t>(heldout_fraction * 1e6);
  for (std::size_t i : indices) {
    std::uint64_t h = 0x5eed;
    for (std::int64_t k : bin_key(steps[i], config)) h = mix64(h ^ static_cast<std::uint64_t>(k));
    (h % 1000000 < threshold ? split.heldout : split.train).push_back(i);
  }
  return split;
}

PairSampler::PairSampler(const Dataset& ds, std::span<const std::size_t> subset,
                         const DataConfig& config, PromptSet prompts) {
  config.validate();
  std::vector<std::vector<std::size_t>> by_task(ds.tasks.size());
  for (std::size_t i : subset) by_task.at(ds.steps.at(i).task).push_back(i);

  for (std::uint32_t t = 0; t < ds.tasks.size(); ++t) {
    TaskPool pool;
    pool.task = t;
    switch (prompts) {
      case PromptSet::kTrain: pool.prompts = ds.tasks[t].train_prompts(); break;
      case PromptSet::kHeldout: pool.prompts = ds.tasks[t].heldout_prompts(); break;
      case PromptSet::kAll:
        for (const auto& p : ds.tasks[t].prompts) pool.prompts.push_back(p.embedding_id);
        break;
    }
    pool.steps = by_task[t];
    std::stable_sort(pool.steps.begin(), pool.steps.end(), [&](std::size_t a, std::size_t b) {
      return ds.steps[a].reward_norm < ds.steps[b].reward_norm;
    });
    for (std::size_t i : pool.steps) pool.rewards.push_back(ds.steps[i].reward_norm);

    const std::size_t n = pool.steps.size();
    pool.first_far.resize(n);
    pool.cumulative.resize(n);
    std::uint64_t total = 0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
      j = std::max(j, i + 1);
      while (j < n && pool.rewards[j] - pool.rewards[i] < config.pair_min_gap) ++j;
      pool.first_far[i] = j;
      total += n - j;
      pool.cumulative[i] = total;
    }
    if (total == 0) {
      if (!pool.steps.empty()) {
        warnings_.push_back("task " + ds.tasks[t].id + ": no step pair with reward gap >= " +
                            std::to_string(config.pair_min_gap) + ", skipped");
      }
      continue;
    }
    if (pool.prompts.empty()) {
      warnings_.push_back("task " + ds.tasks[t].id + ": no prompts in the requested set, skipped");
      continue;
    }
    pools_.push_back(std::move(pool));
  }
  if (pools_.empty()) {
    throw ConfigError("no task has a step pair with reward gap >= " +
                      std::to_string(config.pair_min_gap));
  }
}

PairSampleResult PairSampler::sample(std::uint64_t seed, std::size_t count) const {
  PairSampleResult result;
  result.warnings = warnings_;
  result.pairs.reserve(count);
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    const TaskPool& pool = pools_[rng.index(pools_.size())];
    const std::uint64_t u =
        std::uniform_int_distribution<std::uint64_t>(0, pool.cumulative.back() - 1)(rng.engine());
    const auto lo_it = std::upper_bound(pool.cumulative.begin(), pool.cumulative.end(), u);
    const auto lo = static_cast<std::size_t>(lo_it - pool.cumulative.begin());
    const std::uint64_t before = lo == 0 ? 0 : pool.cumulative[lo - 1];
    const std::size_t hi = pool.first_far[lo] + static_cast<std::size_t>(u - before);

    TrainingPair pair;
    pair.prompt_id = pool.prompts[rng.index(pool.prompts.size())];
    if (rng.bernoulli(0.5)) {
      pair.a = pool.steps[hi];
      pair.b = pool.steps[lo];
      pair.label = 1;
    } else {
      pair.a = pool.steps[lo];
      pair.b = pool.steps[hi];
      pair.label = -1;
    }
    result.pairs.push_back(pair);
  }
  return result;
}

PairSampleResult sample_pairs(const Dataset& ds, std::span<const std::size_t> subset,
                              const DataConfig& config, std::uint64_t seed, std::size_t count) {
  return PairSampler(ds, subset, config).sample(seed, count);
}

}  // namespace rwd::data
