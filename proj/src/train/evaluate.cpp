#include "rwd/train/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rwd/error.hpp"

namespace rwd::train {
using nlohmann::json;

StepScorer model_scorer(const model::RewardModel& model, const data::Dataset& ds,
                        unsigned threads) {
  return [&model, &ds, threads](std::span<const std::size_t> steps,
                                std::span<const std::uint32_t> goals) {
    if (steps.size() != goals.size()) throw DimensionError("scorer: length mismatch");
    std::vector<double> out;
    out.reserve(steps.size());
    constexpr std::size_t kChunk = 2048;
    for (std::size_t start = 0; start < steps.size(); start += kChunk) {
      const std::size_t end = std::min(steps.size(), start + kChunk);
      std::vector<std::span<const float>> samples;
      std::vector<model::GoalEmbedding> g;
      for (std::size_t k = start; k < end; ++k) {
        samples.push_back(ds.views(ds.steps[steps[k]]));
        g.push_back(ds.goals.at(goals[k]));
      }
      const auto s = model.score_batch(samples, g, threads);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  };
}

StepScorer oracle_scorer(const data::Dataset& ds) {
  return [&ds](std::span<const std::size_t> steps, std::span<const std::uint32_t>) {
    std::vector<double> out;
    out.reserve(steps.size());
    for (auto i : steps) out.push_back(ds.steps[i].reward_norm);
    return out;
  };
}

std::vector<std::size_t> eval_steps(const data::Dataset& ds, const EvalConfig& config) {
  auto kept = data::dedup_bin(ds.steps, config.data);
  if (config.split == EvalSplit::kHeldout) {
    kept = data::split_by_bin(ds.steps, kept, config.data, config.heldout_fraction).heldout;
  }
  return kept;
}

metrics::StratifiedAccuracy prompt_accuracy(const StepScorer& scorer, const data::Dataset& ds,
                                            std::span<const std::size_t> steps,
                                            std::span<const std::uint32_t> prompt_of,
                                            const metrics::StrataConfig& strata) {
  std::vector<std::uint32_t> goals, group;
  std::vector<double> rewards;
  for (auto i : steps) {
    const auto& st = ds.steps[i];
    goals.push_back(prompt_of[st.task]);
    group.push_back(st.task);
    rewards.push_back(st.reward_norm);
  }
  const auto scores = scorer(steps, goals);
  return metrics::grouped_pairwise_accuracy(scores, rewards, group, strata);
}

namespace {

std::uint32_t first_train_prompt(const data::TaskInfo& t) {
  const auto ids = t.train_prompts();
  if (ids.empty()) throw ConfigError("task " + t.id + " has no training prompt");
  return ids.front();
}

int sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

GoalSwap goal_swap(const StepScorer& scorer, const data::Dataset& ds,
                   std::span<const std::size_t> steps, double min_gap) {
  GoalSwap out;
  for (std::uint32_t f = 0; f < ds.tasks.size(); ++f) {
    if (ds.tasks[f].variant != "forward") continue;
    std::uint32_t r = 0;
    bool found = false;
    for (std::uint32_t k = 0; k < ds.tasks.size(); ++k) {
      if (ds.tasks[k].variant == "reverse" && ds.tasks[k].base_task == ds.tasks[f].base_task) {
        r = k;
        found = true;
      }
    }
    if (!found) continue;

    // Pool the states of both variants, expressed as forward rewards.
    std::vector<std::size_t> pool;
    std::vector<double> fwd;
    const double span = ds.tasks[f].reward_max - ds.tasks[f].reward_min;
    for (auto i : steps) {
      const auto& st = ds.steps[i];
      if (st.task != f && st.task != r) continue;
      pool.push_back(i);
      const double raw = st.task == f ? st.reward_raw : 1.0 - st.reward_raw;
      fwd.push_back(span > 0.0 ? raw / span : raw);
    }
    if (pool.size() < 2) continue;
    const std::vector<std::uint32_t> gf(pool.size(), first_train_prompt(ds.tasks[f]));
    const std::vector<std::uint32_t> gr(pool.size(), first_train_prompt(ds.tasks[r]));
    const auto sf = scorer(pool, gf);
    const auto sr = scorer(pool, gr);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      for (std::size_t j = i + 1; j < pool.size(); ++j) {
        if (std::abs(fwd[i] - fwd[j]) < min_gap) continue;
        ++out.pairs;
        const int a = sign(sf[i] - sf[j]);
        const int b = sign(sr[i] - sr[j]);
        if (a != 0 && a == -b) ++out.flipped;
      }
    }
  }
  return out;
}

TrajectoryTaus trajectory_taus(const StepScorer& scorer, const data::Dataset& ds) {
  TrajectoryTaus out;
  for (const auto& tr : ds.trajectories) {
    std::vector<std::size_t> idx(tr.step_count);
    for (std::size_t k = 0; k < tr.step_count; ++k) idx[k] = tr.first_step + k;
    const std::vector<std::uint32_t> goals(idx.size(), first_train_prompt(ds.tasks[tr.task]));
    const auto scores = scorer(idx, goals);
    std::vector<double> rewards;
    for (auto i : idx) rewards.push_back(ds.steps[i].reward_norm);
    try {
      out.entries.push_back({ds.tasks[tr.task].id, tr.id, data::to_string(tr.policy),
                             metrics::kendall_tau_b(scores, rewards)});
    } catch (const metrics::UndefinedTauError&) {
      ++out.undefined;
    }
  }
  return out;
}

PreferencePairs preference_pairs(const StepScorer& scorer, const data::Dataset& ds,
                                 std::span<const std::size_t> steps,
                                 const data::DataConfig& config, std::size_t count,
                                 std::uint64_t seed) {
  data::PairSampler sampler(ds, steps, config, data::PromptSet::kTrain);
  if (sampler.usable_tasks() == 0) throw ConfigError("no qualifying pairs in the evaluation set");
  const auto sampled = sampler.sample(seed, count);
  std::vector<std::size_t> idx;
  std::vector<std::uint32_t> goals;
  for (const auto& p : sampled.pairs) {
    idx.insert(idx.end(), {p.a, p.b});
    goals.insert(goals.end(), {p.prompt_id, p.prompt_id});
  }
  const auto s = scorer(idx, goals);
  PreferencePairs out;
  for (std::size_t k = 0; k < sampled.pairs.size(); ++k) {
    out.deltas.push_back(s[2 * k] - s[2 * k + 1]);
    out.labels.push_back(sampled.pairs[k].label > 0 ? 1 : 0);
  }
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

json optional_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

std::vector<double> uncalibrated(std::span<const double> deltas, double tau) {
  std::vector<double> p;
  for (double d : deltas) p.push_back(metrics::sigmoid(d / tau));
  return p;
}

}  // namespace

json evaluate(const StepScorer& scorer, const data::Dataset& ds, const EvalConfig& config) {
  config.data.validate();
  const auto steps = eval_steps(ds, config);
  if (steps.empty()) throw ConfigError("evaluation set is empty");
  const metrics::StrataConfig strata{.min_gap = config.data.pair_min_gap};
  const std::size_t n_tasks = ds.tasks.size();

  // Main view: every task under its first training prompt.
  std::vector<std::uint32_t> first(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) first[t] = first_train_prompt(ds.tasks[t]);
  const auto main = prompt_accuracy(scorer, ds, steps, first, strata);
  if (main.total == 0) throw ConfigError("evaluation set has no pairs above the minimum gap");

  // Per task and prompt, for the best-of / averaged views and prompt variation.
  json per_task = json::array();
  metrics::StratifiedAccuracy train_prompts, heldout_prompts, reverse_tasks;
  std::vector<double> best_of, averaged;
  for (std::uint32_t t = 0; t < n_tasks; ++t) {
    std::vector<std::size_t> own;
    for (auto i : steps) {
      if (ds.steps[i].task == t) own.push_back(i);
    }
    json prompts = json::array();
    std::vector<double> accs;
    for (const auto& p : ds.tasks[t].prompts) {
      std::vector<std::uint32_t> prompt_of(first);
      prompt_of[t] = p.embedding_id;
      const auto acc = prompt_accuracy(scorer, ds, own, prompt_of, strata);
      if (auto o = acc.overall()) accs.push_back(*o);
      (p.heldout ? heldout_prompts : train_prompts).merge(acc);
      if (p.embedding_id == first[t] && ds.tasks[t].variant == "reverse") reverse_tasks.merge(acc);
      prompts.push_back({{"text", p.text},
                         {"heldout", p.heldout},
                         {"pairs", acc.total},
                         {"accuracy", optional_json(acc.overall())}});
    }
    if (!accs.empty()) {
      best_of.push_back(*std::max_element(accs.begin(), accs.end()));
      averaged.push_back(mean(accs));
    }
    per_task.push_back({{"task", ds.tasks[t].id}, {"steps", own.size()}, {"prompts", prompts}});
  }

  json prompt_variation = {{"train_prompts", optional_json(train_prompts.overall())},
                           {"heldout_prompts", optional_json(heldout_prompts.overall())},
                           {"delta", nullptr}};
  if (train_prompts.overall() && heldout_prompts.overall()) {
    prompt_variation["delta"] = *train_prompts.overall() - *heldout_prompts.overall();
  }

  const auto swap = goal_swap(scorer, ds, steps, config.data.pair_min_gap);
  json task_variation = {{"reverse_task_accuracy", optional_json(reverse_tasks.overall())},
                         {"reverse_task_pairs", reverse_tasks.total},
                         {"goal_swap_pairs", swap.pairs},
                         {"goal_swap_flip_rate", swap.pairs ? json(swap.rate()) : json(nullptr)}};

  const auto taus = trajectory_taus(scorer, ds);
  std::map<std::string, std::vector<double>> by_policy;
  json tau_entries = json::array();
  for (const auto& e : taus.entries) {
    by_policy[e.policy].push_back(e.tau);
    tau_entries.push_back(
        {{"task", e.task}, {"trajectory", e.trajectory}, {"policy", e.policy}, {"tau", e.tau}});
  }
  json tau_summary = json::object();
  for (const auto& [policy, v] : by_policy) tau_summary[policy] = metrics::to_json(metrics::summarize(v));

  const auto pairs =
      preference_pairs(scorer, ds, steps, config.data, config.calibration_pairs, config.seed);
  const auto probs = uncalibrated(pairs.deltas, config.tau_train);
  const auto e = metrics::ece(probs, pairs.labels);

  return {{"schema_version", metrics::kReportSchemaVersion},
          {"split", config.split == EvalSplit::kAll ? "all" : "heldout"},
          {"steps", steps.size()},
          {"accuracy",
           {{"first_train_prompt", metrics::to_json(main)},
            {"best_of_prompts", best_of.empty() ? json(nullptr) : json(mean(best_of))},
            {"averaged_over_prompts", averaged.empty() ? json(nullptr) : json(mean(averaged))},
            {"per_task", per_task}}},
          {"prompt_variation", prompt_variation},
          {"task_variation", task_variation},
          {"kendall_tau",
           {{"by_policy", tau_summary}, {"undefined", taus.undefined}, {"trajectories", tau_entries}}},
          {"calibration",
           {{"pairs", pairs.deltas.size()}, {"tau_train", config.tau_train}, {"ece", metrics::to_json(e)}}}};
}

CalibrationOutcome calibrate(const PreferencePairs& pairs, CalibrationVariant variant,
                             double tau_train) {
  if (pairs.deltas.size() != pairs.labels.size()) throw DimensionError("calibrate: length mismatch");
  if (pairs.deltas.size() < 4) throw ConfigError("calibrate: need at least 4 pairs");
  PreferencePairs fit, test;
  for (std::size_t k = 0; k < pairs.deltas.size(); ++k) {
    auto& dst = k % 2 == 0 ? fit : test;
    dst.deltas.push_back(pairs.deltas[k]);
    dst.labels.push_back(pairs.labels[k]);
  }
  auto ece_of = [](const std::vector<double>& p, const PreferencePairs& s) {
    return metrics::ece(p, s.labels).ece;
  };
  CalibrationOutcome out;
  json report = {{"schema_version", metrics::kReportSchemaVersion},
                 {"fit_pairs", fit.deltas.size()},
                 {"test_pairs", test.deltas.size()},
                 {"uncalibrated",
                  {{"tau_train", tau_train},
                   {"fit_ece", ece_of(uncalibrated(fit.deltas, tau_train), fit)},
                   {"test_ece", ece_of(uncalibrated(test.deltas, tau_train), test)},
                   {"test_reliability",
                    metrics::to_json(metrics::ece(uncalibrated(test.deltas, tau_train), test.labels))}}}};
  if (variant != CalibrationVariant::kIsotonic) {
    out.temperature = calibration::fit_temperature(fit.deltas, fit.labels);
    report["temperature"] = {{"map", out.temperature.to_json()},
                             {"fit_ece", ece_of(out.temperature.apply(fit.deltas), fit)},
                             {"test_ece", ece_of(out.temperature.apply(test.deltas), test)},
                             {"test_reliability",
                              metrics::to_json(metrics::ece(out.temperature.apply(test.deltas), test.labels))}};
  }
  if (variant != CalibrationVariant::kTemperature) {
    out.isotonic = calibration::fit_isotonic(fit.deltas, fit.labels);
    report["isotonic"] = {{"map", out.isotonic.to_json()},
                          {"fit_ece", ece_of(out.isotonic.apply(fit.deltas), fit)},
                          {"test_ece", ece_of(out.isotonic.apply(test.deltas), test)},
                          {"test_reliability",
                           metrics::to_json(metrics::ece(out.isotonic.apply(test.deltas), test.labels))}};
  }
  out.report = std::move(report);
  return out;
}

}  // namespace rwd::train
