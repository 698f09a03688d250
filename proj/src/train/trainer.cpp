#include "rwd/train/trainer.hpp"

#include <cmath>

#include "rwd/error.hpp"
#include "rwd/rng.hpp"

namespace rwd::train {
using data::Dataset;
using data::TrainingPair;

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

std::uint32_t first_prompt(const data::TaskInfo& task, data::PromptSet set) {
  std::vector<std::uint32_t> ids;
  if (set == data::PromptSet::kHeldout) ids = task.heldout_prompts();
  else ids = task.train_prompts();
  if (ids.empty()) throw ConfigError("task " + task.id + " has no prompts in the requested set");
  return ids.front();
}

}  // namespace

double pair_loss(double delta, int label, double tau) { return softplus(-label * delta / tau); }

double pair_loss_grad(double delta, int label, double tau) {
  return -label * metrics::sigmoid(-label * delta / tau) / tau;
}

void TrainConfig::validate() const {
  model.validate();
  data.validate();
  if (epochs == 0 || pairs_per_epoch == 0 || batch_size == 0) {
    throw ConfigError("epochs, pairs per epoch and batch size must be positive");
  }
  if (!(tau > 0.0)) throw ConfigError("loss temperature must be positive");
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("heldout fraction must lie in (0, 1)");
  }
  if (!(optimizer.lr >= 0.0) || !(optimizer.weight_decay >= 0.0)) {
    throw ConfigError("learning rate and weight decay must be non-negative");
  }
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j = {{"schema_version", kLogSchemaVersion},
                      {"epoch", epoch},
                      {"mean_loss", mean_loss},
                      {"best", best}};
  if (heldout_accuracy) j["heldout_accuracy"] = *heldout_accuracy;
  else j["heldout_accuracy"] = nullptr;
  return j;
}

double batch_loss(const model::RewardModel& model, const Dataset& ds,
                  std::span<const TrainingPair> pairs, double tau,
                  model::RewardModelParams* grads) {
  if (pairs.empty()) return 0.0;
  model::ScoringBatch batch(model.config());
  batch.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    const std::size_t g = batch.add_goal(ds.goals.at(p.prompt_id).vector);
    batch.add_sample(ds.views(ds.steps[p.a]), g);
    batch.add_sample(ds.views(ds.steps[p.b]), g);
  }
  model::ForwardCache cache;
  const auto scores = model.forward(batch, grads ? &cache : nullptr);
  const double inv = 1.0 / static_cast<double>(pairs.size());
  double loss = 0.0;
  std::vector<double> dscores(scores.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double delta = scores[2 * k] - scores[2 * k + 1];
    loss += pair_loss(delta, pairs[k].label, tau);
    const double g = pair_loss_grad(delta, pairs[k].label, tau) * inv;
    dscores[2 * k] = g;
    dscores[2 * k + 1] = -g;
  }
  if (grads) model.backward(cache, dscores, *grads);
  return loss * inv;
}

std::vector<double> score_steps(const model::RewardModel& model, const Dataset& ds,
                                std::span<const std::size_t> steps,
                                std::span<const std::uint32_t> goal_ids) {
  if (steps.size() != goal_ids.size()) throw DimensionError("score_steps: length mismatch");
  std::vector<double> out;
  out.reserve(steps.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < steps.size(); start += kChunk) {
    const std::size_t end = std::min(steps.size(), start + kChunk);
    model::ScoringBatch batch(model.config());
    batch.reserve(end - start);
    for (std::size_t k = start; k < end; ++k) {
      batch.add_sample(ds.views(ds.steps[steps[k]]), batch.add_goal(ds.goals.at(goal_ids[k]).vector));
    }
    const auto s = model.forward(batch);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

metrics::StratifiedAccuracy split_accuracy(const model::RewardModel& model, const Dataset& ds,
                                           std::span<const std::size_t> steps,
                                           data::PromptSet prompts, double min_gap) {
  std::vector<std::uint32_t> goals, group;
  std::vector<double> rewards;
  for (auto i : steps) {
    const auto& st = ds.steps[i];
    goals.push_back(first_prompt(ds.tasks[st.task], prompts));
    group.push_back(st.task);
    rewards.push_back(st.reward_norm);
  }
  const auto scores = score_steps(model, ds, steps, goals);
  return metrics::grouped_pairwise_accuracy(scores, rewards, group, {.min_gap = min_gap});
}

TrainResult train(const Dataset& ds, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  const auto& m = config.model;
  if (m.num_views != ds.geometry.num_views || m.tokens_per_view != ds.geometry.tokens_per_view ||
      m.token_dim != ds.geometry.token_dim || m.goal_dim != ds.geometry.goal_dim) {
    throw FormatError("model geometry does not match the dataset geometry");
  }

  const auto kept = data::dedup_bin(ds.steps, config.data);
  data::Split split = data::split_by_bin(ds.steps, kept, config.data, config.heldout_fraction);
  data::PairSampler sampler(ds, split.train, config.data, data::PromptSet::kTrain);
  if (sampler.usable_tasks() == 0) throw ConfigError("training split has no valid pairs");

  model::RewardModel model(m, derive_seed(config.seed, 0x6d6f64656cULL));
  auto params = model::parameter_groups(model.mutable_params());
  auto opt = nn::make_optimizer_state(params, config.optimizer);

  TrainResult result{model, 0, std::nullopt, {}, split, sampler.warnings()};
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto pairs = sampler.sample(derive_seed(config.seed, epoch), config.pairs_per_epoch).pairs;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, pairs.size() - start);
      auto grads = model::zeros_like(model.params());
      const double loss =
          batch_loss(model, ds, std::span(pairs).subspan(start, n), config.tau, &grads);
      if (!std::isfinite(loss)) throw NumericError("training loss became non-finite");
      loss_sum += loss * static_cast<double>(n);
      auto g = model::parameter_groups(std::as_const(grads));
      nn::adamw_step(params, g, opt);
    }

    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = loss_sum / static_cast<double>(pairs.size());
    if (!split.heldout.empty()) {
      log.heldout_accuracy =
          split_accuracy(model, ds, split.heldout, data::PromptSet::kTrain, config.data.pair_min_gap)
              .overall();
    }
    const double acc = log.heldout_accuracy.value_or(-1.0);
    if (!result.best_accuracy || acc > *result.best_accuracy) {
      log.best = true;
      result.best_accuracy = acc;
      result.best_epoch = epoch;
      result.best_model = model;
    }
    if (on_epoch) on_epoch(log);
    result.log.push_back(log);
  }
  if (result.best_accuracy && *result.best_accuracy < 0.0) result.best_accuracy.reset();
  return result;
}

}  // namespace rwd::train
