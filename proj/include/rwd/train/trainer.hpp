#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwd/data/dataset.hpp"
#include "rwd/metrics/metrics.hpp"
#include "rwd/model/reward_model.hpp"
#include "rwd/nn/adamw.hpp"

namespace rwd::train {

inline constexpr int kLogSchemaVersion = 1;

/// log(1 + exp(-y * delta / tau)) as a softplus.
double pair_loss(double delta, int label, double tau);
/// d pair_loss / d delta = -y * sigma(-y * delta / tau) / tau.
double pair_loss_grad(double delta, int label, double tau);

struct TrainConfig {
  model::ModelConfig model = model::ModelConfig::desk();
  data::DataConfig data;
  nn::AdamWConfig optimizer;
  std::size_t epochs = 200;
  std::size_t pairs_per_epoch = 2000;
  std::size_t batch_size = 128;
  double tau = 2.0;
  double heldout_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> heldout_accuracy;
  bool best = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  model::RewardModel best_model;
  std::size_t best_epoch = 0;
  std::optional<double> best_accuracy;
  std::vector<EpochLog> log;
  data::Split split;
  std::vector<std::string> warnings;
};

/// Mean pair loss over `pairs`; when `grads` is given the gradient of that
/// mean is accumulated into it.
double batch_loss(const model::RewardModel& model, const data::Dataset& ds,
                  std::span<const data::TrainingPair> pairs, double tau,
                  model::RewardModelParams* grads = nullptr);

/// Scores every step in `steps` under one goal per step.
std::vector<double> score_steps(const model::RewardModel& model, const data::Dataset& ds,
                                std::span<const std::size_t> steps,
                                std::span<const std::uint32_t> goal_ids);

/// Pairwise accuracy over all same-task pairs of `steps` (gap >= min_gap),
/// each step scored under its task's first prompt from `prompts`.
metrics::StratifiedAccuracy split_accuracy(const model::RewardModel& model,
                                           const data::Dataset& ds,
                                           std::span<const std::size_t> steps,
                                           data::PromptSet prompts, double min_gap = 0.01);

/// dedup -> bin split -> epochs of sampled train pairs with AdamW; keeps the
/// parameters of the epoch with the best held-out pairwise accuracy.
TrainResult train(const data::Dataset& ds, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace rwd::train
