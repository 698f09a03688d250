#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwd/calibration/calibration.hpp"
#include "rwd/data/dataset.hpp"
#include "rwd/metrics/metrics.hpp"
#include "rwd/model/reward_model.hpp"

namespace rwd::train {

/// Scores steps (indices into Dataset::steps), each under its own goal id.
using StepScorer = std::function<std::vector<double>(std::span<const std::size_t> steps,
                                                     std::span<const std::uint32_t> goals)>;

StepScorer model_scorer(const model::RewardModel& model, const data::Dataset& ds,
                        unsigned threads = 1);
/// Ground-truth normalized reward; ignores the goal. A sanity ceiling.
StepScorer oracle_scorer(const data::Dataset& ds);

enum class EvalSplit { kAll, kHeldout };

struct EvalConfig {
  data::DataConfig data;
  EvalSplit split = EvalSplit::kAll;
  double heldout_fraction = 0.1;
  std::size_t calibration_pairs = 20000;
  std::uint64_t seed = 1;
  double tau_train = 2.0;
};

/// Deduplicated steps of `ds`, restricted to the held-out bins when asked.
std::vector<std::size_t> eval_steps(const data::Dataset& ds, const EvalConfig& config);

/// Same-task pair accuracy with every step of task t scored under prompt_of[t].
metrics::StratifiedAccuracy prompt_accuracy(const StepScorer& scorer, const data::Dataset& ds,
                                            std::span<const std::size_t> steps,
                                            std::span<const std::uint32_t> prompt_of,
                                            const metrics::StrataConfig& strata = {});

/// Forward and reverse variants share states and have opposite rewards, so
/// every pair with a reward gap flips its ground-truth preference under a goal
/// swap. `flipped` counts pairs whose score order flips too.
struct GoalSwap {
  std::size_t pairs = 0;
  std::size_t flipped = 0;
  double rate() const {
    return pairs ? static_cast<double>(flipped) / static_cast<double>(pairs) : 0.0;
  }
};

GoalSwap goal_swap(const StepScorer& scorer, const data::Dataset& ds,
                   std::span<const std::size_t> steps, double min_gap = 0.01);

/// Kendall tau-b between scores and rewards within each trajectory, scored
/// under the task's first training prompt. Trajectories with a constant
/// reward or score are counted in `undefined` and skipped.
struct TrajectoryTaus {
  std::vector<metrics::TauEntry> entries;
  std::size_t undefined = 0;
};

TrajectoryTaus trajectory_taus(const StepScorer& scorer, const data::Dataset& ds);

/// Sampled pairs in random orientation: delta = s_a - s_b, label = [r_a > r_b].
struct PreferencePairs {
  std::vector<double> deltas;
  std::vector<int> labels;
};

PreferencePairs preference_pairs(const StepScorer& scorer, const data::Dataset& ds,
                                 std::span<const std::size_t> steps,
                                 const data::DataConfig& config, std::size_t count,
                                 std::uint64_t seed);

/// The full evaluation report. Throws ConfigError on an empty evaluation set.
nlohmann::json evaluate(const StepScorer& scorer, const data::Dataset& ds,
                        const EvalConfig& config);

enum class CalibrationVariant { kBoth, kTemperature, kIsotonic };

struct CalibrationOutcome {
  calibration::CalibrationMap temperature;
  calibration::CalibrationMap isotonic;
  nlohmann::json report;
};

/// Splits `pairs` alternately into fit and test halves, fits the requested
/// maps on the fit half and reports ECE before and after on both halves.
/// The uncalibrated baseline is sigma(delta / tau_train).
CalibrationOutcome calibrate(const PreferencePairs& pairs, CalibrationVariant variant,
                             double tau_train);

}  // namespace rwd::train
