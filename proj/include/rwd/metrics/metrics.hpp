#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwd/error.hpp"

namespace rwd::metrics {

inline constexpr int kReportSchemaVersion = 1;

/// Tau-b is undefined when either sequence is constant (or shorter than 2).
class UndefinedTauError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct IndexPair {
  std::size_t i = 0;
  std::size_t j = 0;
};

/// Every unordered pair within the same group whose reward gap is >= min_gap.
std::vector<IndexPair> enumerate_pairs(std::span<const double> rewards,
                                       std::span<const std::uint32_t> group, double min_gap);

struct StrataConfig {
  double min_gap = 0.01;
  double width = 0.05;
  double max_gap = 1.0;

  std::size_t bin_count() const;
  /// Bin of a reward gap; gaps beyond the last edge land in the last bin.
  std::size_t bin_of(double gap) const;
};

struct AccuracyBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;

  std::optional<double> accuracy() const;
};

struct StratifiedAccuracy {
  std::vector<AccuracyBin> bins;
  std::size_t total = 0;
  std::size_t correct = 0;

  std::optional<double> overall() const;
  /// Pools every bin whose lower edge lies in [lo, hi).
  std::optional<double> pooled(double lo, double hi) const;
  void merge(const StratifiedAccuracy& other);
};

/// A pair is correct iff sign(s_i - s_j) = sign(r_i - r_j); equal scores are
/// wrong. Pairs with a reward gap below min_gap are ignored.
StratifiedAccuracy pairwise_accuracy(std::span<const double> scores,
                                     std::span<const double> rewards,
                                     std::span<const IndexPair> pairs,
                                     const StrataConfig& strata = {});

/// Same result as pairwise_accuracy over enumerate_pairs(rewards, group, strata.min_gap)
/// without materializing the pair list.
StratifiedAccuracy grouped_pairwise_accuracy(std::span<const double> scores,
                                             std::span<const double> rewards,
                                             std::span<const std::uint32_t> group,
                                             const StrataConfig& strata = {});

/// (C - D) / sqrt((n0 - n1)(n0 - n2)), counted over all pairs.
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

/// sigma(delta / tau), computed without overflow.
double sigmoid(double x);
double pair_probability(double s0, double s1, double tau);

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double frequency = 0.0;
};

struct EceResult {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

/// Equal-width bins over [0, 1]; p = 1 falls in the last bin.
EceResult ece(std::span<const double> probabilities, std::span<const int> outcomes,
              std::size_t bins = 15);

struct TauEntry {
  std::string task;
  std::uint32_t trajectory = 0;
  std::string policy;
  double tau = 0.0;
};

struct TauSummary {
  std::size_t count = 0;
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
};

/// Linear-interpolated quantiles; `values` need not be sorted.
TauSummary summarize(std::vector<double> values);

nlohmann::json to_json(const StratifiedAccuracy& acc);
nlohmann::json to_json(const EceResult& e);
nlohmann::json to_json(const TauSummary& s);

}  // namespace rwd::metrics
