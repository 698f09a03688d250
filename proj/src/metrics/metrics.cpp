#include "rwd/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace rwd::metrics {
using nlohmann::json;

std::vector<IndexPair> enumerate_pairs(std::span<const double> rewards,
                                       std::span<const std::uint32_t> group, double min_gap) {
  if (rewards.size() != group.size()) throw DimensionError("enumerate_pairs: length mismatch");
  std::vector<IndexPair> out;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    for (std::size_t j = i + 1; j < rewards.size(); ++j) {
      if (group[i] == group[j] && std::abs(rewards[i] - rewards[j]) >= min_gap) {
        out.push_back({i, j});
      }
    }
  }
  return out;
}

std::size_t StrataConfig::bin_count() const {
  if (!(width > 0.0) || !(max_gap > min_gap)) throw ConfigError("invalid strata config");
  return static_cast<std::size_t>(std::ceil((max_gap - min_gap) / width - 1e-9));
}

std::size_t StrataConfig::bin_of(double gap) const {
  const double k = std::floor((gap - min_gap) / width + 1e-12);
  return std::min(static_cast<std::size_t>(std::max(k, 0.0)), bin_count() - 1);
}

std::optional<double> AccuracyBin::accuracy() const {
  if (count == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(count);
}

std::optional<double> StratifiedAccuracy::overall() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::optional<double> StratifiedAccuracy::pooled(double lo, double hi) const {
  std::size_t n = 0, c = 0;
  for (const auto& b : bins) {
    if (b.lo >= lo - 1e-12 && b.lo < hi) {
      n += b.count;
      c += b.correct;
    }
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(c) / static_cast<double>(n);
}

void StratifiedAccuracy::merge(const StratifiedAccuracy& other) {
  if (bins.empty()) bins = other.bins;
  else if (bins.size() != other.bins.size()) throw ContractViolation("merging different strata");
  else {
    for (std::size_t k = 0; k < bins.size(); ++k) {
      bins[k].count += other.bins[k].count;
      bins[k].correct += other.bins[k].correct;
    }
  }
  total += other.total;
  correct += other.correct;
}

namespace {

StratifiedAccuracy empty_strata(const StrataConfig& strata) {
  StratifiedAccuracy acc;
  const std::size_t nb = strata.bin_count();
  acc.bins.resize(nb);
  for (std::size_t k = 0; k < nb; ++k) {
    acc.bins[k].lo = strata.min_gap + strata.width * static_cast<double>(k);
    acc.bins[k].hi = std::min(acc.bins[k].lo + strata.width, strata.max_gap);
  }
  return acc;
}

void record(StratifiedAccuracy& acc, const StrataConfig& strata, double ds, double dr) {
  const double gap = std::abs(dr);
  if (gap < strata.min_gap) return;
  const bool ok = ds != 0.0 && (ds > 0.0) == (dr > 0.0);
  auto& bin = acc.bins[strata.bin_of(gap)];
  ++bin.count;
  ++acc.total;
  if (ok) {
    ++bin.correct;
    ++acc.correct;
  }
}

}  // namespace

StratifiedAccuracy pairwise_accuracy(std::span<const double> scores,
                                     std::span<const double> rewards,
                                     std::span<const IndexPair> pairs,
                                     const StrataConfig& strata) {
  if (scores.size() != rewards.size()) throw DimensionError("pairwise_accuracy: length mismatch");
  StratifiedAccuracy acc = empty_strata(strata);
  for (const auto& p : pairs) {
    if (p.i >= scores.size() || p.j >= scores.size()) {
      throw DimensionError("pairwise_accuracy: pair index out of range");
    }
    record(acc, strata, scores[p.i] - scores[p.j], rewards[p.i] - rewards[p.j]);
  }
  return acc;
}

StratifiedAccuracy grouped_pairwise_accuracy(std::span<const double> scores,
                                             std::span<const double> rewards,
                                             std::span<const std::uint32_t> group,
                                             const StrataConfig& strata) {
  if (scores.size() != rewards.size() || group.size() != rewards.size()) {
    throw DimensionError("grouped_pairwise_accuracy: length mismatch");
  }
  StratifiedAccuracy acc = empty_strata(strata);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = i + 1; j < scores.size(); ++j) {
      if (group[i] == group[j]) record(acc, strata, scores[i] - scores[j], rewards[i] - rewards[j]);
    }
  }
  return acc;
}

namespace {

long long tied_pairs(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  long long total = 0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j] == s[i]) ++j;
    const auto t = static_cast<long long>(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

}  // namespace

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("kendall_tau_b: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw UndefinedTauError("kendall_tau_b: need at least 2 observations");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw NumericError("kendall_tau_b: non-finite input");
    }
  }
  long long s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const int sx = (x[i] > x[j]) - (x[i] < x[j]);
      const int sy = (y[i] > y[j]) - (y[i] < y[j]);
      s += sx * sy;
    }
  }
  const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  const long long n1 = tied_pairs(x);
  const long long n2 = tied_pairs(y);
  if (n1 == n0 || n2 == n0) throw UndefinedTauError("kendall_tau_b: a sequence is constant");
  return static_cast<double>(s) /
         std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double pair_probability(double s0, double s1, double tau) {
  if (!(tau > 0.0)) throw ConfigError("pair_probability: tau must be positive");
  return sigmoid((s0 - s1) / tau);
}

EceResult ece(std::span<const double> probabilities, std::span<const int> outcomes,
              std::size_t bins) {
  if (probabilities.size() != outcomes.size()) throw DimensionError("ece: length mismatch");
  if (probabilities.empty()) throw ConfigError("ece: empty input");
  if (bins == 0) throw ConfigError("ece: need at least one bin");
  EceResult r;
  r.bins.resize(bins);
  std::vector<double> conf_sum(bins, 0.0), pos(bins, 0.0);
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = probabilities[i];
    if (!(p >= 0.0 && p <= 1.0)) throw NumericError("ece: probability outside [0, 1]");
    const std::size_t k =
        std::min(static_cast<std::size_t>(p * static_cast<double>(bins)), bins - 1);
    ++r.bins[k].count;
    conf_sum[k] += p;
    pos[k] += outcomes[i] != 0 ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(probabilities.size());
  for (std::size_t k = 0; k < bins; ++k) {
    auto& b = r.bins[k];
    b.lo = static_cast<double>(k) / static_cast<double>(bins);
    b.hi = static_cast<double>(k + 1) / static_cast<double>(bins);
    if (b.count == 0) continue;
    const auto c = static_cast<double>(b.count);
    b.mean_confidence = conf_sum[k] / c;
    b.frequency = pos[k] / c;
    r.ece += c / n * std::abs(b.frequency - b.mean_confidence);
  }
  return r;
}

TauSummary summarize(std::vector<double> values) {
  TauSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  auto q = [&](double f) {
    const double pos = f * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  s.min = values.front();
  s.q25 = q(0.25);
  s.median = q(0.5);
  s.q75 = q(0.75);
  s.max = values.back();
  return s;
}

json to_json(const StratifiedAccuracy& acc) {
  json bins = json::array();
  for (const auto& b : acc.bins) {
    json jb = {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}};
    if (auto a = b.accuracy()) jb["accuracy"] = *a;
    else jb["accuracy"] = nullptr;
    bins.push_back(jb);
  }
  json j = {{"pairs", acc.total}, {"bins", bins}};
  if (auto o = acc.overall()) j["overall"] = *o;
  else j["overall"] = nullptr;
  return j;
}

json to_json(const EceResult& e) {
  json bins = json::array();
  for (const auto& b : e.bins) {
    json jb = {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}};
    if (b.count > 0) {
      jb["mean_confidence"] = b.mean_confidence;
      jb["frequency"] = b.frequency;
    }
    bins.push_back(jb);
  }
  return {{"ece", e.ece}, {"bins", bins}};
}

json to_json(const TauSummary& s) {
  return {{"count", s.count}, {"min", s.min},       {"q25", s.q25},
          {"median", s.median}, {"q75", s.q75}, {"max", s.max}};
}

}  // namespace rwd::metrics
