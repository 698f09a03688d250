#include "rwd/calibration/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rwd/error.hpp"
#include "rwd/metrics/metrics.hpp"

namespace rwd::calibration {
using nlohmann::json;

namespace {

void check_inputs(std::span<const double> deltas, std::size_t labels, const char* who) {
  if (deltas.size() != labels) throw DimensionError(std::string(who) + ": length mismatch");
  for (double d : deltas) {
    if (!std::isfinite(d)) throw NumericError(std::string(who) + ": non-finite score difference");
  }
}

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double CalibrationMap::apply(double delta) const {
  if (const auto* t = temperature()) return metrics::sigmoid(delta / t->tau);
  if (const auto* iso = isotonic()) {
    const auto& bp = iso->breakpoints;
    auto it = std::upper_bound(bp.begin(), bp.end(), delta);
    const std::size_t k = it == bp.begin() ? 0 : static_cast<std::size_t>(it - bp.begin()) - 1;
    return std::clamp(iso->values[k], kClipLo, kClipHi);
  }
  throw ContractViolation("calibration map used before fitting");
}

std::vector<double> CalibrationMap::apply(std::span<const double> deltas) const {
  std::vector<double> out;
  out.reserve(deltas.size());
  for (double d : deltas) out.push_back(apply(d));
  return out;
}

json CalibrationMap::to_json() const {
  if (const auto* t = temperature()) {
    return {{"variant", "temperature"}, {"tau", t->tau}, {"separable", t->separable}};
  }
  if (const auto* iso = isotonic()) {
    return {{"variant", "isotonic"},
            {"breakpoints", iso->breakpoints},
            {"values", iso->values},
            {"clip", {kClipLo, kClipHi}}};
  }
  throw ContractViolation("serializing an unfitted calibration map");
}

CalibrationMap CalibrationMap::from_json(const json& j) {
  try {
    const std::string v = j.at("variant").get<std::string>();
    if (v == "temperature") {
      TemperatureMap t{j.at("tau").get<double>(), j.value("separable", false)};
      if (!(t.tau > 0.0)) throw FormatError("calibration map: tau must be positive");
      return t;
    }
    if (v == "isotonic") {
      IsotonicMap m{j.at("breakpoints").get<std::vector<double>>(),
                    j.at("values").get<std::vector<double>>()};
      if (m.breakpoints.empty() || m.breakpoints.size() != m.values.size()) {
        throw FormatError("calibration map: breakpoints and values must be non-empty and aligned");
      }
      return m;
    }
    throw FormatError("calibration map: unknown variant \"" + v + "\"");
  } catch (const json::exception& e) {
    throw FormatError(std::string("calibration map: ") + e.what());
  }
}

double temperature_nll(std::span<const double> deltas, std::span<const int> labels, double tau) {
  double acc = 0.0;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const double z = deltas[i] / tau;
    // -log sigma(z) for positives, -log(1 - sigma(z)) for negatives.
    acc += labels[i] != 0 ? softplus(-z) : softplus(z);
  }
  return acc / static_cast<double>(deltas.size());
}

TemperatureMap fit_temperature(std::span<const double> deltas, std::span<const int> labels) {
  check_inputs(deltas, labels.size(), "fit_temperature");
  const auto positives = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (positives == 0 || static_cast<std::size_t>(positives) == labels.size()) {
    throw ConfigError("fit_temperature: labels contain a single class");
  }
  auto f = [&](double log_tau) { return temperature_nll(deltas, labels, std::exp(log_tau)); };

  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = kLogTauLo, b = kLogTauHi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-6) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  double best = 0.5 * (a + b);
  // Unimodality can fail on degenerate data; never return something worse than tau = 1.
  if (f(best) > f(0.0)) best = 0.0;

  TemperatureMap m;
  m.tau = std::exp(best);
  m.separable = best - kLogTauLo < 1e-3;
  return m;
}

IsotonicMap fit_isotonic(std::span<const double> deltas, std::span<const double> labels) {
  check_inputs(deltas, labels.size(), "fit_isotonic");
  if (deltas.size() < 2) throw ConfigError("fit_isotonic: need at least 2 samples");
  std::vector<std::size_t> order(deltas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return deltas[a] < deltas[b]; });

  struct Block {
    double lo;
    double sum;
    double weight;
    double mean() const { return sum / weight; }
  };
  std::vector<Block> blocks;
  for (std::size_t k = 0; k < order.size();) {
    // Tied deltas enter as a single pre-pooled block.
    Block b{deltas[order[k]], 0.0, 0.0};
    std::size_t j = k;
    for (; j < order.size() && deltas[order[j]] == b.lo; ++j) {
      b.sum += labels[order[j]];
      b.weight += 1.0;
    }
    k = j;
    blocks.push_back(b);
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() > blocks.back().mean()) {
      Block top = blocks.back();
      blocks.pop_back();
      blocks.back().sum += top.sum;
      blocks.back().weight += top.weight;
    }
  }
  IsotonicMap m;
  for (const auto& b : blocks) {
    m.breakpoints.push_back(b.lo);
    m.values.push_back(b.mean());
  }
  return m;
}

IsotonicMap fit_isotonic(std::span<const double> deltas, std::span<const int> labels) {
  std::vector<double> y(labels.begin(), labels.end());
  return fit_isotonic(deltas, std::span<const double>(y));
}

}  // namespace rwd::calibration
