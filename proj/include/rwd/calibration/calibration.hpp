#pragma once

#include <span>
#include <variant>
#include <vector>

#include "json.hpp"

namespace rwd::calibration {

inline constexpr double kClipLo = 0.001;
inline constexpr double kClipHi = 0.999;
inline constexpr double kLogTauLo = -10.0;
inline constexpr double kLogTauHi = 10.0;

struct TemperatureMap {
  double tau = 1.0;
  /// Set when the optimum sits on the lower search bound (labels separable by sign).
  bool separable = false;
};

/// Non-decreasing step function: value[k] applies from breakpoint[k] up to
/// the next breakpoint.
struct IsotonicMap {
  std::vector<double> breakpoints;  // strictly increasing block lower bounds
  std::vector<double> values;       // non-decreasing, unclipped block means
};

class CalibrationMap {
 public:
  CalibrationMap() = default;
  CalibrationMap(TemperatureMap m) : map_(m) {}
  CalibrationMap(IsotonicMap m) : map_(std::move(m)) {}

  bool fitted() const noexcept { return !std::holds_alternative<std::monostate>(map_); }
  const TemperatureMap* temperature() const { return std::get_if<TemperatureMap>(&map_); }
  const IsotonicMap* isotonic() const { return std::get_if<IsotonicMap>(&map_); }

  /// Probability that the first element of a pair with score difference `delta` ranks higher.
  double apply(double delta) const;
  std::vector<double> apply(std::span<const double> deltas) const;

  nlohmann::json to_json() const;
  static CalibrationMap from_json(const nlohmann::json& j);

 private:
  std::variant<std::monostate, TemperatureMap, IsotonicMap> map_;
};

inline double pair_probability(double s0, double s1, const CalibrationMap& map) {
  return map.apply(s0 - s1);
}

/// Mean Bernoulli NLL of sigma(delta / tau).
double temperature_nll(std::span<const double> deltas, std::span<const int> labels, double tau);

/// Golden-section search over ln tau in [-10, 10] to tolerance 1e-6.
TemperatureMap fit_temperature(std::span<const double> deltas, std::span<const int> labels);

/// Pool-adjacent-violators on labels sorted by delta; tied deltas are pooled first.
IsotonicMap fit_isotonic(std::span<const double> deltas, std::span<const double> labels);
IsotonicMap fit_isotonic(std::span<const double> deltas, std::span<const int> labels);

}  // namespace rwd::calibration
