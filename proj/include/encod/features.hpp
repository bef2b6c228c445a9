#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace encod {

inline constexpr std::size_t kFeatureDim = 256;

/// Byte-value PDF over 256 unit-width bins; after `transform` the values are
/// MinMax-scaled into [0, 2].
struct FeatureVector {
  std::vector<double> values;
  bool scaled = false;
};

struct ScalerParams {
  std::vector<double> mins;
  std::vector<double> maxs;
  double range_lo = 0.0;
  double range_hi = 2.0;

  nlohmann::json to_json() const;
  static ScalerParams from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical JSON form; models reference their scaler by it.
  std::string digest() const;
};

/// values_i = counts_i / L. Throws std::invalid_argument on an empty payload.
FeatureVector extract_features(std::span<const std::uint8_t> payload);

/// Per-feature min/max over the given (training) vectors. Needs >= 2 unscaled vectors.
ScalerParams fit_scaler(std::span<const FeatureVector> training);

/// out_i = clamp(2 (v_i - min_i) / (max_i - min_i), 0, 2); a degenerate feature maps to 0.
FeatureVector transform(const FeatureVector& v, const ScalerParams& p);

/// Single-feature scaling shared by `transform` and the batch kernels.
inline double scale_feature(double v, double lo, double hi, double range_lo, double range_hi) noexcept {
  if (!(hi > lo)) return range_lo;
  const double s = range_lo + (range_hi - range_lo) * (v - lo) / (hi - lo);
  return s < range_lo ? range_lo : (s > range_hi ? range_hi : s);
}

void save_scaler(const ScalerParams& p, const std::string& path);
ScalerParams load_scaler(const std::string& path);

}  // namespace encod
