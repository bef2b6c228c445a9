#include "encod/features.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "encod/crypto.hpp"
#include "encod/entropy.hpp"

namespace encod {
using nlohmann::json;

FeatureVector extract_features(std::span<const std::uint8_t> payload) {
  const auto h = byte_histogram(payload);
  FeatureVector v;
  v.values.resize(kFeatureDim);
  const double inv = 1.0 / static_cast<double>(h.total);
  for (std::size_t i = 0; i < kFeatureDim; ++i) v.values[i] = static_cast<double>(h.counts[i]) * inv;
  return v;
}

ScalerParams fit_scaler(std::span<const FeatureVector> training) {
  if (training.size() < 2) throw std::invalid_argument("fit_scaler needs at least 2 vectors");
  ScalerParams p;
  p.mins.assign(kFeatureDim, 0.0);
  p.maxs.assign(kFeatureDim, 0.0);
  for (std::size_t n = 0; n < training.size(); ++n) {
    const auto& v = training[n];
    if (v.scaled) throw std::invalid_argument("fit_scaler expects unscaled vectors");
    if (v.values.size() != kFeatureDim) throw std::invalid_argument("feature vector must have 256 values");
    for (std::size_t i = 0; i < kFeatureDim; ++i) {
      if (n == 0 || v.values[i] < p.mins[i]) p.mins[i] = v.values[i];
      if (n == 0 || v.values[i] > p.maxs[i]) p.maxs[i] = v.values[i];
    }
  }
  return p;
}

FeatureVector transform(const FeatureVector& v, const ScalerParams& p) {
  if (v.scaled) throw std::invalid_argument("transform expects an unscaled vector");
  if (v.values.size() != p.mins.size() || v.values.size() != p.maxs.size())
    throw std::invalid_argument("feature dimension mismatch: vector has " + std::to_string(v.values.size()) +
                                ", scaler has " + std::to_string(p.mins.size()));
  FeatureVector out;
  out.scaled = true;
  out.values.resize(v.values.size());
  for (std::size_t i = 0; i < v.values.size(); ++i)
    out.values[i] = scale_feature(v.values[i], p.mins[i], p.maxs[i], p.range_lo, p.range_hi);
  return out;
}

json ScalerParams::to_json() const {
  return {{"version", 1}, {"range", {range_lo, range_hi}}, {"mins", mins}, {"maxs", maxs}};
}

ScalerParams ScalerParams::from_json(const json& j) {
  ScalerParams p;
  const auto& range = j.at("range");
  p.range_lo = range.at(0).get<double>();
  p.range_hi = range.at(1).get<double>();
  p.mins = j.at("mins").get<std::vector<double>>();
  p.maxs = j.at("maxs").get<std::vector<double>>();
  if (p.mins.size() != kFeatureDim || p.maxs.size() != kFeatureDim)
    throw std::invalid_argument("scaler must carry 256 mins and 256 maxs");
  for (std::size_t i = 0; i < kFeatureDim; ++i)
    if (p.maxs[i] < p.mins[i]) throw std::invalid_argument("scaler max below min at feature " + std::to_string(i));
  return p;
}

std::string ScalerParams::digest() const { return sha256_hex(to_json().dump()); }

void save_scaler(const ScalerParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << p.to_json().dump() << '\n';
}

ScalerParams load_scaler(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return ScalerParams::from_json(json::parse(in));
}

}  // namespace encod
