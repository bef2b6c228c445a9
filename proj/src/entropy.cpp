#include "encod/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "encod/corpus.hpp"
#include "encod/kernels.hpp"

namespace encod {

ByteHistogram byte_histogram(std::span<const std::uint8_t> payload) {
  if (payload.empty()) throw std::invalid_argument("byte_histogram: empty payload");
  ByteHistogram h;
  for (auto b : payload) ++h.counts[b];
  h.total = payload.size();
  return h;
}

double shannon_entropy_mle(const ByteHistogram& h) {
  if (h.total == 0) throw std::invalid_argument("shannon_entropy_mle: empty histogram");
  const double inv_total = 1.0 / static_cast<double>(h.total);
  double acc = 0.0;
  for (auto c : h.counts) {
    if (c == 0) continue;
    const double f = static_cast<double>(c) * inv_total;
    acc -= f * std::log(f);
  }
  // Clamp rounding noise so the result stays inside [0, 8].
  return std::clamp(acc / std::log(2.0), 0.0, 8.0);
}

double quantile_linear(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

QuantileSummary quantile_summary(std::vector<double> values) {
  if (values.size() < 2) throw std::invalid_argument("quantile summary needs at least 2 values");
  std::sort(values.begin(), values.end());
  return {values.front(), quantile_linear(values, 0.25), quantile_linear(values, 0.5),
          quantile_linear(values, 0.75), values.back()};
}

EntropyProfileRow entropy_profile(const FragmentStore& store, FormatLabel label) {
  std::vector<std::span<const std::uint8_t>> frags;
  const auto& recs = store.manifest().records;
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (recs[i].label == label) frags.push_back(store.fragment(i));
  if (frags.size() < 2)
    throw std::invalid_argument("entropy profile for '" + std::string(to_string(label)) +
                                "' needs at least 2 fragments, store has " + std::to_string(frags.size()));
  EntropyProfileRow row;
  row.label = label;
  row.size = store.fragment_size();
  row.n = frags.size();
  row.q = quantile_summary(kernels::entropies(frags));
  return row;
}

std::string profile_csv(std::span<const EntropyProfileRow> rows) {
  std::string out = "label,size,min,q1,median,q3,max\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.3f,%.3f,%.3f,%.3f,%.3f\n", std::string(to_string(r.label)).c_str(),
                  r.size, r.q.min, r.q.q1, r.q.median, r.q.q3, r.q.max);
    out += buf;
  }
  return out;
}

}  // namespace encod
