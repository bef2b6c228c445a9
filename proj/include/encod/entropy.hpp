#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "encod/format.hpp"

namespace encod {

class FragmentStore;

/// Byte-value counts N_i of a payload and its length L.
struct ByteHistogram {
  std::array<std::uint32_t, 256> counts{};
  std::uint64_t total = 0;

  double frequency(std::size_t value) const noexcept {
    return static_cast<double>(counts[value]) / static_cast<double>(total);
  }
};

/// Throws std::invalid_argument on an empty payload.
ByteHistogram byte_histogram(std::span<const std::uint8_t> payload);

/// Plug-in (maximum likelihood) Shannon entropy in bits per byte, in [0, 8].
double shannon_entropy_mle(const ByteHistogram& h);

struct QuantileSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Quantile by linear interpolation between order statistics:
/// position (n-1)*p over the sorted sample. `sorted` must be ascending.
double quantile_linear(std::span<const double> sorted, double p);

/// Five-number summary; sorts a copy. Throws on fewer than 2 values.
QuantileSummary quantile_summary(std::vector<double> values);

struct EntropyProfileRow {
  FormatLabel label = FormatLabel::enc;
  std::size_t size = 0;
  std::size_t n = 0;
  QuantileSummary q;
};

/// Quantiles of the per-fragment entropy of every `label` fragment in the store.
/// Throws std::invalid_argument when fewer than 2 fragments carry the label.
EntropyProfileRow entropy_profile(const FragmentStore& store, FormatLabel label);

/// "label,size,min,q1,median,q3,max" with three decimals, header included.
std::string profile_csv(std::span<const EntropyProfileRow> rows);

}  // namespace encod
