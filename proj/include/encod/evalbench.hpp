#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "encod/corpus.hpp"
#include "encod/neural.hpp"
#include "encod/randtests.hpp"

namespace encod {

/// A binary detector: true means "encrypted" (statistical detectors: random).
/// Must be safe to call concurrently.
struct Detector {
  std::string name;
  std::function<bool(std::span<const std::uint8_t>)> is_encrypted;
};

Detector entropy_detector(double threshold_bits);
Detector chi2_abs_detector(const Chi2Calibration& cal);
Detector chi2_ci_detector();
Detector nist_detector(double alpha = kDefaultAlpha);
Detector hedge_detector(const Chi2Calibration& cal, double alpha = kDefaultAlpha);
/// Encrypted iff the model's argmax is its "enc" class (binary or multi-class).
Detector nn_detector(std::shared_ptr<const MlpModel> model, std::string name = "nn");

struct BinaryReport {
  std::string detector;
  std::string format_or_all;
  std::size_t size = 0;
  std::size_t n = 0;
  std::size_t n_encrypted = 0;
  std::size_t correct = 0;
  double accuracy = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Test-split record indices (every record when the store is not split).
std::vector<std::size_t> evaluation_records(const FragmentStore& store);

/// All enc records of `records` plus an equal number of compressed records,
/// spread evenly over the compressed labels present (seeded).
std::vector<std::size_t> balanced_binary_sample(const FragmentStore& store, std::span<const std::size_t> records,
                                                std::uint64_t seed);

/// enc vs every other label. An unbalanced record set is evaluated but flagged.
BinaryReport eval_binary_all(const Detector& detector, const FragmentStore& store,
                             std::span<const std::size_t> records);

/// Restricts `records` to {format, enc}, balances them and evaluates every detector.
std::vector<BinaryReport> eval_binary_per_format(FormatLabel format, std::span<const Detector> detectors,
                                                 const FragmentStore& store, std::span<const std::size_t> records,
                                                 std::uint64_t seed);

struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::uint64_t>> counts;  // [truth][predicted]

  explicit ConfusionMatrix(std::vector<std::string> labels);
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  std::uint64_t total() const;
  std::uint64_t trace() const;
  double accuracy() const;
  /// NaN when nothing was predicted as / labelled `c`.
  double precision(std::size_t c) const;
  double recall(std::size_t c) const;
  std::vector<std::vector<double>> row_normalized() const;
  std::size_t index_of(std::string_view label) const;

  nlohmann::json to_json() const;
};

/// {compressed, encrypted} matrix: every class but `encrypted_label` is compressed.
ConfusionMatrix collapse_to_binary(const ConfusionMatrix& cm, std::string_view encrypted_label = "enc");

/// Throws std::invalid_argument when a model class has no record in `records`.
ConfusionMatrix eval_multiclass(const MlpModel& model, const FragmentStore& store,
                                std::span<const std::size_t> records);

struct BenchStats {
  std::string detector;
  std::size_t n = 0;
  double mean_s = 0, median_s = 0, std_s = 0, min_s = 0, max_s = 0;

  nlohmann::json to_json() const;
};

struct BenchmarkReport {
  std::size_t fragment_size = 0;
  std::size_t samples = 0;
  std::size_t repeats = 0;
  std::string hardware;
  std::vector<BenchStats> detectors;
  std::optional<double> nn_batched_per_sample_s;

  nlohmann::json to_json() const;
};

BenchStats summarize_times(std::string name, std::vector<double> seconds);

/// Single-threaded per-sample wall time of every detector over every sample,
/// `repeats` times, after `warmup` untimed passes over the first samples.
BenchmarkReport bench_overhead(std::span<const Detector> detectors, std::span<const std::span<const std::uint8_t>> samples,
                               std::size_t repeats = 1, std::size_t warmup = 50);

/// Seconds per sample of one batched forward pass over all samples.
double bench_batched_inference(const MlpModel& model, std::span<const std::span<const std::uint8_t>> samples);

std::string hardware_note();

/// "size,detector,format_or_all,accuracy"
std::string curve_csv(std::span<const BinaryReport> rows);

}  // namespace encod
