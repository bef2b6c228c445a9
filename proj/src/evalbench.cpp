#include "encod/evalbench.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <spdlog/spdlog.h>

#include "encod/entropy.hpp"
#include "encod/kernels.hpp"

namespace encod {
using nlohmann::json;

Detector entropy_detector(double threshold_bits) {
  return {"entropy", [threshold_bits](std::span<const std::uint8_t> p) {
            return shannon_entropy_mle(byte_histogram(p)) >= threshold_bits;
          }};
}

Detector chi2_abs_detector(const Chi2Calibration& cal) {
  return {"chi2-abs", [cal](std::span<const std::uint8_t> p) { return chi2_absolute_test(byte_histogram(p), cal).passed; }};
}

Detector chi2_ci_detector() {
  return {"chi2-ci", [](std::span<const std::uint8_t> p) { return chi2_ci_test(byte_histogram(p)).passed; }};
}

Detector nist_detector(double alpha) {
  return {"nist", [alpha](std::span<const std::uint8_t> p) { return nist_majority_vote(p, alpha).random; }};
}

Detector hedge_detector(const Chi2Calibration& cal, double alpha) {
  return {"hedge", [cal, alpha](std::span<const std::uint8_t> p) { return hedge_classify(p, cal, alpha).random; }};
}

Detector nn_detector(std::shared_ptr<const MlpModel> model, std::string name) {
  if (!model) throw std::invalid_argument("nn detector needs a model");
  if (!model->scaler || model->scaler->digest() != model->scaler_ref)
    throw std::invalid_argument("nn detector model has no scaler matching its scaler_ref");
  const int enc = model->encrypted_class();
  return {std::move(name), [model, enc](std::span<const std::uint8_t> p) { return predict(*model, p).argmax == enc; }};
}

json BinaryReport::to_json() const {
  return {{"detector", detector}, {"format_or_all", format_or_all}, {"size", size},     {"n", n},
          {"n_encrypted", n_encrypted}, {"correct", correct},       {"accuracy", accuracy}, {"warnings", warnings}};
}

std::vector<std::size_t> evaluation_records(const FragmentStore& store) {
  if (store.manifest().is_split()) return store.manifest().indices(Split::test);
  std::vector<std::size_t> all(store.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

std::vector<std::size_t> balanced_binary_sample(const FragmentStore& store, std::span<const std::size_t> records,
                                                std::uint64_t seed) {
  std::vector<std::size_t> enc;
  std::vector<std::vector<std::size_t>> by_label(kAllLabels.size());
  for (auto i : records) {
    const auto label = store.manifest().records.at(i).label;
    if (is_encrypted(label))
      enc.push_back(i);
    else
      by_label[static_cast<std::size_t>(label)].push_back(i);
  }
  std::vector<std::size_t> present;
  for (std::size_t l = 0; l < by_label.size(); ++l)
    if (!by_label[l].empty()) present.push_back(l);
  if (enc.empty() || present.empty()) throw std::invalid_argument("need both enc and compressed records to balance");

  std::mt19937_64 rng(seed);
  std::size_t want = enc.size();
  std::size_t other_total = 0;
  for (auto l : present) other_total += by_label[l].size();
  if (other_total < want) {
    std::shuffle(enc.begin(), enc.end(), rng);
    enc.resize(other_total);
    std::sort(enc.begin(), enc.end());
    want = other_total;
  }
  // Equal shares per label; labels that run short hand their remainder on.
  std::sort(present.begin(), present.end(), [&](auto a, auto b) { return by_label[a].size() < by_label[b].size(); });
  std::vector<std::size_t> out = enc;
  std::size_t remaining = want;
  for (std::size_t k = 0; k < present.size(); ++k) {
    auto& pool = by_label[present[k]];
    const std::size_t left = present.size() - k;
    const std::size_t share = std::min(pool.size(), remaining / left + (remaining % left ? 1 : 0));
    std::shuffle(pool.begin(), pool.end(), rng);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(share));
    remaining -= share;
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::vector<kernels::Fragment> fragments_of(const FragmentStore& store, std::span<const std::size_t> records) {
  std::vector<kernels::Fragment> frags;
  frags.reserve(records.size());
  for (auto i : records) frags.push_back(store.fragment(i));
  return frags;
}

BinaryReport score(const Detector& detector, const FragmentStore& store, std::span<const std::size_t> records,
                   std::string format_or_all) {
  if (records.empty()) throw std::invalid_argument("no records to evaluate");
  const auto flags = kernels::map_flags(fragments_of(store, records), detector.is_encrypted);
  BinaryReport r;
  r.detector = detector.name;
  r.format_or_all = std::move(format_or_all);
  r.size = store.fragment_size();
  r.n = records.size();
  for (std::size_t k = 0; k < records.size(); ++k) {
    const bool truth = is_encrypted(store.manifest().records[records[k]].label);
    r.n_encrypted += truth;
    r.correct += (flags[k] != 0) == truth;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
  if (2 * r.n_encrypted != r.n) {
    r.warnings.push_back("unbalanced test set: " + std::to_string(r.n_encrypted) + " encrypted of " + std::to_string(r.n));
    spdlog::warn("{}: {}", detector.name, r.warnings.back());
  }
  return r;
}

}  // namespace

BinaryReport eval_binary_all(const Detector& detector, const FragmentStore& store,
                             std::span<const std::size_t> records) {
  return score(detector, store, records, "all");
}

std::vector<BinaryReport> eval_binary_per_format(FormatLabel format, std::span<const Detector> detectors,
                                                 const FragmentStore& store, std::span<const std::size_t> records,
                                                 std::uint64_t seed) {
  if (is_encrypted(format)) throw std::invalid_argument("per-format evaluation needs a compressed format");
  std::vector<std::size_t> subset;
  for (auto i : records) {
    const auto label = store.manifest().records.at(i).label;
    if (label == format || is_encrypted(label)) subset.push_back(i);
  }
  const auto balanced = balanced_binary_sample(store, subset, seed);
  std::vector<BinaryReport> out;
  for (const auto& d : detectors) out.push_back(score(d, store, balanced, std::string(to_string(format))));
  return out;
}

// --- confusion matrix ------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> l)
    : labels(std::move(l)), counts(labels.size(), std::vector<std::uint64_t>(labels.size(), 0)) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  counts.at(truth).at(predicted) += n;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  return t == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(trace()) / static_cast<double>(t);
}

double ConfusionMatrix::precision(std::size_t c) const {
  std::uint64_t col = 0;
  for (const auto& row : counts) col += row.at(c);
  return col == 0 ? std::numeric_limits<double>::quiet_NaN()
                  : static_cast<double>(counts[c][c]) / static_cast<double>(col);
}

double ConfusionMatrix::recall(std::size_t c) const {
  const auto& row = counts.at(c);
  const auto n = std::accumulate(row.begin(), row.end(), std::uint64_t{0});
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(row[c]) / static_cast<double>(n);
}

std::vector<std::vector<double>> ConfusionMatrix::row_normalized() const {
  std::vector<std::vector<double>> out;
  for (const auto& row : counts) {
    const auto n = std::accumulate(row.begin(), row.end(), std::uint64_t{0});
    std::vector<double> r(row.size(), 0.0);
    if (n > 0)
      for (std::size_t j = 0; j < row.size(); ++j) r[j] = static_cast<double>(row[j]) / static_cast<double>(n);
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t ConfusionMatrix::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return i;
  throw std::invalid_argument("no class '" + std::string(label) + "' in confusion matrix");
}

json ConfusionMatrix::to_json() const {
  json precision_j = json::object(), recall_j = json::object();
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const double p = precision(c), r = recall(c);
    precision_j[labels[c]] = std::isnan(p) ? json(nullptr) : json(p);
    recall_j[labels[c]] = std::isnan(r) ? json(nullptr) : json(r);
  }
  return {{"labels", labels},        {"counts", counts},       {"row_normalized", row_normalized()},
          {"accuracy", accuracy()},  {"precision", precision_j}, {"recall", recall_j},
          {"total", total()}};
}

ConfusionMatrix collapse_to_binary(const ConfusionMatrix& cm, std::string_view encrypted_label) {
  const auto enc = cm.index_of(encrypted_label);
  ConfusionMatrix out({"compressed", "encrypted"});
  for (std::size_t t = 0; t < cm.labels.size(); ++t)
    for (std::size_t p = 0; p < cm.labels.size(); ++p) out.add(t == enc ? 1 : 0, p == enc ? 1 : 0, cm.counts[t][p]);
  return out;
}

ConfusionMatrix eval_multiclass(const MlpModel& model, const FragmentStore& store,
                                std::span<const std::size_t> records) {
  std::vector<int> truth;
  truth.reserve(records.size());
  std::vector<std::size_t> seen(model.class_labels.size(), 0);
  for (auto i : records) {
    const auto c = model.class_of(store.manifest().records.at(i).label);
    if (!c) throw std::invalid_argument("record label outside the model's classes");
    truth.push_back(*c);
    ++seen[static_cast<std::size_t>(*c)];
  }
  for (std::size_t c = 0; c < seen.size(); ++c)
    if (seen[c] == 0) throw std::invalid_argument("test set has no records of class '" + model.class_labels[c] + "'");

  const auto frags = fragments_of(store, records);
  std::vector<int> predicted(records.size(), 0);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(frags.size()); ++k) {
    try {
      predicted[static_cast<std::size_t>(k)] = predict(model, frags[static_cast<std::size_t>(k)]).argmax;
    } catch (...) {
#pragma omp critical
      error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  ConfusionMatrix cm(model.class_labels);
  for (std::size_t k = 0; k < records.size(); ++k)
    cm.add(static_cast<std::size_t>(truth[k]), static_cast<std::size_t>(predicted[k]));
  return cm;
}

// --- benchmark -------------------------------------------------------------------

json BenchStats::to_json() const {
  return {{"detector", detector}, {"n", n}, {"mean_s", mean_s}, {"median_s", median_s},
          {"std_s", std_s},       {"min_s", min_s}, {"max_s", max_s}};
}

json BenchmarkReport::to_json() const {
  json j = {{"fragment_size", fragment_size}, {"samples", samples}, {"repeats", repeats},
            {"hardware", hardware},           {"tool_version", std::string(kToolVersion)}};
  j["detectors"] = json::array();
  for (const auto& d : detectors) j["detectors"].push_back(d.to_json());
  if (nn_batched_per_sample_s) j["nn_batched_per_sample_s"] = *nn_batched_per_sample_s;
  return j;
}

BenchStats summarize_times(std::string name, std::vector<double> seconds) {
  if (seconds.empty()) throw std::invalid_argument("no timings to summarize");
  BenchStats s;
  s.detector = std::move(name);
  s.n = seconds.size();
  double mean = 0, m2 = 0;
  for (std::size_t i = 0; i < seconds.size(); ++i) {
    const double d = seconds[i] - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (seconds[i] - mean);
  }
  s.mean_s = mean;
  s.std_s = seconds.size() > 1 ? std::sqrt(m2 / static_cast<double>(seconds.size() - 1)) : 0.0;
  std::sort(seconds.begin(), seconds.end());
  s.median_s = quantile_linear(seconds, 0.5);
  s.min_s = seconds.front();
  s.max_s = seconds.back();
  return s;
}

BenchmarkReport bench_overhead(std::span<const Detector> detectors, std::span<const std::span<const std::uint8_t>> samples,
                               std::size_t repeats, std::size_t warmup) {
  if (samples.empty()) throw std::invalid_argument("benchmark needs samples");
  if (repeats == 0) throw std::invalid_argument("repeats must be positive");
  const std::size_t size = samples.front().size();
  for (auto s : samples)
    if (s.size() != size) throw std::invalid_argument("benchmark samples must share one fragment size");

  const int saved_threads = omp_get_max_threads();
  omp_set_num_threads(1);
  BenchmarkReport report;
  report.fragment_size = size;
  report.samples = samples.size();
  report.repeats = repeats;
  report.hardware = hardware_note();
  volatile std::size_t sink = 0;
  using clock = std::chrono::steady_clock;
  try {
    for (const auto& d : detectors) {
      for (std::size_t w = 0; w < warmup; ++w) sink = sink + d.is_encrypted(samples[w % samples.size()]);
      std::vector<double> times;
      times.reserve(samples.size() * repeats);
      for (std::size_t r = 0; r < repeats; ++r)
        for (auto s : samples) {
          const auto t0 = clock::now();
          const bool v = d.is_encrypted(s);
          const auto t1 = clock::now();
          sink = sink + v;
          times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
      report.detectors.push_back(summarize_times(d.name, std::move(times)));
    }
  } catch (...) {
    omp_set_num_threads(saved_threads);
    throw;
  }
  omp_set_num_threads(saved_threads);
  return report;
}

double bench_batched_inference(const MlpModel& model, std::span<const std::span<const std::uint8_t>> samples) {
  if (samples.empty()) throw std::invalid_argument("benchmark needs samples");
  if (!model.scaler) throw std::invalid_argument("model has no scaler attached");
  const auto t0 = std::chrono::steady_clock::now();
  Matrix<float> x;
  x.rows = samples.size();
  x.cols = kFeatureDim;
  x.data = kernels::feature_matrix(samples, &*model.scaler);
  const auto probs = forward(model.net, x);
  const auto t1 = std::chrono::steady_clock::now();
  volatile float sink = probs.data.front();
  (void)sink;
  return std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(samples.size());
}

std::string hardware_note() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);)
    if (line.starts_with("model name")) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads, timed single-threaded";
}

std::string curve_csv(std::span<const BinaryReport> rows) {
  std::ostringstream out;
  out << "size,detector,format_or_all,accuracy\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& r : rows) out << r.size << ',' << r.detector << ',' << r.format_or_all << ',' << r.accuracy << '\n';
  return out.str();
}

}  // namespace encod
