#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "encod/entropy.hpp"

namespace encod {

inline constexpr double kDefaultAlpha = 0.01;

/// Bits of a payload, most significant bit of each byte first, one bit per element.
class BitSequence {
 public:
  BitSequence() = default;
  explicit BitSequence(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {}

  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

 private:
  std::vector<std::uint8_t> bits_;
};

/// Throws std::invalid_argument on an empty payload.
BitSequence to_bits(std::span<const std::uint8_t> payload);

struct TestVerdict {
  std::string test_name;
  double statistic = 0.0;
  std::optional<double> p_value;
  bool passed = false;
  bool executable = true;

  nlohmann::json to_json() const;
};

// --- NIST SP800-22 subset ---------------------------------------------------
//
// Minimum lengths (n bits): monobit, block frequency, runs, cusum: 100;
// longest run: 128; spectral: 1000; matrix rank: 38912. Shorter input, or a
// violated parameter constraint, yields executable = false.

inline constexpr std::size_t kBlockFrequencyM = 128;
inline constexpr int kApproxEntropyM = 2;
inline constexpr int kSerialM = 3;

enum class CusumMode { forward, backward };

TestVerdict nist_monobit(const BitSequence& b, double alpha = kDefaultAlpha);
TestVerdict nist_block_frequency(const BitSequence& b, std::size_t block_bits = kBlockFrequencyM,
                                 double alpha = kDefaultAlpha);
TestVerdict nist_runs(const BitSequence& b, double alpha = kDefaultAlpha);
TestVerdict nist_longest_run(const BitSequence& b, double alpha = kDefaultAlpha);
TestVerdict nist_cusum(const BitSequence& b, CusumMode mode, double alpha = kDefaultAlpha);
TestVerdict nist_approx_entropy(const BitSequence& b, int m = kApproxEntropyM, double alpha = kDefaultAlpha);
/// Two p-values; passes only when both do. `statistic` is ∇ψ²; p_value is the smaller one.
TestVerdict nist_serial(const BitSequence& b, int m = kSerialM, double alpha = kDefaultAlpha);
TestVerdict nist_spectral(const BitSequence& b, double alpha = kDefaultAlpha);
TestVerdict nist_matrix_rank(const BitSequence& b, double alpha = kDefaultAlpha);

/// φ(m) = Σ C_i ln C_i over the 2^m overlapping (wrapped) m-bit patterns,
/// summed in ascending pattern order. φ(0) = 0.
double approx_entropy_phi(const BitSequence& b, int m);

/// Rank over GF(2) of a square bit matrix given as rows (bit j of row = column j).
int gf2_rank(std::vector<std::uint32_t> rows, int cols);

/// All ten verdicts (cusum counted twice) in a fixed order.
std::vector<TestVerdict> run_nist_suite(const BitSequence& b, double alpha = kDefaultAlpha);

struct SuiteVerdict {
  bool random = false;
  std::size_t passes = 0;
  std::size_t failures = 0;
  std::vector<TestVerdict> tests;
};

/// Counts only executable verdicts; random iff passes > failures (a tie is
/// non-random). Throws std::runtime_error when nothing is executable.
SuiteVerdict majority_vote(std::vector<TestVerdict> verdicts);

/// Throws std::invalid_argument for payloads shorter than 512 bytes.
SuiteVerdict nist_majority_vote(std::span<const std::uint8_t> payload, double alpha = kDefaultAlpha);

// --- chi-square -------------------------------------------------------------

/// Σ (N_i - L/256)^2 / (L/256). Throws std::invalid_argument when L < 256.
double chi2_statistic(const ByteHistogram& h);

/// Upper tail of chi-square with 255 degrees of freedom.
double chi2_pvalue(double statistic);

struct Chi2Calibration {
  std::size_t fragment_size = 0;
  double mean = 0.0;
  double std = 0.0;
  double c = 2.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  double lower() const noexcept { return mean - c * std; }
  double upper() const noexcept { return mean + c * std; }

  nlohmann::json to_json() const;
  static Chi2Calibration from_json(const nlohmann::json& j);
};

void save_calibration(const Chi2Calibration& cal, const std::string& path);
Chi2Calibration load_calibration(const std::string& path);

inline constexpr double kDefaultChi2Multiplier = 2.0;
inline constexpr std::size_t kMinCalibrationFragments = 1000;

/// Passes iff the statistic lies in [mean - c std, mean + c std].
/// Throws std::invalid_argument when h.total differs from cal.fragment_size.
TestVerdict chi2_absolute_test(const ByteHistogram& h, const Chi2Calibration& cal);

/// Passes iff the chi-square p-value lies in [0.01, 0.99].
TestVerdict chi2_ci_test(const ByteHistogram& h);

/// Sample mean / standard deviation of the statistic over encrypted fragments
/// (Welford). Needs >= 1000 fragments, all of one size.
Chi2Calibration calibrate_chi2(std::span<const std::span<const std::uint8_t>> encrypted, double c,
                               std::uint64_t seed = 0);

// --- HEDGE ------------------------------------------------------------------

/// Random iff block frequency, cusum (forward), approximate entropy, chi-square
/// absolute and chi-square CI all pass. Throws std::invalid_argument when the
/// payload is shorter than 512 bytes or the calibration is for another size.
SuiteVerdict hedge_classify(std::span<const std::uint8_t> payload, const Chi2Calibration& cal,
                            double alpha = kDefaultAlpha);

}  // namespace encod
