#include "encod/randtests.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "encod/special.hpp"

namespace encod {
using nlohmann::json;

BitSequence to_bits(std::span<const std::uint8_t> payload) {
  if (payload.empty()) throw std::invalid_argument("to_bits: empty payload");
  std::vector<std::uint8_t> bits(payload.size() * 8);
  for (std::size_t i = 0; i < payload.size(); ++i)
    for (int k = 0; k < 8; ++k) bits[i * 8 + k] = static_cast<std::uint8_t>((payload[i] >> (7 - k)) & 1u);
  return BitSequence(std::move(bits));
}

json TestVerdict::to_json() const {
  return {{"name", test_name},
          {"stat", statistic},
          {"p", p_value ? json(*p_value) : json(nullptr)},
          {"passed", passed},
          {"executable", executable}};
}

namespace {

TestVerdict not_executable(std::string name) {
  TestVerdict v;
  v.test_name = std::move(name);
  v.executable = false;
  return v;
}

TestVerdict decided(std::string name, double statistic, double p, double alpha) {
  TestVerdict v;
  v.test_name = std::move(name);
  v.statistic = statistic;
  v.p_value = std::clamp(p, 0.0, 1.0);
  v.passed = *v.p_value >= alpha;
  return v;
}

// Overlapping m-bit pattern counts with wraparound; pattern value has the
// first bit as its most significant bit.
std::vector<std::uint64_t> pattern_counts(const BitSequence& b, int m) {
  std::vector<std::uint64_t> counts(std::size_t{1} << m, 0);
  const std::size_t n = b.size();
  const std::uint32_t mask = (1u << m) - 1u;
  std::uint32_t window = 0;
  for (int k = 0; k < m - 1; ++k) window = (window << 1) | b[k % n];
  for (std::size_t i = 0; i < n; ++i) {
    window = ((window << 1) | b[(i + m - 1) % n]) & mask;
    ++counts[window];
  }
  return counts;
}

int floor_log2(std::size_t n) {
  int r = -1;
  while (n) {
    n >>= 1;
    ++r;
  }
  return r;
}

double psi_squared(const BitSequence& b, int m) {
  if (m <= 0) return 0.0;
  const auto counts = pattern_counts(b, m);
  const double n = static_cast<double>(b.size());
  double sum = 0.0;
  for (auto c : counts) sum += static_cast<double>(c) * static_cast<double>(c);
  return std::ldexp(sum, m) / n - n;
}

class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans plans;
    return plans;
  }

  fftw_plan plan_for(int n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
    plans_.emplace(n, p);
    return p;
  }

 private:
  ~FftPlans() {
    for (auto& [n, p] : plans_) fftw_destroy_plan(p);
  }
  std::mutex mutex_;
  std::map<int, fftw_plan> plans_;
};

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

TestVerdict nist_monobit(const BitSequence& b, double alpha) {
  const std::size_t n = b.size();
  if (n < 100) return not_executable("monobit");
  std::int64_t s = 0;
  for (std::size_t i = 0; i < n; ++i) s += b[i] ? 1 : -1;
  const double s_obs = std::fabs(static_cast<double>(s)) / std::sqrt(static_cast<double>(n));
  return decided("monobit", s_obs, std::erfc(s_obs / std::numbers::sqrt2), alpha);
}

TestVerdict nist_block_frequency(const BitSequence& b, std::size_t block_bits, double alpha) {
  const std::size_t n = b.size();
  if (n < 100 || block_bits < 20 || n / block_bits == 0) return not_executable("block_frequency");
  const std::size_t blocks = n / block_bits;
  double sum = 0.0;
  for (std::size_t j = 0; j < blocks; ++j) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < block_bits; ++k) ones += b[j * block_bits + k];
    const double pi = static_cast<double>(ones) / static_cast<double>(block_bits) - 0.5;
    sum += pi * pi;
  }
  const double chi2 = 4.0 * static_cast<double>(block_bits) * sum;
  return decided("block_frequency", chi2, igamc(static_cast<double>(blocks) / 2.0, chi2 / 2.0), alpha);
}

TestVerdict nist_runs(const BitSequence& b, double alpha) {
  const std::size_t n = b.size();
  if (n < 100) return not_executable("runs");
  const double nd = static_cast<double>(n);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < n; ++i) ones += b[i];
  const double pi = static_cast<double>(ones) / nd;
  std::size_t v = 1;
  for (std::size_t i = 1; i < n; ++i) v += b[i] != b[i - 1];
  const double vn = static_cast<double>(v);
  // Frequency prerequisite: the runs test is not meaningful when it fails.
  if (std::fabs(pi - 0.5) >= 2.0 / std::sqrt(nd)) return decided("runs", vn, 0.0, alpha);
  const double num = std::fabs(vn - 2.0 * nd * pi * (1.0 - pi));
  const double den = 2.0 * std::sqrt(2.0 * nd) * pi * (1.0 - pi);
  return decided("runs", vn, std::erfc(num / den), alpha);
}

TestVerdict nist_longest_run(const BitSequence& b, double alpha) {
  const std::size_t n = b.size();
  if (n < 128) return not_executable("longest_run");
  std::size_t block = 0;
  int v_lo = 0;
  std::vector<double> pi;
  if (n < 6272) {
    block = 8;
    v_lo = 1;
    pi = {0.2148, 0.3672, 0.2305, 0.1875};
  } else if (n < 750000) {
    block = 128;
    v_lo = 4;
    pi = {0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124};
  } else {
    block = 10000;
    v_lo = 10;
    pi = {0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727};
  }
  const int classes = static_cast<int>(pi.size());
  const std::size_t blocks = n / block;
  std::vector<double> nu(pi.size(), 0.0);
  for (std::size_t j = 0; j < blocks; ++j) {
    int longest = 0, run = 0;
    for (std::size_t k = 0; k < block; ++k) {
      run = b[j * block + k] ? run + 1 : 0;
      longest = std::max(longest, run);
    }
    const int cls = std::clamp(longest - v_lo, 0, classes - 1);
    nu[static_cast<std::size_t>(cls)] += 1.0;
  }
  const double nb = static_cast<double>(blocks);
  double chi2 = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const double e = nb * pi[i];
    chi2 += (nu[i] - e) * (nu[i] - e) / e;
  }
  const double k = static_cast<double>(classes - 1);
  return decided("longest_run", chi2, igamc(k / 2.0, chi2 / 2.0), alpha);
}

TestVerdict nist_cusum(const BitSequence& b, CusumMode mode, double alpha) {
  const std::string name = mode == CusumMode::forward ? "cusum_forward" : "cusum_backward";
  const std::size_t n = b.size();
  if (n < 100) return not_executable(name);
  std::int64_t s = 0, z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto bit = mode == CusumMode::forward ? b[i] : b[n - 1 - i];
    s += bit ? 1 : -1;
    z = std::max<std::int64_t>(z, s < 0 ? -s : s);
  }
  const auto ni = static_cast<std::int64_t>(n);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const double zd = static_cast<double>(z);
  // Summation bounds use C integer division, matching the reference code.
  double sum1 = 0.0;
  for (std::int64_t k = (-ni / z + 1) / 4; k <= (ni / z - 1) / 4; ++k)
    sum1 += normal_cdf(static_cast<double>(4 * k + 1) * zd / sqrt_n) -
            normal_cdf(static_cast<double>(4 * k - 1) * zd / sqrt_n);
  double sum2 = 0.0;
  for (std::int64_t k = (-ni / z - 3) / 4; k <= (ni / z - 1) / 4; ++k)
    sum2 += normal_cdf(static_cast<double>(4 * k + 3) * zd / sqrt_n) -
            normal_cdf(static_cast<double>(4 * k + 1) * zd / sqrt_n);
  return decided(name, zd, 1.0 - sum1 + sum2, alpha);
}

double approx_entropy_phi(const BitSequence& b, int m) {
  if (m < 0 || m > 24) throw std::invalid_argument("approximate entropy pattern length out of range");
  if (b.size() == 0) throw std::invalid_argument("approximate entropy of empty sequence");
  if (m == 0) return 0.0;
  const auto counts = pattern_counts(b, m);
  const double n = static_cast<double>(b.size());
  double phi = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    phi += p * std::log(p);
  }
  return phi;
}

TestVerdict nist_approx_entropy(const BitSequence& b, int m, double alpha) {
  const std::size_t n = b.size();
  if (n < 100 || m < 1 || m >= floor_log2(n) - 5) return not_executable("approximate_entropy");
  const double apen = approx_entropy_phi(b, m) - approx_entropy_phi(b, m + 1);
  const double chi2 = 2.0 * static_cast<double>(n) * (std::numbers::ln2 - apen);
  return decided("approximate_entropy", chi2, igamc(std::ldexp(1.0, m - 1), chi2 / 2.0), alpha);
}

TestVerdict nist_serial(const BitSequence& b, int m, double alpha) {
  const std::size_t n = b.size();
  if (n < 100 || m < 2 || m >= floor_log2(n) - 2) return not_executable("serial");
  const double psi_m = psi_squared(b, m);
  const double psi_m1 = psi_squared(b, m - 1);
  const double psi_m2 = psi_squared(b, m - 2);
  const double del1 = psi_m - psi_m1;
  const double del2 = psi_m - 2.0 * psi_m1 + psi_m2;
  const double p1 = std::clamp(igamc(std::ldexp(1.0, m - 2), del1 / 2.0), 0.0, 1.0);
  const double p2 = std::clamp(igamc(std::ldexp(1.0, m - 3), del2 / 2.0), 0.0, 1.0);
  TestVerdict v;
  v.test_name = "serial";
  v.statistic = del1;
  v.p_value = std::min(p1, p2);
  v.passed = p1 >= alpha && p2 >= alpha;
  return v;
}

TestVerdict nist_spectral(const BitSequence& b, double alpha) {
  const std::size_t n = b.size();
  if (n < 1000) return not_executable("spectral");
  const int ni = static_cast<int>(n);
  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n / 2 + 1));
  for (std::size_t i = 0; i < n; ++i) in.get()[i] = b[i] ? 1.0 : -1.0;
  fftw_execute_dft_r2c(FftPlans::instance().plan_for(ni), in.get(), out.get());

  const double nd = static_cast<double>(n);
  const double threshold = std::sqrt(std::log(1.0 / 0.05) * nd);
  const double n0 = 0.95 * nd / 2.0;
  std::size_t n1 = 0;
  for (std::size_t j = 0; j < n / 2; ++j) {
    const double re = out.get()[j][0], im = out.get()[j][1];
    if (std::sqrt(re * re + im * im) < threshold) ++n1;
  }
  const double d = (static_cast<double>(n1) - n0) / std::sqrt(nd * 0.95 * 0.05 / 4.0);
  return decided("spectral", d, std::erfc(std::fabs(d) / std::numbers::sqrt2), alpha);
}

int gf2_rank(std::vector<std::uint32_t> rows, int cols) {
  int rank = 0;
  const int n_rows = static_cast<int>(rows.size());
  for (int col = 0; col < cols && rank < n_rows; ++col) {
    const std::uint32_t bit = 1u << col;
    int pivot = -1;
    for (int r = rank; r < n_rows; ++r)
      if (rows[r] & bit) {
        pivot = r;
        break;
      }
    if (pivot < 0) continue;
    std::swap(rows[rank], rows[pivot]);
    for (int r = 0; r < n_rows; ++r)
      if (r != rank && (rows[r] & bit)) rows[r] ^= rows[rank];
    ++rank;
  }
  return rank;
}

TestVerdict nist_matrix_rank(const BitSequence& b, double alpha) {
  constexpr int kDim = 32;
  constexpr std::size_t kMatrixBits = kDim * kDim;
  const std::size_t n = b.size();
  if (n < 38 * kMatrixBits) return not_executable("matrix_rank");

  // P(rank = r) for a random 32x32 matrix over GF(2).
  auto rank_probability = [](int r) {
    double product = 1.0;
    for (int i = 0; i < r; ++i) {
      const double q = 1.0 - std::ldexp(1.0, i - kDim);
      product *= q * q / (1.0 - std::ldexp(1.0, i - r));
    }
    return std::ldexp(product, r * (2 * kDim - r) - kDim * kDim);
  };
  const double p_full = rank_probability(kDim);
  const double p_minus1 = rank_probability(kDim - 1);
  const double p_rest = 1.0 - p_full - p_minus1;

  const std::size_t matrices = n / kMatrixBits;
  double f_full = 0, f_minus1 = 0;
  std::vector<std::uint32_t> rows(kDim);
  for (std::size_t k = 0; k < matrices; ++k) {
    for (int r = 0; r < kDim; ++r) {
      std::uint32_t row = 0;
      for (int c = 0; c < kDim; ++c) row |= static_cast<std::uint32_t>(b[k * kMatrixBits + r * kDim + c]) << c;
      rows[r] = row;
    }
    const int rank = gf2_rank(rows, kDim);
    if (rank == kDim)
      f_full += 1;
    else if (rank == kDim - 1)
      f_minus1 += 1;
  }
  const double nm = static_cast<double>(matrices);
  const double f_rest = nm - f_full - f_minus1;
  const double chi2 = (f_full - p_full * nm) * (f_full - p_full * nm) / (p_full * nm) +
                      (f_minus1 - p_minus1 * nm) * (f_minus1 - p_minus1 * nm) / (p_minus1 * nm) +
                      (f_rest - p_rest * nm) * (f_rest - p_rest * nm) / (p_rest * nm);
  return decided("matrix_rank", chi2, std::exp(-chi2 / 2.0), alpha);
}

std::vector<TestVerdict> run_nist_suite(const BitSequence& b, double alpha) {
  return {nist_monobit(b, alpha),
          nist_block_frequency(b, kBlockFrequencyM, alpha),
          nist_runs(b, alpha),
          nist_longest_run(b, alpha),
          nist_cusum(b, CusumMode::forward, alpha),
          nist_cusum(b, CusumMode::backward, alpha),
          nist_approx_entropy(b, kApproxEntropyM, alpha),
          nist_serial(b, kSerialM, alpha),
          nist_spectral(b, alpha),
          nist_matrix_rank(b, alpha)};
}

SuiteVerdict majority_vote(std::vector<TestVerdict> verdicts) {
  SuiteVerdict out;
  for (const auto& v : verdicts) {
    if (!v.executable) continue;
    (v.passed ? out.passes : out.failures) += 1;
  }
  if (out.passes + out.failures == 0) throw std::runtime_error("no executable test in the vote");
  out.random = out.passes > out.failures;
  out.tests = std::move(verdicts);
  return out;
}

SuiteVerdict nist_majority_vote(std::span<const std::uint8_t> payload, double alpha) {
  if (payload.size() < 512) throw std::invalid_argument("NIST majority vote needs at least 512 bytes");
  return majority_vote(run_nist_suite(to_bits(payload), alpha));
}

// --- chi-square ---------------------------------------------------------------

double chi2_statistic(const ByteHistogram& h) {
  if (h.total < 256)
    throw std::invalid_argument("chi-square needs at least 256 bytes (expected count >= 1), got " +
                                std::to_string(h.total));
  const double expected = static_cast<double>(h.total) / 256.0;
  double sum = 0.0;
  for (auto c : h.counts) {
    const double d = static_cast<double>(c) - expected;
    sum += d * d;
  }
  return sum / expected;
}

double chi2_pvalue(double statistic) {
  if (!(statistic >= 0.0)) throw std::domain_error("chi-square statistic must be non-negative");
  return igamc(255.0 / 2.0, statistic / 2.0);
}

json Chi2Calibration::to_json() const {
  return {{"fragment_size", fragment_size}, {"mean", mean}, {"std", std},
          {"c", c}, {"n_samples", n_samples}, {"seed", seed}};
}

Chi2Calibration Chi2Calibration::from_json(const json& j) {
  Chi2Calibration cal;
  cal.fragment_size = j.at("fragment_size").get<std::size_t>();
  cal.mean = j.at("mean").get<double>();
  cal.std = j.at("std").get<double>();
  cal.c = j.at("c").get<double>();
  cal.n_samples = j.at("n_samples").get<std::size_t>();
  cal.seed = j.value("seed", std::uint64_t{0});
  if (cal.std < 0.0) throw std::invalid_argument("calibration std must be non-negative");
  return cal;
}

void save_calibration(const Chi2Calibration& cal, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << cal.to_json().dump() << '\n';
}

Chi2Calibration load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return Chi2Calibration::from_json(json::parse(in));
}

TestVerdict chi2_absolute_test(const ByteHistogram& h, const Chi2Calibration& cal) {
  if (h.total != cal.fragment_size)
    throw std::invalid_argument("fragment of " + std::to_string(h.total) + " bytes checked against a " +
                                std::to_string(cal.fragment_size) + "-byte calibration");
  TestVerdict v;
  v.test_name = "chi2_absolute";
  v.statistic = chi2_statistic(h);
  v.passed = v.statistic >= cal.lower() && v.statistic <= cal.upper();
  return v;
}

TestVerdict chi2_ci_test(const ByteHistogram& h) {
  TestVerdict v;
  v.test_name = "chi2_ci";
  v.statistic = chi2_statistic(h);
  v.p_value = chi2_pvalue(v.statistic);
  v.passed = *v.p_value >= 0.01 && *v.p_value <= 0.99;
  return v;
}

Chi2Calibration calibrate_chi2(std::span<const std::span<const std::uint8_t>> encrypted, double c,
                               std::uint64_t seed) {
  if (encrypted.size() < kMinCalibrationFragments)
    throw std::invalid_argument("chi-square calibration needs at least 1000 encrypted fragments, got " +
                                std::to_string(encrypted.size()));
  if (!(c >= 0.0)) throw std::invalid_argument("calibration multiplier must be non-negative");
  Chi2Calibration cal;
  cal.fragment_size = encrypted.front().size();
  cal.c = c;
  cal.seed = seed;
  double mean = 0.0, m2 = 0.0;
  std::size_t k = 0;
  for (auto frag : encrypted) {
    if (frag.size() != cal.fragment_size) throw std::invalid_argument("calibration fragments differ in size");
    const double x = chi2_statistic(byte_histogram(frag));
    ++k;
    const double delta = x - mean;
    mean += delta / static_cast<double>(k);
    m2 += delta * (x - mean);
  }
  cal.mean = mean;
  cal.std = std::sqrt(m2 / static_cast<double>(k - 1));
  cal.n_samples = k;
  return cal;
}

SuiteVerdict hedge_classify(std::span<const std::uint8_t> payload, const Chi2Calibration& cal, double alpha) {
  if (payload.size() < 512) throw std::invalid_argument("HEDGE needs at least 512 bytes");
  if (cal.fragment_size != payload.size())
    throw std::invalid_argument("no chi-square calibration for " + std::to_string(payload.size()) +
                                "-byte fragments (have " + std::to_string(cal.fragment_size) + ")");
  const auto bits = to_bits(payload);
  const auto hist = byte_histogram(payload);
  SuiteVerdict out;
  out.tests = {nist_block_frequency(bits, kBlockFrequencyM, alpha), nist_cusum(bits, CusumMode::forward, alpha),
               nist_approx_entropy(bits, kApproxEntropyM, alpha), chi2_absolute_test(hist, cal),
               chi2_ci_test(hist)};
  for (const auto& t : out.tests) (t.passed ? out.passes : out.failures) += 1;
  out.random = out.failures == 0;
  return out;
}

}  // namespace encod
