#include "encod/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstring>
#include <exception>
#include <stdexcept>

namespace encod::kernels {
namespace {

// Below this many multiply-adds a product runs on the calling thread.
constexpr std::size_t kParallelWork = std::size_t{1} << 17;

inline std::int64_t ssize(std::size_t n) { return static_cast<std::int64_t>(n); }

template <typename T>
void fill_row(const ByteHistogram& h, const ScalerParams* scaler, T* row) {
  const double inv = 1.0 / static_cast<double>(h.total);
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    double v = static_cast<double>(h.counts[i]) * inv;
    if (scaler) v = scale_feature(v, scaler->mins[i], scaler->maxs[i], scaler->range_lo, scaler->range_hi);
    row[i] = static_cast<T>(v);
  }
}

void require_non_empty(std::span<const Fragment> frags) {
  for (auto f : frags)
    if (f.empty()) throw std::invalid_argument("empty fragment in batch");
}

}  // namespace

void set_jobs(int jobs) {
  if (jobs > 0) omp_set_num_threads(jobs);
}

std::vector<ByteHistogram> histograms(std::span<const Fragment> frags) {
  require_non_empty(frags);
  std::vector<ByteHistogram> out(frags.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < ssize(frags.size()); ++i) out[i] = byte_histogram(frags[i]);
  return out;
}

std::vector<ByteHistogram> histograms_serial(std::span<const Fragment> frags) {
  std::vector<ByteHistogram> out;
  out.reserve(frags.size());
  for (auto f : frags) out.push_back(byte_histogram(f));
  return out;
}

std::vector<double> entropies(std::span<const Fragment> frags) {
  require_non_empty(frags);
  std::vector<double> out(frags.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < ssize(frags.size()); ++i) out[i] = shannon_entropy_mle(byte_histogram(frags[i]));
  return out;
}

std::vector<double> entropies_serial(std::span<const Fragment> frags) {
  std::vector<double> out;
  out.reserve(frags.size());
  for (auto f : frags) out.push_back(shannon_entropy_mle(byte_histogram(f)));
  return out;
}

std::vector<float> feature_matrix(std::span<const Fragment> frags, const ScalerParams* scaler) {
  require_non_empty(frags);
  std::vector<float> out(frags.size() * kFeatureDim);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < ssize(frags.size()); ++i)
    fill_row(byte_histogram(frags[i]), scaler, out.data() + i * kFeatureDim);
  return out;
}

std::vector<float> feature_matrix_serial(std::span<const Fragment> frags, const ScalerParams* scaler) {
  std::vector<float> out(frags.size() * kFeatureDim);
  for (std::size_t i = 0; i < frags.size(); ++i)
    fill_row(byte_histogram(frags[i]), scaler, out.data() + i * kFeatureDim);
  return out;
}

ScalerParams fit_scaler_rows(std::span<const float> rows, std::size_t n_rows) {
  if (n_rows < 2) throw std::invalid_argument("fit_scaler needs at least 2 vectors");
  if (rows.size() != n_rows * kFeatureDim) throw std::invalid_argument("feature matrix shape mismatch");
  ScalerParams p;
  p.mins.assign(kFeatureDim, 0.0);
  p.maxs.assign(kFeatureDim, 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t f = 0; f < ssize(kFeatureDim); ++f) {
    float lo = rows[f], hi = rows[f];
    for (std::size_t r = 1; r < n_rows; ++r) {
      const float v = rows[r * kFeatureDim + f];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    p.mins[f] = lo;
    p.maxs[f] = hi;
  }
  return p;
}

std::vector<std::uint8_t> map_flags(std::span<const Fragment> frags, const std::function<bool(Fragment)>& fn) {
  std::vector<std::uint8_t> out(frags.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < ssize(frags.size()); ++i) {
    try {
      out[i] = fn(frags[i]) ? 1 : 0;
    } catch (...) {
#pragma omp critical(encod_map_flags)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<std::uint8_t> map_flags_serial(std::span<const Fragment> frags,
                                           const std::function<bool(Fragment)>& fn) {
  std::vector<std::uint8_t> out;
  out.reserve(frags.size());
  for (auto f : frags) out.push_back(fn(f) ? 1 : 0);
  return out;
}

// --- dense products --------------------------------------------------------

namespace {

enum class Store { overwrite, accumulate_into, add_after };

constexpr std::size_t kColBlock = 64;

// out[j] (j < w) gets sum_q coef[q * cs] * rows[q * rs + j], summed in
// ascending q. The running sums for one column block stay in registers.
template <typename T>
void dot_block(T* out, std::size_t w, std::size_t count, const T* coef, std::size_t cs, const T* rows, std::size_t rs,
               Store mode) {
  alignas(64) T acc[kColBlock];
  for (std::size_t j = 0; j < w; ++j) acc[j] = mode == Store::accumulate_into ? out[j] : T{0};
  if (w == kColBlock) {
    for (std::size_t q = 0; q < count; ++q) {
      const T cv = coef[q * cs];
      if (cv == T{0}) continue;
      const T* r = rows + q * rs;
#pragma omp simd aligned(acc : 64)
      for (std::size_t j = 0; j < kColBlock; ++j) acc[j] += cv * r[j];
    }
  } else {
    for (std::size_t q = 0; q < count; ++q) {
      const T cv = coef[q * cs];
      if (cv == T{0}) continue;
      const T* r = rows + q * rs;
      for (std::size_t j = 0; j < w; ++j) acc[j] += cv * r[j];
    }
  }
  if (mode == Store::add_after)
    for (std::size_t j = 0; j < w; ++j) out[j] += acc[j];
  else
    std::copy(acc, acc + w, out);
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  const Store mode = accumulate ? Store::accumulate_into : Store::overwrite;
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::int64_t i = 0; i < ssize(m); ++i)
    for (std::size_t jb = 0; jb < n; jb += kColBlock)
      dot_block(c + i * n + jb, std::min(kColBlock, n - jb), k, a + i * k, 1, b + jb, n, mode);
}

template <typename T>
void gemm_nn_serial(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  const Store mode = accumulate ? Store::accumulate_into : Store::overwrite;
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::int64_t p = 0; p < ssize(k); ++p)
    for (std::size_t jb = 0; jb < n; jb += kColBlock)
      dot_block(c + p * n + jb, std::min(kColBlock, n - jb), m, a + p, k, b + jb, n, mode);
}

template <typename T>
void gemm_tn_serial(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[p * n + j] : T{0};
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
      c[p * n + j] = acc;
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  // With B transposed once, each output element still sums over j in
  // ascending order, as in the serial reference.
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  const Store mode = accumulate ? Store::add_after : Store::overwrite;
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::int64_t i = 0; i < ssize(m); ++i)
    for (std::size_t pb = 0; pb < k; pb += kColBlock)
      dot_block(c + i * k + pb, std::min(kColBlock, k - pb), n, a + i * n, 1, bt.data() + pb, k, mode);
}

template <typename T>
void gemm_nt_serial(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * b[p * n + j];
      c[i * k + p] = accumulate ? c[i * k + p] + acc : acc;
    }
}

#define ENCOD_INSTANTIATE_GEMM(T)                                                                          \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);        \
  template void gemm_nn_serial<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);        \
  template void gemm_tn_serial<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool); \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);        \
  template void gemm_nt_serial<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);

ENCOD_INSTANTIATE_GEMM(float)
ENCOD_INSTANTIATE_GEMM(double)

}  // namespace encod::kernels
