#pragma once

// Data-parallel kernels. Every OpenMP kernel has a `_serial` twin that is the
// reference implementation used by the tests and the benchmark.
//
// Parallel kernels split work by output element, so each result is produced
// by one thread in a fixed order: results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "encod/entropy.hpp"
#include "encod/features.hpp"

namespace encod::kernels {

using Fragment = std::span<const std::uint8_t>;

std::vector<ByteHistogram> histograms(std::span<const Fragment> frags);
std::vector<ByteHistogram> histograms_serial(std::span<const Fragment> frags);

std::vector<double> entropies(std::span<const Fragment> frags);
std::vector<double> entropies_serial(std::span<const Fragment> frags);

/// Row-major (frags.size() x 256) float matrix of byte PDFs, scaled by
/// `scaler` when given.
std::vector<float> feature_matrix(std::span<const Fragment> frags, const ScalerParams* scaler);
std::vector<float> feature_matrix_serial(std::span<const Fragment> frags, const ScalerParams* scaler);

/// Per-feature min/max of a row-major (rows x 256) unscaled feature matrix.
ScalerParams fit_scaler_rows(std::span<const float> rows, std::size_t n_rows);

/// Applies `fn` to every fragment.
std::vector<std::uint8_t> map_flags(std::span<const Fragment> frags,
                                    const std::function<bool(Fragment)>& fn);
std::vector<std::uint8_t> map_flags_serial(std::span<const Fragment> frags,
                                           const std::function<bool(Fragment)>& fn);

// Dense row-major products. When `accumulate` is false C is overwritten.
//   gemm_nn: C[m x n]  = A[m x k]   * B[k x n]
//   gemm_tn: C[k x n]  = A[m x k]^T * B[m x n]
//   gemm_nt: C[m x k]  = A[m x n]   * B[k x n]^T
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nn_serial(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn_serial(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_nt_serial(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

/// Sets the OpenMP thread count used by the parallel kernels (0 = runtime default).
void set_jobs(int jobs);

}  // namespace encod::kernels
