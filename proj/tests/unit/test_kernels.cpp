#include <doctest.h>

#include <random>
#include <stdexcept>

#include "encod/kernels.hpp"
#include "util.hpp"

using namespace encod;

namespace {

struct Frags {
  std::vector<std::vector<std::uint8_t>> owned;
  std::vector<kernels::Fragment> views;
  Frags(std::size_t n, std::size_t size, std::uint64_t seed) {
    for (std::size_t i = 0; i < n; ++i) {
      auto b = testutil::random_bytes(size, seed + i);
      if (i % 3 == 0)
        for (auto& x : b) x &= 0x0f;
      owned.push_back(std::move(b));
    }
    views.assign(owned.begin(), owned.end());
  }
};

template <typename T>
std::vector<T> random_matrix(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

}  // namespace

TEST_CASE("parallel histogram, entropy and feature kernels equal their serial twins") {
  const Frags f(97, 1024, 1);
  const auto h = kernels::histograms(f.views), hs = kernels::histograms_serial(f.views);
  REQUIRE(h.size() == hs.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    CHECK(h[i].counts == hs[i].counts);
    CHECK(h[i].counts == byte_histogram(f.views[i]).counts);
  }
  CHECK(kernels::entropies(f.views) == kernels::entropies_serial(f.views));
  CHECK(kernels::feature_matrix(f.views, nullptr) == kernels::feature_matrix_serial(f.views, nullptr));

  const auto raw = kernels::feature_matrix_serial(f.views, nullptr);
  const auto p = kernels::fit_scaler_rows(raw, f.views.size());
  CHECK(kernels::feature_matrix(f.views, &p) == kernels::feature_matrix_serial(f.views, &p));

  std::vector<FeatureVector> fv;
  for (auto v : f.views) fv.push_back(extract_features(v));
  const auto q = fit_scaler(fv);
  for (std::size_t j = 0; j < kFeatureDim; ++j) {
    CHECK(p.mins[j] == doctest::Approx(q.mins[j]).epsilon(1e-6));
    CHECK(p.maxs[j] == doctest::Approx(q.maxs[j]).epsilon(1e-6));
  }
  const auto scaled = kernels::feature_matrix_serial(f.views, &q);
  const auto t = transform(fv[5], q);
  for (std::size_t j = 0; j < kFeatureDim; ++j) CHECK(scaled[5 * kFeatureDim + j] == static_cast<float>(t.values[j]));
}

TEST_CASE("results do not depend on the thread count") {
  const Frags f(50, 512, 9);
  kernels::set_jobs(1);
  const auto e1 = kernels::entropies(f.views);
  kernels::set_jobs(4);
  const auto e4 = kernels::entropies(f.views);
  kernels::set_jobs(0);
  CHECK(e1 == e4);
}

TEST_CASE("map_flags") {
  const Frags f(40, 256, 3);
  auto fn = [](kernels::Fragment b) { return b[0] % 2 == 0; };
  CHECK(kernels::map_flags(f.views, fn) == kernels::map_flags_serial(f.views, fn));
  auto thrower = [](kernels::Fragment b) -> bool {
    if (b[1] == b[2]) throw std::runtime_error("boom");
    return true;
  };
  std::vector<std::uint8_t> same(256, 0);
  std::vector<kernels::Fragment> v(f.views.begin(), f.views.end());
  v.push_back(same);
  CHECK_THROWS_AS(kernels::map_flags(v, thrower), std::runtime_error);
}

TEST_CASE_TEMPLATE("gemm variants equal the serial reference and a naive triple loop", T, float, double) {
  const std::size_t m = 37, k = 19, n = 23;
  const auto a = random_matrix<T>(m * k, 1), b = random_matrix<T>(k * n, 2);
  std::vector<T> c(m * n), cs(m * n), naive(m * n, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) naive[i * n + j] += a[i * k + p] * b[p * n + j];
  kernels::gemm_nn(m, k, n, a.data(), b.data(), c.data(), false);
  kernels::gemm_nn_serial(m, k, n, a.data(), b.data(), cs.data(), false);
  CHECK(c == cs);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(naive[i]).epsilon(1e-5));

  kernels::gemm_nn(m, k, n, a.data(), b.data(), c.data(), true);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(2 * naive[i]).epsilon(1e-5));

  // A^T B with A (m x k), B (m x n).
  const auto bm = random_matrix<T>(m * n, 3);
  std::vector<T> tn(k * n), tns(k * n), tn_naive(k * n, 0);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) tn_naive[p * n + j] += a[i * k + p] * bm[i * n + j];
  kernels::gemm_tn(m, k, n, a.data(), bm.data(), tn.data(), false);
  kernels::gemm_tn_serial(m, k, n, a.data(), bm.data(), tns.data(), false);
  CHECK(tn == tns);
  for (std::size_t i = 0; i < tn.size(); ++i) CHECK(tn[i] == doctest::Approx(tn_naive[i]).epsilon(1e-5));

  // A B^T with A (m x n), B (k x n).
  const auto bk = random_matrix<T>(k * n, 4);
  std::vector<T> nt(m * k), nts(m * k), nt_naive(m * k, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) nt_naive[i * k + p] += bm[i * n + j] * bk[p * n + j];
  kernels::gemm_nt(m, n, k, bm.data(), bk.data(), nt.data(), false);
  kernels::gemm_nt_serial(m, n, k, bm.data(), bk.data(), nts.data(), false);
  CHECK(nt == nts);
  for (std::size_t i = 0; i < nt.size(); ++i) CHECK(nt[i] == doctest::Approx(nt_naive[i]).epsilon(1e-5));
}
