#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace oracle {

// Upper tail of the chi-square distribution with k degrees of freedom by
// composite Simpson integration of the density over [x, x + width].
inline double chi2_upper_tail(double x, double k = 255.0, double h = 0.01) {
  const double log_norm = -(k / 2.0) * std::log(2.0) - std::lgamma(k / 2.0);
  auto density = [&](double t) {
    if (t <= 0.0) return k == 2.0 ? 0.5 : 0.0;
    return std::exp(log_norm + (k / 2.0 - 1.0) * std::log(t) - t / 2.0);
  };
  const double upper = std::max(x, k) + 40.0 * std::sqrt(2.0 * k) + 200.0;
  const double a = x;
  std::size_t steps = static_cast<std::size_t>(std::ceil((upper - a) / h));
  if (steps % 2) ++steps;
  const double step = (upper - a) / static_cast<double>(steps);
  double sum = density(a) + density(upper);
  for (std::size_t i = 1; i < steps; ++i) sum += density(a + step * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return sum * step / 3.0;
}

// φ(m) of the approximate-entropy test by enumerating every m-bit pattern and
// comparing it against each wrapped window bit by bit.
inline double approx_entropy_phi(std::span<const std::uint8_t> bits, int m) {
  if (m == 0) return 0.0;
  const std::size_t n = bits.size();
  double phi = 0.0;
  for (std::uint32_t pattern = 0; pattern < (1u << m); ++pattern) {
    std::uint64_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool match = true;
      for (int k = 0; k < m && match; ++k) {
        const std::uint8_t want = static_cast<std::uint8_t>((pattern >> (m - 1 - k)) & 1u);
        match = bits[(i + static_cast<std::size_t>(k)) % n] == want;
      }
      count += match;
    }
    if (count == 0) continue;
    const double p = static_cast<double>(count) / static_cast<double>(n);
    phi += p * std::log(p);
  }
  return phi;
}

// Central finite-difference derivative.
template <typename F>
double central_difference(F&& f, double& param, double eps) {
  const double saved = param;
  param = saved + eps;
  const double up = f();
  param = saved - eps;
  const double down = f();
  param = saved;
  return (up - down) / (2.0 * eps);
}

}  // namespace oracle
