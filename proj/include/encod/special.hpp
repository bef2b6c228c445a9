#pragma once

namespace encod {

/// Regularized upper incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
/// Series for x < a + 1, modified Lentz continued fraction otherwise;
/// targets 1e-10 absolute accuracy. Requires a > 0, x >= 0.
double igamc(double a, double x);

/// Regularized lower incomplete gamma P(a, x) = 1 - Q(a, x).
double igam(double a, double x);

/// Standard normal CDF.
double normal_cdf(double x);

}  // namespace encod
