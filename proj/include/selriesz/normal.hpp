#pragma once

namespace selriesz {

/// Standard normal density.
double normal_pdf(double x);

/// Standard normal CDF, computed as erfc(-x/sqrt(2))/2. Relative accuracy is
/// that of std::erfc (a few ulp) across the whole real line, including the
/// lower tail where 1 - Phi(-x) would cancel.
double normal_cdf(double x);

/// Inverse standard normal CDF (Wichura 1988, algorithm AS 241 / PPND16).
/// Piecewise rational minimax approximations: |p - 0.5| <= 0.425 uses a
/// degree-7 rational in (p - 0.5)^2; otherwise r = sqrt(-log(min(p, 1-p)))
/// selects a degree-7 rational in r - 1.6 (r <= 5) or r - 5 (tail).
/// Stated relative accuracy about 1e-16. Returns -inf/+inf at p = 0/1 and
/// throws DomainError outside [0, 1].
double normal_quantile(double p);

/// Two-sided normal critical value for a confidence level in (0, 1).
double normal_critical(double level);

}  // namespace selriesz
