#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mkwm/types.hpp"

namespace mkwm {

// Standard normal density.
template <typename Scalar>
Scalar normal_pdf(Scalar x) {
  using std::exp;
  const Scalar inv_sqrt_2pi = Scalar(0.5) * std::numbers::inv_sqrtpi_v<Scalar> *
                              std::numbers::sqrt2_v<Scalar>;
  return inv_sqrt_2pi * exp(Scalar(-0.5) * x * x);
}

// Standard normal CDF, Phi(x) = erfc(-x / sqrt 2) / 2. Using erfc rather than
// 1 + erf keeps full relative precision in the lower tail.
template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  using std::erfc;
  return Scalar(0.5) * erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

// Upper tail 1 - Phi(x) without cancellation.
template <typename Scalar>
Scalar normal_sf(Scalar x) {
  return normal_cdf(-x);
}

// Rational approximation of the inverse normal CDF (P. J. Acklam), relative
// error below 1.15e-9 on (0, 1) in double precision. No domain check; callers guarantee 0 < p < 1.
template <typename Scalar>
Scalar normal_quantile_approx(Scalar p) {
  using std::log;
  using std::sqrt;
  constexpr Scalar a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                          -2.759285104469687e+02, 1.383577518672690e+02,
                          -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr Scalar b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                          -1.556989798598866e+02, 6.680131188771972e+01,
                          -1.328068155288572e+01};
  constexpr Scalar c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                          -2.400758277161838e+00, -2.549732539343734e+00,
                          4.374664141464968e+00,  2.938163982698783e+00};
  constexpr Scalar d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                          2.445134137142996e+00, 3.754408661907416e+00};
  constexpr Scalar p_low = 0.02425;

  if (p < p_low) {
    const Scalar q = sqrt(Scalar(-2) * log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > 1 - p_low) {
    const Scalar q = sqrt(Scalar(-2) * log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const Scalar q = p - Scalar(0.5);
  const Scalar r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

// Inverse of normal_cdf: bisection on the lower tail down to a 1e-14 bracket
// (or 64 ulps, whichever is wider), then one Newton step. Upper-tail inputs use the reflection
// Phi^-1(p) = -Phi^-1(1 - p), which is exact in floating point for p >= 1/2.
template <typename Scalar>
Scalar normal_quantile(Scalar p) {
  if (!(p > Scalar(0) && p < Scalar(1))) {
    throw InputError("normal_quantile: p must lie in the open interval (0, 1)");
  }
  if (p > Scalar(0.5)) return -normal_quantile(Scalar(1) - p);
  if (p == Scalar(0.5)) return Scalar(0);

  Scalar lo = -40;
  Scalar hi = 0;
  const Scalar tol = std::max(Scalar(1e-14), 64 * std::numeric_limits<Scalar>::epsilon());
  while (hi - lo > tol) {
    const Scalar mid = Scalar(0.5) * (lo + hi);
    if (normal_cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  Scalar x = Scalar(0.5) * (lo + hi);
  const Scalar density = normal_pdf(x);
  if (density > Scalar(0)) x -= (normal_cdf(x) - p) / density;
  return x;
}

}  // namespace mkwm
