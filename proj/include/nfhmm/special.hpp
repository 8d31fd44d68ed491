#pragma once

#include <cmath>
#include <string>

#include "nfhmm/error.hpp"

namespace nfhmm {

// Digamma function psi(x) for x > 0. The recurrence psi(x) = psi(x+1) - 1/x
// lifts the argument to >= 10, where the asymptotic series truncated after
// the x^-14 term is accurate to well below 1e-12.
inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x))
    throw ValidationError("digamma requires a finite positive argument, got " + std::to_string(x));
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  const double series =
      f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f * (1.0 / 132 - f * (691.0 / 32760))))));
  return result + std::log(x) - 0.5 / x - series;
}

}  // namespace nfhmm
