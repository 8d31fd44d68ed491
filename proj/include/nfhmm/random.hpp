#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace nfhmm {

using Rng = std::mt19937_64;

// Symmetric Dirichlet draw via normalized Gamma variates.
inline std::vector<double> sample_dirichlet(Rng& rng, std::size_t dim, double concentration = 1.0) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> out(dim);
  double total = 0.0;
  do {
    total = 0.0;
    for (double& v : out) total += (v = gamma(rng));
  } while (!(total > 0.0));
  for (double& v : out) v /= total;
  return out;
}

// Inverse-CDF draw from a (not necessarily normalized) discrete distribution.
inline std::size_t sample_discrete(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::uniform_real_distribution<double> uniform(0.0, total);
  double u = uniform(rng);
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last_positive;
}

}  // namespace nfhmm
