#pragma once

// PLCA baseline: per-frame EM for mixture weights over a fixed dictionary,
// no temporal model. Frames are solved independently, each with its own
// stopping rule.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nfhmm/error.hpp"
#include "nfhmm/matrix.hpp"
#include "nfhmm/signal_io.hpp"

namespace nfhmm {

struct PlcaConfig {
  std::size_t max_iters = 200;
  double rel_tol = 1e-6;
};

struct PlcaWeights {
  Matrix<double> weights;                 // T x K
  std::vector<std::size_t> iterations;    // per frame
  std::vector<double> frame_log_likelihood;  // final, per frame
};

// dictionary: L x K, each column a distribution over frequency.
inline PlcaWeights plca_separate(const Matrix<double>& dictionary, const CountSpectrogram& data,
                                 const PlcaConfig& config = {}) {
  data.validate();
  detail::require(config.max_iters >= 1, "max_iters must be at least 1");
  detail::require(dictionary.rows() == data.frequencies(),
                  "dictionary bins do not match the spectrogram");
  const std::size_t bins = dictionary.rows(), kt = dictionary.cols(), frames = data.frames();
  detail::require(kt >= 1, "dictionary has no elements");
  for (std::size_t k = 0; k < kt; ++k) {
    double total = 0.0;
    for (std::size_t l = 0; l < bins; ++l) total += dictionary(l, k);
    detail::require(std::abs(total - 1.0) <= 1e-9, "dictionary column " + std::to_string(k) +
                                                        " is not normalized");
  }

  PlcaWeights out{Matrix<double>(frames, kt, 1.0 / static_cast<double>(kt)),
                  std::vector<std::size_t>(frames, 0), std::vector<double>(frames, 0.0)};
  std::vector<double> acc(kt);
  for (std::size_t t = 0; t < frames; ++t) {
    auto w = out.weights.row(t);
    for (std::size_t l = 0; l < bins; ++l) {
      if (data.values(l, t) <= 0.0) continue;
      double support = 0.0;
      for (std::size_t k = 0; k < kt; ++k) support += dictionary(l, k);
      if (!(support > 0.0))
        throw NumericalError("zero support: no dictionary element covers bin " +
                             std::to_string(l) + " at frame " + std::to_string(t));
    }
    if (!(data.frame_totals[t] > 0.0)) continue;

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < config.max_iters; ++it) {
      std::fill(acc.begin(), acc.end(), 0.0);
      double ll = 0.0;
      for (std::size_t l = 0; l < bins; ++l) {
        const double v = data.values(l, t);
        if (v == 0.0) continue;
        const auto b = dictionary.row(l);
        double p = 0.0;
        for (std::size_t k = 0; k < kt; ++k) p += w[k] * b[k];
        ll += v * std::log(p);
        const double r = v / p;
        for (std::size_t k = 0; k < kt; ++k) acc[k] += r * b[k];
      }
      double total = 0.0;
      for (std::size_t k = 0; k < kt; ++k) total += (acc[k] *= w[k]);
      for (std::size_t k = 0; k < kt; ++k) w[k] = acc[k] / total;
      out.iterations[t] = it + 1;
      out.frame_log_likelihood[t] = ll;
      if (std::abs(ll - prev_ll) < config.rel_tol * std::abs(ll)) break;
      prev_ll = ll;
    }
  }
  return out;
}

}  // namespace nfhmm
