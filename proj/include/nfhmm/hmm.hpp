#pragma once

// Scaled forward-backward over a single discrete Markov chain whose emission
// terms are supplied externally as per-frame log-likelihoods.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nfhmm/error.hpp"
#include "nfhmm/matrix.hpp"

namespace nfhmm {

// Column-stochastic: transition(i, j) = P(next = i | current = j).
struct ChainParams {
  Matrix<double> transition;
  std::vector<double> initial;

  std::size_t states() const noexcept { return initial.size(); }

  static ChainParams uniform(std::size_t n) {
    return {Matrix<double>(n, n, 1.0 / static_cast<double>(n)),
            std::vector<double>(n, 1.0 / static_cast<double>(n))};
  }

  void validate(double tol = 1e-12) const {
    const std::size_t n = initial.size();
    detail::require(n > 0, "chain needs at least one state");
    detail::require(transition.rows() == n && transition.cols() == n,
                    "transition matrix must be N x N with N = initial size");
    double total = 0.0;
    for (double p : initial) {
      detail::require(p >= 0.0, "initial distribution has a negative entry");
      total += p;
    }
    detail::require(std::abs(total - 1.0) <= tol, "initial distribution does not sum to 1");
    for (std::size_t j = 0; j < n; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        detail::require(transition(i, j) >= 0.0, "transition matrix has a negative entry");
        col += transition(i, j);
      }
      detail::require(std::abs(col - 1.0) <= tol,
                      "transition column " + std::to_string(j) + " does not sum to 1");
    }
  }
};

struct ChainPosterior {
  Matrix<double> marginals;           // T x N
  std::vector<Matrix<double>> pairwise;  // T-1 slices; slice t holds P(D_{t+1} = i, D_t = j) at (i, j)
  double log_evidence = 0.0;
};

struct ForwardBackwardOptions {
  // The pairwise slices cost T * N^2 memory; large joint lattices skip them.
  bool pairwise = true;
};

inline ChainPosterior forward_backward(const Matrix<double>& log_lik, const ChainParams& params,
                                       ForwardBackwardOptions options = {}) {
  const std::size_t frames = log_lik.rows();
  const std::size_t n = params.states();
  detail::require(frames >= 1, "forward-backward needs at least one frame");
  params.validate(1e-9);
  detail::require(log_lik.cols() == n, "likelihood columns do not match chain states");

  // Emissions rescaled per frame by the row maximum; the shifts are added
  // back into the evidence.
  Matrix<double> emit(frames, n);
  std::vector<double> shift(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto row = log_lik.row(t);
    double peak = -std::numeric_limits<double>::infinity();
    for (double v : row) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw NumericalError("log-likelihood at frame " + std::to_string(t) +
                             " is NaN or +inf");
      peak = std::max(peak, v);
    }
    if (peak == -std::numeric_limits<double>::infinity())
      throw NumericalError("zero-probability evidence: every state has -inf likelihood at frame " +
                           std::to_string(t));
    shift[t] = peak;
    for (std::size_t i = 0; i < n; ++i) emit(t, i) = std::exp(row[i] - peak);
  }

  Matrix<double> alpha(frames, n);
  std::vector<double> scale(frames);
  auto normalize_frame = [&](std::size_t t) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += alpha(t, i);
    if (!(c > 0.0))
      throw NumericalError("zero-probability evidence: forward message vanished at frame " +
                           std::to_string(t));
    scale[t] = c;
    for (std::size_t i = 0; i < n; ++i) alpha(t, i) /= c;
  };

  for (std::size_t i = 0; i < n; ++i) alpha(0, i) = params.initial[i] * emit(0, i);
  normalize_frame(0);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto to_i = params.transition.row(i);
      const auto prev = alpha.row(t - 1);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += to_i[j] * prev[j];
      alpha(t, i) = s * emit(t, i);
    }
    normalize_frame(t);
  }

  Matrix<double> beta(frames, n, 1.0);
  std::vector<double> weighted(n);
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t i = 0; i < n; ++i) weighted[i] = beta(t + 1, i) * emit(t + 1, i);
    for (std::size_t j = 0; j < n; ++j) beta(t, j) = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto to_i = params.transition.row(i);
      const double w = weighted[i];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) beta(t, j) += to_i[j] * w;
    }
    for (std::size_t j = 0; j < n; ++j) beta(t, j) /= scale[t + 1];
  }

  ChainPosterior post;
  post.marginals = Matrix<double>(frames, n);
  for (std::size_t t = 0; t < frames; ++t) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (post.marginals(t, i) = alpha(t, i) * beta(t, i));
    for (std::size_t i = 0; i < n; ++i) post.marginals(t, i) /= total;
  }

  if (options.pairwise) {
    post.pairwise.reserve(frames > 0 ? frames - 1 : 0);
    for (std::size_t t = 0; t + 1 < frames; ++t) {
      Matrix<double> xi(n, n);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = beta(t + 1, i) * emit(t + 1, i) / scale[t + 1];
        for (std::size_t j = 0; j < n; ++j)
          total += (xi(i, j) = alpha(t, j) * params.transition(i, j) * w);
      }
      for (double& v : xi.storage()) v /= total;
      post.pairwise.push_back(std::move(xi));
    }
  }

  double log_evidence = 0.0;
  for (std::size_t t = 0; t < frames; ++t) log_evidence += std::log(scale[t]) + shift[t];
  post.log_evidence = log_evidence;
  return post;
}

}  // namespace nfhmm
