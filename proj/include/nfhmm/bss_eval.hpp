#pragma once

// SDR / SIR / SAR from zero-lag orthogonal projections of an estimate onto
// the reference signals. This is the time-invariant-gain variant of the
// BSS-EVAL decomposition: no distortion filters are allowed, so absolute
// values are lower than filter-based scores on real recordings.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nfhmm/error.hpp"
#include "nfhmm/matrix.hpp"
#include "nfhmm/signal_io.hpp"

namespace nfhmm {

inline constexpr double kScoreCapDb = 100.0;

struct SepScores {
  double sdr = 0.0;
  double sir = 0.0;
  double sar = 0.0;
};

struct Decomposition {
  std::vector<double> target;        // s_target
  std::vector<double> interference;  // e_interf
  std::vector<double> artifacts;     // e_artif
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Solves G x = b for a symmetric positive-definite Gram matrix (Cholesky).
inline std::vector<double> solve_gram(Matrix<double> g, std::vector<double> b) {
  const std::size_t n = b.size();
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, g(i, i));
  for (std::size_t j = 0; j < n; ++j) {
    double d = g(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= g(j, k) * g(j, k);
    if (!(d > 1e-12 * scale)) throw ValidationError("reference signals are linearly dependent");
    g(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = g(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= g(i, k) * g(j, k);
      g(i, j) = v / g(j, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= g(i, k) * b[k];
    b[i] /= g(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= g(k, i) * b[k];
    b[i] /= g(i, i);
  }
  return b;
}

inline double ratio_db(double num, double den) {
  if (!(den > 0.0)) return num > 0.0 ? kScoreCapDb : -kScoreCapDb;
  if (!(num > 0.0)) return -kScoreCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kScoreCapDb, kScoreCapDb);
}

inline double energy(std::span<const double> x) { return dot(x, x); }

}  // namespace detail

inline Decomposition bss_decompose(std::span<const double> estimate,
                                   const std::vector<std::span<const double>>& references,
                                   std::size_t target_index) {
  detail::require(!references.empty(), "need at least one reference");
  detail::require(target_index < references.size(), "target index out of range");
  for (const auto& r : references)
    detail::require(r.size() == estimate.size(), "estimate and reference lengths differ");
  const auto& target = references[target_index];
  const double target_energy = detail::energy(target);
  if (!(target_energy > 0.0)) throw ValidationError("target reference is all zeros");

  const std::size_t n = estimate.size(), count = references.size();
  Decomposition out;
  out.target.resize(n);
  const double gain = detail::dot(estimate, target) / target_energy;
  for (std::size_t i = 0; i < n; ++i) out.target[i] = gain * target[i];

  Matrix<double> gram(count, count);
  std::vector<double> rhs(count);
  for (std::size_t a = 0; a < count; ++a) {
    rhs[a] = detail::dot(references[a], estimate);
    for (std::size_t b = 0; b <= a; ++b)
      gram(a, b) = gram(b, a) = detail::dot(references[a], references[b]);
  }
  const auto coeffs = detail::solve_gram(gram, rhs);
  std::vector<double> projection(n, 0.0);
  for (std::size_t a = 0; a < count; ++a)
    for (std::size_t i = 0; i < n; ++i) projection[i] += coeffs[a] * references[a][i];

  out.interference.resize(n);
  out.artifacts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.interference[i] = projection[i] - out.target[i];
    out.artifacts[i] = estimate[i] - projection[i];
  }
  return out;
}

inline SepScores bss_eval(std::span<const double> estimate,
                          const std::vector<std::span<const double>>& references,
                          std::size_t target_index) {
  const auto d = bss_decompose(estimate, references, target_index);
  const std::size_t n = estimate.size();
  std::vector<double> distortion(n), target_plus_interf(n);
  for (std::size_t i = 0; i < n; ++i) {
    distortion[i] = d.interference[i] + d.artifacts[i];
    target_plus_interf[i] = d.target[i] + d.interference[i];
  }
  const double target_energy = detail::energy(d.target);
  return {detail::ratio_db(target_energy, detail::energy(distortion)),
          detail::ratio_db(target_energy, detail::energy(d.interference)),
          detail::ratio_db(detail::energy(target_plus_interf), detail::energy(d.artifacts))};
}

inline SepScores bss_eval(const TimeSignal& estimate, const std::vector<TimeSignal>& references,
                          std::size_t target_index) {
  std::vector<std::span<const double>> refs;
  for (const auto& r : references) refs.emplace_back(r.samples);
  return bss_eval(std::span<const double>(estimate.samples), refs, target_index);
}

struct AssignedScores {
  std::vector<std::size_t> assignment;  // assignment[i] = reference matched to estimate i
  std::vector<SepScores> scores;        // per estimate, against its assigned reference
};

// Scores every estimate against every reference and keeps the one-to-one
// assignment with the highest mean SDR.
inline AssignedScores bss_eval_best_permutation(const std::vector<TimeSignal>& estimates,
                                                const std::vector<TimeSignal>& references) {
  detail::require(estimates.size() == references.size() && !estimates.empty(),
                  "need as many estimates as references");
  detail::require(estimates.size() <= 8, "permutation search supports up to 8 sources");
  const std::size_t n = estimates.size();
  for (const auto& e : estimates)
    if (e.size() != references.front().size())
      throw ValidationError("estimate length " + std::to_string(e.size()) +
                            " differs from reference length " +
                            std::to_string(references.front().size()));
  std::vector<std::vector<SepScores>> table(n, std::vector<SepScores>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < n; ++r) table[i][r] = bss_eval(estimates[i], references, r);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  AssignedScores best;
  double best_sdr = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += table[i][perm[i]].sdr;
    if (total > best_sdr) {
      best_sdr = total;
      best.assignment = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (std::size_t i = 0; i < n; ++i) best.scores.push_back(table[i][best.assignment[i]]);
  return best;
}

}  // namespace nfhmm
