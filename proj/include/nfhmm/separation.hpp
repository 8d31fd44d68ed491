#pragma once

// Per-source spectrogram reconstruction from mixing weights, ratio masking
// of the mixture, and resynthesis with the mixture phase.

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "nfhmm/error.hpp"
#include "nfhmm/matrix.hpp"
#include "nfhmm/mixture.hpp"
#include "nfhmm/signal_io.hpp"

namespace nfhmm {

struct SeparationResult {
  std::vector<Matrix<double>> raw_estimates;  // V_hat^(s), L x T
  std::vector<Matrix<double>> masked;         // V*^(s), L x T
  std::vector<TimeSignal> signals;
};

// V_hat[l,t] = v_t * sum_{k in source s} w[t,k] beta_l(k). weights is T x K_total.
inline Matrix<double> reconstruct(const MixtureModel& mixture, const Matrix<double>& weights,
                                  std::span<const double> frame_totals, std::size_t source) {
  if (source >= mixture.source_count())
    throw ValidationError("unknown source index " + std::to_string(source));
  detail::require(weights.cols() == mixture.elements(), "weights do not match the mixture");
  detail::require(weights.rows() == frame_totals.size(), "weights and frame totals disagree on T");
  const auto blk = mixture.source_block(source);
  const auto& beta = mixture.beta_all();
  Matrix<double> out(mixture.bins(), weights.rows(), 0.0);
  for (std::size_t l = 0; l < mixture.bins(); ++l) {
    const auto b = beta.row(l);
    for (std::size_t t = 0; t < weights.rows(); ++t) {
      const auto w = weights.row(t);
      double acc = 0.0;
      for (std::size_t k = blk.begin; k < blk.end; ++k) acc += w[k] * b[k];
      out(l, t) = frame_totals[t] * acc;
    }
  }
  return out;
}

// V*^(s) = V * V_hat^(s) / sum_s' V_hat^(s'). Cells where every estimate is
// zero give each source an equal share.
inline std::vector<Matrix<double>> wiener_mask(const Matrix<double>& mixture_mag,
                                               const std::vector<Matrix<double>>& estimates) {
  detail::require(!estimates.empty(), "need at least one estimate");
  for (const auto& e : estimates)
    detail::require(e.rows() == mixture_mag.rows() && e.cols() == mixture_mag.cols(),
                    "estimate shape does not match the mixture spectrogram");
  const std::size_t sources = estimates.size();
  std::vector<Matrix<double>> out(sources, Matrix<double>(mixture_mag.rows(), mixture_mag.cols()));
  for (std::size_t i = 0; i < mixture_mag.size(); ++i) {
    double denom = 0.0;
    for (const auto& e : estimates) {
      detail::require(e.data()[i] >= 0.0, "estimates must be non-negative");
      denom += e.data()[i];
    }
    const double v = mixture_mag.data()[i];
    for (std::size_t s = 0; s < sources; ++s)
      out[s].data()[i] = denom > 0.0 ? v * (estimates[s].data()[i] / denom)
                                     : v / static_cast<double>(sources);
  }
  return out;
}

inline TimeSignal resynthesize(const Matrix<double>& masked, const ComplexSpectrogram& mixture_spec) {
  detail::require(masked.rows() == mixture_spec.frequencies() &&
                      masked.cols() == mixture_spec.frames(),
                  "masked spectrogram shape does not match the mixture");
  ComplexSpectrogram spec = mixture_spec;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    const double phase = std::arg(mixture_spec.bins.data()[i]);
    spec.bins.data()[i] = std::polar(masked.data()[i], phase);
  }
  return istft(spec);
}

// Largest |sum_s V*^(s) - V| over all cells.
inline double masking_residual(const Matrix<double>& mixture_mag,
                               const std::vector<Matrix<double>>& masked) {
  double worst = 0.0;
  for (std::size_t i = 0; i < mixture_mag.size(); ++i) {
    double total = 0.0;
    for (const auto& m : masked) total += m.data()[i];
    worst = std::max(worst, std::abs(total - mixture_mag.data()[i]));
  }
  return worst;
}

// Full separation from per-frame element weights: reconstruct every source,
// mask the mixture magnitude, verify conservation, resynthesize.
inline SeparationResult separate_with_weights(const MixtureModel& mixture,
                                              const Matrix<double>& weights,
                                              const CountSpectrogram& counts,
                                              const ComplexSpectrogram& mixture_spec,
                                              double conservation_tol = 1e-9) {
  SeparationResult result;
  for (std::size_t s = 0; s < mixture.source_count(); ++s)
    result.raw_estimates.push_back(reconstruct(mixture, weights, counts.frame_totals, s));
  const Matrix<double> magnitude = mixture_spec.magnitude();
  result.masked = wiener_mask(magnitude, result.raw_estimates);
  const double residual = masking_residual(magnitude, result.masked);
  if (!(residual <= conservation_tol))
    throw NumericalError("masking conservation violated by " + std::to_string(residual));
  for (const auto& m : result.masked) result.signals.push_back(resynthesize(m, mixture_spec));
  return result;
}

}  // namespace nfhmm
