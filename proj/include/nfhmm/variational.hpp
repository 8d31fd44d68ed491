#pragma once

// Structured mean-field inference in the Bayesian non-negative factorial HMM.
//
// The posterior is approximated by independent Dirichlet factors q(theta_t)
// over all global elements, discrete responsibilities for every quantum, and
// one full Markov-chain factor per source. Each sweep refreshes
//
//   z_hat[t,l,k]  ~ beta_l(k) * exp(psi(alpha_hat[t,k]) - psi(sum_k alpha_hat[t,k]))
//   alpha_hat[t,k] = sum_l V[l,t] z_hat[t,l,k] + gamma * d_hat^(s)[t,n(k)] + 1
//   phi_hat^(s)[t,n] = sum_{k in block(s,n)} psi(alpha_hat[t,k]) - psi(sum_k alpha_hat[t,k])
//
// and then runs forward-backward on every source chain with phi_hat as the
// per-frame log-likelihood, giving the state marginals d_hat.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nfhmm/binary_io.hpp"
#include "nfhmm/error.hpp"
#include "nfhmm/hmm.hpp"
#include "nfhmm/matrix.hpp"
#include "nfhmm/mixture.hpp"
#include "nfhmm/random.hpp"
#include "nfhmm/signal_io.hpp"
#include "nfhmm/special.hpp"

namespace nfhmm {

struct VariationalConfig {
  std::size_t max_iters = 50;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;
  // Relative amplitude of random perturbation of the initial state
  // marginals; 0 keeps the deterministic uniform start and ignores the seed.
  double init_jitter = 0.0;
  // Store the full T x L x K responsibility array instead of folding it into
  // the alpha update. Only sensible for small problems.
  bool keep_responsibilities = false;
};

struct VariationalState {
  Matrix<double> alpha_hat;                // T x K_total
  std::vector<double> z_hat;               // T x L x K_total, empty unless kept
  std::vector<Matrix<double>> d_hat;       // per source, T x N_s
  std::vector<Matrix<double>> phi_hat;     // per source, T x N_s (natural log domain)
  std::vector<double> monitor;             // reconstruction cross-entropy per iteration
  std::vector<double> iteration_seconds;
  std::size_t iterations = 0;
  bool converged = false;

  std::size_t frames() const noexcept { return alpha_hat.rows(); }
  std::size_t elements() const noexcept { return alpha_hat.cols(); }

  double z(std::size_t t, std::size_t l, std::size_t k, std::size_t bins) const {
    return z_hat[(t * bins + l) * elements() + k];
  }
};

namespace detail {

inline void check_mixture_data(const MixtureModel& mixture, const CountSpectrogram& data) {
  data.validate();
  require(mixture.elements() >= 1, "mixture has no dictionary elements");
  require(data.frequencies() == mixture.bins(),
          "spectrogram has " + std::to_string(data.frequencies()) + " bins, mixture expects " +
              std::to_string(mixture.bins()));
}

inline void check_state(const VariationalState& state, const MixtureModel& mixture,
                        std::size_t frames) {
  require(state.alpha_hat.rows() == frames && state.alpha_hat.cols() == mixture.elements(),
          "alpha_hat shape does not match data and mixture");
  require(state.d_hat.size() == mixture.source_count(), "d_hat has the wrong number of sources");
  for (std::size_t s = 0; s < mixture.source_count(); ++s)
    require(state.d_hat[s].rows() == frames && state.d_hat[s].cols() == mixture.states(s),
            "d_hat shape does not match source " + std::to_string(s));
}

// psi(alpha_hat[t,k]) for every frame and element, plus psi of each row sum.
struct DigammaTable {
  Matrix<double> psi;
  std::vector<double> psi_total;
};

inline DigammaTable digamma_table(const Matrix<double>& alpha_hat) {
  DigammaTable table{Matrix<double>(alpha_hat.rows(), alpha_hat.cols()),
                     std::vector<double>(alpha_hat.rows())};
  for (std::size_t t = 0; t < alpha_hat.rows(); ++t) {
    double total = 0.0;
    const auto a = alpha_hat.row(t);
    auto p = table.psi.row(t);
    for (std::size_t k = 0; k < a.size(); ++k) {
      total += a[k];
      p[k] = digamma(a[k]);
    }
    table.psi_total[t] = digamma(total);
  }
  return table;
}

// gamma * sum_s sum_n d_hat^(s)[t,n] B_snk added to every element of frame t.
inline void add_state_prior(const VariationalState& state, const MixtureModel& mixture,
                            std::size_t t, std::span<double> alpha_row) {
  const double g = mixture.gamma();
  for (std::size_t s = 0; s < mixture.source_count(); ++s)
    for (std::size_t n = 0; n < mixture.states(s); ++n) {
      const double w = g * state.d_hat[s](t, n);
      const auto b = mixture.block(s, n);
      for (std::size_t k = b.begin; k < b.end; ++k) alpha_row[k] += w;
    }
}

inline Matrix<double> surrogate_from_table(const DigammaTable& table, const MixtureModel& mixture,
                                           std::size_t s) {
  const std::size_t frames = table.psi.rows();
  Matrix<double> phi(frames, mixture.states(s), 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto p = table.psi.row(t);
    for (std::size_t n = 0; n < mixture.states(s); ++n) {
      const auto b = mixture.block(s, n);
      double acc = 0.0;
      for (std::size_t k = b.begin; k < b.end; ++k) acc += p[k] - table.psi_total[t];
      phi(t, n) = acc;
    }
  }
  return phi;
}

[[noreturn]] inline void throw_zero_support(std::size_t l, std::size_t t) {
  throw NumericalError("zero support: no dictionary element covers bin " + std::to_string(l) +
                       " which has positive count at frame " + std::to_string(t));
}

}  // namespace detail

// Uniform state marginals, alpha_hat at the prior mean implied by them, and
// no data term yet.
inline VariationalState initial_state(const MixtureModel& mixture, const CountSpectrogram& data,
                                      const VariationalConfig& config = {}) {
  detail::check_mixture_data(mixture, data);
  const std::size_t frames = data.frames();
  VariationalState state;
  Rng rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < mixture.source_count(); ++s) {
    const std::size_t n = mixture.states(s);
    Matrix<double> d(frames, n, 1.0 / static_cast<double>(n));
    if (config.init_jitter > 0.0) {
      for (std::size_t t = 0; t < frames; ++t) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += (d(t, i) = 1.0 + config.init_jitter * unit(rng));
        for (std::size_t i = 0; i < n; ++i) d(t, i) /= total;
      }
    }
    state.d_hat.push_back(std::move(d));
    state.phi_hat.emplace_back(frames, n, 0.0);
  }
  state.alpha_hat = Matrix<double>(frames, mixture.elements(), 1.0);
  for (std::size_t t = 0; t < frames; ++t)
    detail::add_state_prior(state, mixture, t, state.alpha_hat.row(t));
  return state;
}

// Responsibilities z_hat (T x L x K_total, row-major in that order).
inline std::vector<double> update_z(const VariationalState& state, const MixtureModel& mixture,
                                    const CountSpectrogram& data) {
  detail::check_mixture_data(mixture, data);
  const std::size_t frames = data.frames(), bins = mixture.bins(), kt = mixture.elements();
  detail::require(state.alpha_hat.rows() == frames && state.alpha_hat.cols() == kt,
                  "alpha_hat shape does not match data and mixture");
  const auto table = detail::digamma_table(state.alpha_hat);
  const auto& beta = mixture.beta_all();
  std::vector<double> z(frames * bins * kt);
  std::vector<double> logz(kt);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto psi = table.psi.row(t);
    for (std::size_t l = 0; l < bins; ++l) {
      const auto b = beta.row(l);
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kt; ++k) {
        logz[k] = b[k] > 0.0 ? std::log(b[k]) + psi[k] - table.psi_total[t]
                             : -std::numeric_limits<double>::infinity();
        peak = std::max(peak, logz[k]);
      }
      double* out = &z[(t * bins + l) * kt];
      if (peak == -std::numeric_limits<double>::infinity()) {
        if (data.values(l, t) > 0.0) detail::throw_zero_support(l, t);
        for (std::size_t k = 0; k < kt; ++k) out[k] = 1.0 / static_cast<double>(kt);
        continue;
      }
      double total = 0.0;
      for (std::size_t k = 0; k < kt; ++k) total += (out[k] = std::exp(logz[k] - peak));
      for (std::size_t k = 0; k < kt; ++k) out[k] /= total;
    }
  }
  return z;
}

// alpha_hat from stored responsibilities and the current state marginals.
inline Matrix<double> update_alpha(const VariationalState& state, const CountSpectrogram& data,
                                   const MixtureModel& mixture) {
  detail::check_mixture_data(mixture, data);
  const std::size_t frames = data.frames(), bins = mixture.bins(), kt = mixture.elements();
  detail::check_state(state, mixture, frames);
  detail::require(state.z_hat.size() == frames * bins * kt,
                  "z_hat has not been materialized for this data");
  Matrix<double> alpha(frames, kt, 1.0);
  for (std::size_t t = 0; t < frames; ++t) {
    auto a = alpha.row(t);
    for (std::size_t l = 0; l < bins; ++l) {
      const double v = data.values(l, t);
      if (v == 0.0) continue;
      const double* z = &state.z_hat[(t * bins + l) * kt];
      for (std::size_t k = 0; k < kt; ++k) a[k] += v * z[k];
    }
    detail::add_state_prior(state, mixture, t, a);
  }
  return alpha;
}

// update_z followed by update_alpha without storing z_hat: the data term
// sum_l V z_hat[t,l,k] equals w_k sum_l beta_l(k) V[l,t] / sum_k' beta_l(k') w_k'
// with w_k = exp(psi(alpha_hat[t,k]) - max_k psi(alpha_hat[t,k])).
inline Matrix<double> update_alpha_fused(const VariationalState& state,
                                         const CountSpectrogram& data,
                                         const MixtureModel& mixture) {
  detail::check_mixture_data(mixture, data);
  const std::size_t frames = data.frames(), bins = mixture.bins(), kt = mixture.elements();
  detail::check_state(state, mixture, frames);
  const auto& beta = mixture.beta_all();
  Matrix<double> alpha(frames, kt, 1.0);
  std::vector<double> w(kt), acc(kt);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto a_old = state.alpha_hat.row(t);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kt; ++k) peak = std::max(peak, w[k] = digamma(a_old[k]));
    for (std::size_t k = 0; k < kt; ++k) w[k] = std::exp(w[k] - peak);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t l = 0; l < bins; ++l) {
      const double v = data.values(l, t);
      if (v == 0.0) continue;
      const double* b = beta.row(l).data();
      double p = 0.0;
      for (std::size_t k = 0; k < kt; ++k) p += b[k] * w[k];
      if (!(p > 0.0)) detail::throw_zero_support(l, t);
      const double r = v / p;
      for (std::size_t k = 0; k < kt; ++k) acc[k] += b[k] * r;
    }
    auto a = alpha.row(t);
    for (std::size_t k = 0; k < kt; ++k) a[k] += w[k] * acc[k];
    detail::add_state_prior(state, mixture, t, a);
  }
  return alpha;
}

inline Matrix<double> surrogate_likelihood(const VariationalState& state,
                                           const MixtureModel& mixture, std::size_t source) {
  detail::require(source < mixture.source_count(), "source index out of range");
  detail::require(state.alpha_hat.cols() == mixture.elements(),
                  "alpha_hat does not match the mixture");
  return detail::surrogate_from_table(detail::digamma_table(state.alpha_hat), mixture, source);
}

// E_q[theta_t] = alpha_hat[t] / sum_k alpha_hat[t,k].
inline Matrix<double> posterior_mean_weights(const Matrix<double>& alpha_hat) {
  Matrix<double> w = alpha_hat;
  for (std::size_t t = 0; t < w.rows(); ++t) {
    auto row = w.row(t);
    double total = 0.0;
    for (double v : row) total += v;
    for (double& v : row) v /= total;
  }
  return w;
}

// Cross-entropy between the observed frame histograms and the model
// reconstruction with posterior-mean weights, normalized by total count.
inline double reconstruction_cross_entropy(const Matrix<double>& alpha_hat,
                                           const MixtureModel& mixture,
                                           const CountSpectrogram& data) {
  detail::check_mixture_data(mixture, data);
  detail::require(alpha_hat.rows() == data.frames() && alpha_hat.cols() == mixture.elements(),
                  "alpha_hat shape does not match data and mixture");
  const auto weights = posterior_mean_weights(alpha_hat);
  const auto& beta = mixture.beta_all();
  const std::size_t kt = mixture.elements();
  double loss = 0.0, total = 0.0;
  for (std::size_t l = 0; l < mixture.bins(); ++l) {
    const double* b = beta.row(l).data();
    for (std::size_t t = 0; t < data.frames(); ++t) {
      const double v = data.values(l, t);
      if (v == 0.0) continue;
      const double* w = weights.row(t).data();
      double p = 0.0;
      for (std::size_t k = 0; k < kt; ++k) p += w[k] * b[k];
      if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
      loss -= v * std::log(p);
      total += v;
    }
  }
  detail::require(total > 0.0, "empty spectrogram (all counts are zero)");
  return loss / total;
}

inline double reconstruction_cross_entropy(const VariationalState& state,
                                           const MixtureModel& mixture,
                                           const CountSpectrogram& data) {
  return reconstruction_cross_entropy(state.alpha_hat, mixture, data);
}

inline VariationalState vi_infer(const MixtureModel& mixture, const CountSpectrogram& data,
                                 const VariationalConfig& config = {}) {
  detail::require(config.max_iters >= 1, "max_iters must be at least 1");
  VariationalState state = initial_state(mixture, data, config);
  using clock = std::chrono::steady_clock;
  for (std::size_t it = 0; it < config.max_iters; ++it) {
    const auto start = clock::now();
    if (config.keep_responsibilities) {
      state.z_hat = update_z(state, mixture, data);
      state.alpha_hat = update_alpha(state, data, mixture);
    } else {
      state.alpha_hat = update_alpha_fused(state, data, mixture);
    }
    const auto table = detail::digamma_table(state.alpha_hat);
    for (std::size_t s = 0; s < mixture.source_count(); ++s) {
      state.phi_hat[s] = detail::surrogate_from_table(table, mixture, s);
      state.d_hat[s] =
          forward_backward(state.phi_hat[s], mixture.source(s).chain, {.pairwise = false})
              .marginals;
    }
    const double h = reconstruction_cross_entropy(state.alpha_hat, mixture, data);
    if (!std::isfinite(h))
      throw NumericalError("reconstruction cross-entropy became non-finite at iteration " +
                           std::to_string(it + 1));
    state.monitor.push_back(h);
    state.iteration_seconds.push_back(std::chrono::duration<double>(clock::now() - start).count());
    state.iterations = it + 1;
    if (state.monitor.size() >= 2) {
      const double prev = state.monitor[state.monitor.size() - 2];
      if (std::abs(h - prev) < config.rel_tol * std::max(std::abs(prev), 1e-300)) {
        state.converged = true;
        break;
      }
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Posterior dump: magic, version, T, K_total, S, N_1..N_S as 64-bit integers,
// then alpha_hat (T x K row-major) and each d_hat^(s) (T x N_s row-major).

inline constexpr auto kPosteriorMagic = binary::make_magic("NFHMMPST");

inline void save_posterior(const std::string& path, const VariationalState& state) {
  binary::Writer w(path, kPosteriorMagic);
  w.put_u64(1);
  w.put_u64(state.alpha_hat.rows());
  w.put_u64(state.alpha_hat.cols());
  w.put_u64(state.d_hat.size());
  for (const auto& d : state.d_hat) w.put_u64(d.cols());
  w.put_f64s(state.alpha_hat.storage());
  for (const auto& d : state.d_hat) w.put_f64s(d.storage());
  w.finish();
}

struct StoredPosterior {
  Matrix<double> alpha_hat;
  std::vector<Matrix<double>> d_hat;
};

inline StoredPosterior load_posterior(const std::string& path) {
  binary::Reader r(path, kPosteriorMagic);
  if (r.get_u64() != 1) throw IoError("'" + path + "': unsupported posterior version");
  const auto frames = r.get_u64();
  const auto kt = r.get_u64();
  const auto sources = r.get_u64();
  if (sources > 1024) throw IoError("'" + path + "': corrupt source count");
  std::vector<std::size_t> states(sources);
  for (auto& n : states) n = r.get_u64();
  StoredPosterior out;
  out.alpha_hat = Matrix<double>(frames, kt);
  out.alpha_hat.storage() = r.get_f64s(frames * kt);
  for (auto n : states) {
    Matrix<double> d(frames, n);
    d.storage() = r.get_f64s(frames * n);
    out.d_hat.push_back(std::move(d));
  }
  r.expect_end();
  return out;
}

}  // namespace nfhmm
