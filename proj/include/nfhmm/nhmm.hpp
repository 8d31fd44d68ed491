#pragma once

// Single-source non-negative hidden Markov model: N dictionaries of K
// spectral elements each, with a Markov chain selecting the active
// dictionary per frame. Maximum-likelihood EM training, generative sampling,
// and model files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nfhmm/binary_io.hpp"
#include "nfhmm/error.hpp"
#include "nfhmm/hmm.hpp"
#include "nfhmm/matrix.hpp"
#include "nfhmm/random.hpp"
#include "nfhmm/signal_io.hpp"

namespace nfhmm {

struct ModelDims {
  std::size_t states = 1;    // N dictionaries
  std::size_t elements = 1;  // K elements per dictionary
  std::size_t bins = 1;      // L frequencies

  std::size_t columns() const noexcept { return states * elements; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct SourceModel {
  ModelDims dims;
  // L x (N*K); column d*K + z is element z of dictionary d, a distribution
  // over frequency.
  Matrix<double> dictionaries;
  ChainParams chain;

  double at(std::size_t d, std::size_t z, std::size_t l) const {
    return dictionaries(l, d * dims.elements + z);
  }
  std::vector<double> element(std::size_t d, std::size_t z) const {
    return dictionaries.column(d * dims.elements + z);
  }

  void validate(double tol = 1e-12) const {
    detail::require(dims.states >= 1 && dims.elements >= 1 && dims.bins >= 1,
                    "model dimensions must be positive");
    detail::require(dictionaries.rows() == dims.bins && dictionaries.cols() == dims.columns(),
                    "dictionary shape does not match model dimensions");
    detail::require(chain.states() == dims.states, "chain size does not match dictionary count");
    for (std::size_t c = 0; c < dims.columns(); ++c) {
      double total = 0.0;
      for (std::size_t l = 0; l < dims.bins; ++l) {
        const double v = dictionaries(l, c);
        detail::require(v >= 0.0 && std::isfinite(v), "dictionary entries must be non-negative");
        total += v;
      }
      detail::require(std::abs(total - 1.0) <= tol,
                      "dictionary element " + std::to_string(c) + " does not sum to 1");
    }
    chain.validate(tol);
  }

  friend bool operator==(const SourceModel& a, const SourceModel& b) {
    return a.dims == b.dims && a.dictionaries == b.dictionaries &&
           a.chain.transition == b.chain.transition && a.chain.initial == b.chain.initial;
  }
};

struct TrainState {
  Matrix<double> weights;               // T x (N*K); theta_t(d) in columns d*K .. d*K+K-1
  std::vector<double> log_likelihood;   // [0] for the initial parameters, then one per EM step
  ChainPosterior posterior;             // state posterior under the current parameters
};

struct TrainConfig {
  std::size_t max_iters = 100;
  double rel_tol = 1e-5;
  std::uint64_t seed = 0;
};

struct TrainResult {
  SourceModel model;
  std::size_t iterations = 0;
  std::vector<double> log_likelihood;
  ChainPosterior posterior;  // state posterior on the training data, final parameters
};

namespace detail {

inline constexpr double kProbabilityFloor = 1e-12;

// Floors a distribution at kProbabilityFloor and renormalizes; untouched if
// nothing falls below the floor.
inline void floor_and_normalize(std::span<double> p) {
  bool floored = false;
  for (double& v : p)
    if (v < kProbabilityFloor) {
      v = kProbabilityFloor;
      floored = true;
    }
  if (!floored) return;
  double total = 0.0;
  for (double v : p) total += v;
  for (double& v : p) v /= total;
}

inline void normalize_columns(Matrix<double>& m, bool floor) {
  std::vector<double> col(m.rows());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double total = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) total += (col[r] = m(r, c));
    if (total > 0.0)
      for (double& v : col) v /= total;
    else
      std::fill(col.begin(), col.end(), 1.0 / static_cast<double>(m.rows()));
    if (floor) floor_and_normalize(col);
    for (std::size_t r = 0; r < m.rows(); ++r) m(r, c) = col[r];
  }
}

inline void check_data(const SourceModel& model, const CountSpectrogram& data) {
  data.validate();
  require(data.frequencies() == model.dims.bins,
          "spectrogram has " + std::to_string(data.frequencies()) + " bins, model expects " +
              std::to_string(model.dims.bins));
  if (!(data.total() > 0.0)) throw ValidationError("empty spectrogram (all counts are zero)");
}

// Per-frame, per-state log-likelihoods sum_l V_lt log sum_z theta beta.
inline Matrix<double> frame_log_likelihoods(const SourceModel& model, const CountSpectrogram& data,
                                            const Matrix<double>& weights) {
  const auto [n_states, k, bins] = model.dims;
  const std::size_t frames = data.frames();
  Matrix<double> ll(frames, n_states, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto theta = weights.row(t);
    for (std::size_t l = 0; l < bins; ++l) {
      const double v = data.values(l, t);
      if (v == 0.0) continue;
      const auto beta = model.dictionaries.row(l);
      for (std::size_t d = 0; d < n_states; ++d) {
        double p = 0.0;
        for (std::size_t z = 0; z < k; ++z) p += theta[d * k + z] * beta[d * k + z];
        ll(t, d) += p > 0.0 ? v * std::log(p) : -std::numeric_limits<double>::infinity();
      }
    }
  }
  return ll;
}

inline void refresh_posterior(const SourceModel& model, const CountSpectrogram& data,
                              TrainState& state) {
  const auto ll = frame_log_likelihoods(model, data, state.weights);
  state.posterior = forward_backward(ll, model.chain);
  state.log_likelihood.push_back(state.posterior.log_evidence);
}

}  // namespace detail

inline SourceModel init_model(const ModelDims& dims, std::uint64_t seed) {
  detail::require(dims.states >= 1 && dims.elements >= 1 && dims.bins >= 1,
                  "model dimensions must be positive");
  Rng rng(seed);
  SourceModel model;
  model.dims = dims;
  model.dictionaries = Matrix<double>(dims.bins, dims.columns());
  for (std::size_t c = 0; c < dims.columns(); ++c) {
    const auto element = sample_dirichlet(rng, dims.bins);
    for (std::size_t l = 0; l < dims.bins; ++l) model.dictionaries(l, c) = element[l];
  }
  // Near-uniform ergodic chain with a mild preference for staying put.
  const std::size_t n = dims.states;
  model.chain.transition = Matrix<double>(n, n);
  const double stay_boost = 0.5;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      model.chain.transition(i, j) = (1.0 + (i == j ? stay_boost : 0.0)) / (n + stay_boost);
  model.chain.initial.assign(n, 1.0 / static_cast<double>(n));
  return model;
}

inline TrainState initial_train_state(const SourceModel& model, const CountSpectrogram& data) {
  detail::check_data(model, data);
  TrainState state;
  state.weights = Matrix<double>(data.frames(), model.dims.columns(),
                                 1.0 / static_cast<double>(model.dims.elements));
  detail::refresh_posterior(model, data, state);
  return state;
}

// Log-likelihood of the data under the model with per-frame weights.
inline double log_likelihood(const SourceModel& model, const CountSpectrogram& data,
                             const Matrix<double>& weights) {
  detail::check_data(model, data);
  return forward_backward(detail::frame_log_likelihoods(model, data, weights), model.chain,
                          {.pairwise = false})
      .log_evidence;
}

// One EM iteration. The incoming state must carry the posterior for the
// incoming parameters (initial_train_state and em_step both guarantee it).
inline std::pair<SourceModel, TrainState> em_step(const SourceModel& model,
                                                  const CountSpectrogram& data,
                                                  const TrainState& state) {
  detail::check_data(model, data);
  const auto [n_states, k, bins] = model.dims;
  const std::size_t frames = data.frames();
  const std::size_t cols = model.dims.columns();
  detail::require(state.weights.rows() == frames && state.weights.cols() == cols,
                  "train state does not match data/model");
  detail::require(state.posterior.marginals.rows() == frames,
                  "train state carries no posterior for these parameters");

  const auto& gamma = state.posterior.marginals;
  Matrix<double> beta_acc(bins, cols, 0.0);
  Matrix<double> theta_acc(frames, cols, 0.0);
  std::vector<double> mix(n_states);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto theta = state.weights.row(t);
    auto theta_new = theta_acc.row(t);
    for (std::size_t l = 0; l < bins; ++l) {
      const double v = data.values(l, t);
      if (v == 0.0) continue;
      const auto beta = model.dictionaries.row(l);
      auto beta_new = beta_acc.row(l);
      for (std::size_t d = 0; d < n_states; ++d) {
        double p = 0.0;
        for (std::size_t z = 0; z < k; ++z) p += theta[d * k + z] * beta[d * k + z];
        if (!(p > 0.0)) continue;
        const double r = v / p;
        const double g = gamma(t, d);
        for (std::size_t z = 0; z < k; ++z) {
          const std::size_t c = d * k + z;
          const double resp = r * theta[c] * beta[c];
          theta_new[c] += resp;
          beta_new[c] += g * resp;
        }
      }
    }
  }

  SourceModel next;
  next.dims = model.dims;
  next.dictionaries = std::move(beta_acc);
  // Elements that received no mass keep their previous shape.
  for (std::size_t c = 0; c < cols; ++c) {
    double total = 0.0;
    for (std::size_t l = 0; l < bins; ++l) total += next.dictionaries(l, c);
    if (!(total > 0.0))
      for (std::size_t l = 0; l < bins; ++l) next.dictionaries(l, c) = model.dictionaries(l, c);
  }
  detail::normalize_columns(next.dictionaries, true);

  TrainState out;
  out.weights = std::move(theta_acc);
  for (std::size_t t = 0; t < frames; ++t) {
    auto row = out.weights.row(t);
    for (std::size_t d = 0; d < n_states; ++d) {
      auto block = row.subspan(d * k, k);
      const double total = std::accumulate(block.begin(), block.end(), 0.0);
      if (total > 0.0) {
        for (double& v : block) v /= total;
      } else {
        const auto old = state.weights.row(t).subspan(d * k, k);
        std::copy(old.begin(), old.end(), block.begin());
      }
    }
  }

  const std::size_t n = n_states;
  next.chain.transition = Matrix<double>(n, n, 0.0);
  for (const auto& xi : state.posterior.pairwise)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next.chain.transition(i, j) += xi(i, j);
  if (state.posterior.pairwise.empty()) next.chain.transition = model.chain.transition;
  detail::normalize_columns(next.chain.transition, true);
  next.chain.initial.assign(gamma.row(0).begin(), gamma.row(0).end());

  out.log_likelihood = state.log_likelihood;
  detail::refresh_posterior(next, data, out);
  return {std::move(next), std::move(out)};
}

inline TrainResult train(const CountSpectrogram& data, const ModelDims& dims,
                         const TrainConfig& config = {}) {
  detail::require(dims.bins == data.frequencies(), "model bins must match spectrogram bins");
  detail::require(config.max_iters >= 1, "max_iters must be at least 1");
  SourceModel model = init_model(dims, config.seed);
  TrainState state = initial_train_state(model, data);
  TrainResult result;
  for (std::size_t it = 0; it < config.max_iters; ++it) {
    std::tie(model, state) = em_step(model, data, state);
    ++result.iterations;
    const double after = state.log_likelihood.back();
    const double before = state.log_likelihood[state.log_likelihood.size() - 2];
    if (!std::isfinite(after))
      throw NumericalError("training diverged at iteration " + std::to_string(result.iterations));
    const double rel = (after - before) / std::max(std::abs(before), 1e-300);
    if (rel < config.rel_tol) break;
  }
  result.model = std::move(model);
  result.log_likelihood = std::move(state.log_likelihood);
  result.posterior = std::move(state.posterior);
  return result;
}

// ---------------------------------------------------------------------------
// Generative sampling

struct SampledSource {
  CountSpectrogram counts;
  std::vector<std::size_t> states;
  Matrix<double> weights;  // T x K; theta_t over the active dictionary's elements
};

inline SampledSource sample(const SourceModel& model, std::size_t frames,
                            std::size_t quanta_per_frame, std::uint64_t seed) {
  model.validate(1e-9);
  detail::require(frames >= 1, "need at least one frame");
  detail::require(quanta_per_frame >= 1, "need at least one quantum per frame");
  const auto [n_states, k, bins] = model.dims;
  Rng rng(seed);

  SampledSource out;
  out.states.resize(frames);
  out.weights = Matrix<double>(frames, k);
  Matrix<double> counts(bins, frames, 0.0);
  std::vector<double> transition_col(n_states), element(bins);
  std::vector<std::vector<double>> elements(model.dims.columns());
  for (std::size_t c = 0; c < elements.size(); ++c) elements[c] = model.dictionaries.column(c);

  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t d;
    if (t == 0) {
      d = sample_discrete(rng, model.chain.initial);
    } else {
      for (std::size_t i = 0; i < n_states; ++i)
        transition_col[i] = model.chain.transition(i, out.states[t - 1]);
      d = sample_discrete(rng, transition_col);
    }
    out.states[t] = d;
    const auto theta = sample_dirichlet(rng, k);
    std::copy(theta.begin(), theta.end(), out.weights.row(t).begin());
    for (std::size_t q = 0; q < quanta_per_frame; ++q) {
      const std::size_t z = sample_discrete(rng, theta);
      const std::size_t l = sample_discrete(rng, elements[d * k + z]);
      counts(l, t) += 1.0;
    }
  }
  out.counts = CountSpectrogram(std::move(counts));
  return out;
}

// ---------------------------------------------------------------------------
// State decoding helpers

inline std::vector<std::size_t> most_probable_states(const Matrix<double>& marginals) {
  std::vector<std::size_t> path(marginals.rows());
  for (std::size_t t = 0; t < marginals.rows(); ++t) {
    const auto row = marginals.row(t);
    path[t] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return path;
}

// Fraction of frames where decoded labels agree with the truth after the
// best one-to-one relabelling (exhaustive over permutations, so N <= 9).
inline double state_accuracy(const std::vector<std::size_t>& decoded,
                             const std::vector<std::size_t>& truth, std::size_t n_states) {
  detail::require(decoded.size() == truth.size() && !truth.empty(), "label sequences differ in length");
  detail::require(n_states >= 1 && n_states <= 9, "label matching supports 1..9 states");
  Matrix<double> overlap(n_states, n_states, 0.0);
  for (std::size_t t = 0; t < truth.size(); ++t) {
    detail::require(decoded[t] < n_states && truth[t] < n_states, "label out of range");
    overlap(decoded[t], truth[t]) += 1.0;
  }
  std::vector<std::size_t> perm(n_states);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double matched = 0.0;
    for (std::size_t i = 0; i < n_states; ++i) matched += overlap(i, perm[i]);
    best = std::max(best, matched);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Model files: magic, version, N, K, L as 64-bit integers, then beta in
// [d][z][l] order, rho row-major (destination rows), pi.

inline constexpr auto kModelMagic = binary::make_magic("NFHMMMDL");
inline constexpr std::uint64_t kModelVersion = 1;

inline void save_model(const std::string& path, const SourceModel& model) {
  binary::Writer w(path, kModelMagic);
  w.put_u64(kModelVersion);
  w.put_u64(model.dims.states);
  w.put_u64(model.dims.elements);
  w.put_u64(model.dims.bins);
  for (std::size_t c = 0; c < model.dims.columns(); ++c) w.put_f64s(model.dictionaries.column(c));
  w.put_f64s(model.chain.transition.storage());
  w.put_f64s(model.chain.initial);
  w.finish();
}

inline SourceModel load_model(const std::string& path) {
  binary::Reader r(path, kModelMagic);
  const auto version = r.get_u64();
  if (version != kModelVersion)
    throw IoError("'" + path + "': unsupported model version " + std::to_string(version));
  SourceModel model;
  model.dims.states = r.get_u64();
  model.dims.elements = r.get_u64();
  model.dims.bins = r.get_u64();
  if (model.dims.states == 0 || model.dims.elements == 0 || model.dims.bins == 0)
    throw IoError("'" + path + "': zero model dimension");
  const std::size_t cols = model.dims.columns();
  const auto beta = r.get_f64s(cols * model.dims.bins);
  model.dictionaries = Matrix<double>(model.dims.bins, cols);
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t l = 0; l < model.dims.bins; ++l)
      model.dictionaries(l, c) = beta[c * model.dims.bins + l];
  const std::size_t n = model.dims.states;
  model.chain.transition = Matrix<double>(n, n);
  model.chain.transition.storage() = r.get_f64s(n * n);
  model.chain.initial = r.get_f64s(n);
  r.expect_end();
  try {
    model.validate(1e-9);
  } catch (const ValidationError& e) {
    throw IoError("'" + path + "': invalid model: " + e.what());
  }
  return model;
}

// Human-readable dump, one dictionary element per line.
inline std::string export_model_text(const SourceModel& model) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# N=" << model.dims.states << " K=" << model.dims.elements << " L=" << model.dims.bins
     << '\n';
  for (std::size_t d = 0; d < model.dims.states; ++d)
    for (std::size_t z = 0; z < model.dims.elements; ++z) {
      os << "beta " << d << ' ' << z << ':';
      for (std::size_t l = 0; l < model.dims.bins; ++l) os << ' ' << model.at(d, z, l);
      os << '\n';
    }
  for (std::size_t i = 0; i < model.dims.states; ++i) {
    os << "rho " << i << ':';
    for (std::size_t j = 0; j < model.dims.states; ++j) os << ' ' << model.chain.transition(i, j);
    os << '\n';
  }
  os << "pi:";
  for (double p : model.chain.initial) os << ' ' << p;
  os << '\n';
  return os.str();
}

}  // namespace nfhmm
