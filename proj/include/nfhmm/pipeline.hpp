#pragma once

// End-to-end workflows behind the command-line tool: training from audio,
// separating a mixture with any of the three engines, synthesizing
// ground-truth mixtures from random source models, and timing the engines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "nfhmm/bss_eval.hpp"
#include "nfhmm/error.hpp"
#include "nfhmm/exact.hpp"
#include "nfhmm/mixture.hpp"
#include "nfhmm/nhmm.hpp"
#include "nfhmm/plca.hpp"
#include "nfhmm/random.hpp"
#include "nfhmm/separation.hpp"
#include "nfhmm/signal_io.hpp"
#include "nfhmm/variational.hpp"

namespace nfhmm {

enum class Algorithm { vi, exact, plca };

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "vi") return Algorithm::vi;
  if (name == "exact") return Algorithm::exact;
  if (name == "plca") return Algorithm::plca;
  throw ValidationError("unknown algorithm '" + name + "' (expected vi, exact or plca)");
}

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::vi: return "vi";
    case Algorithm::exact: return "exact";
    case Algorithm::plca: return "plca";
  }
  return "?";
}

// Concatenates spectrogram frames along time.
inline CountSpectrogram concatenate_frames(const std::vector<CountSpectrogram>& parts) {
  detail::require(!parts.empty(), "nothing to concatenate");
  const std::size_t bins = parts.front().frequencies();
  std::size_t frames = 0;
  for (const auto& p : parts) {
    detail::require(p.frequencies() == bins, "spectrograms disagree on frequency bins");
    frames += p.frames();
  }
  Matrix<double> values(bins, frames);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t l = 0; l < bins; ++l)
      for (std::size_t t = 0; t < p.frames(); ++t) values(l, offset + t) = p.values(l, t);
    offset += p.frames();
  }
  return CountSpectrogram(std::move(values));
}

inline TrainResult train_from_signals(const std::vector<TimeSignal>& signals,
                                      const StftConfig& stft_config, std::size_t states,
                                      std::size_t elements, const TrainConfig& config,
                                      double gain = 1.0) {
  detail::require(!signals.empty(), "no training audio");
  std::vector<CountSpectrogram> parts;
  for (const auto& s : signals) parts.push_back(to_counts(stft(s, stft_config), gain));
  const auto data = concatenate_frames(parts);
  return train(data, {states, elements, data.frequencies()}, config);
}

// ---------------------------------------------------------------------------
// Separation

struct SeparateConfig {
  Algorithm algorithm = Algorithm::vi;
  double gamma = 1.0;
  std::size_t max_iters = 50;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;
  double gain = 1.0;
  std::size_t max_joint_states = 4096;
  PlcaConfig plca{};
};

struct SeparateReport {
  Algorithm algorithm = Algorithm::vi;
  SeparationResult separation;
  std::size_t iterations = 0;
  bool converged = false;
  std::string monitor_name;  // what the monitor trace measures
  std::vector<double> monitor;
  std::vector<double> iteration_seconds;
  double wall_seconds = 0.0;
  double masking_residual = 0.0;
  // Most probable state per frame and source; empty for PLCA.
  std::vector<std::vector<std::size_t>> state_paths;
  Matrix<double> weights;  // T x K_total element weights used for reconstruction
};

inline SeparateReport separate(const std::vector<SourceModel>& models,
                               const ComplexSpectrogram& mixture_spec,
                               const SeparateConfig& config = {}) {
  detail::require(models.size() >= 2, "separation needs at least two source models");
  for (std::size_t s = 0; s < models.size(); ++s)
    if (models[s].dims.bins != mixture_spec.frequencies())
      throw ValidationError("model " + std::to_string(s + 1) + " has L=" +
                            std::to_string(models[s].dims.bins) + " but the STFT gives " +
                            std::to_string(mixture_spec.frequencies()) + " bins");
  const auto counts = to_counts(mixture_spec, config.gain);
  if (!(counts.total() > 0.0)) throw ValidationError("empty spectrogram (silent mixture)");
  const MixtureModel mixture = combine(models, config.gamma);

  SeparateReport report;
  report.algorithm = config.algorithm;
  const auto start = std::chrono::steady_clock::now();
  switch (config.algorithm) {
    case Algorithm::vi: {
      VariationalConfig vc;
      vc.max_iters = config.max_iters;
      vc.rel_tol = config.rel_tol;
      vc.seed = config.seed;
      auto state = vi_infer(mixture, counts, vc);
      report.iterations = state.iterations;
      report.converged = state.converged;
      report.monitor_name = "reconstruction_cross_entropy";
      report.monitor = state.monitor;
      report.iteration_seconds = state.iteration_seconds;
      for (const auto& d : state.d_hat) report.state_paths.push_back(most_probable_states(d));
      report.weights = posterior_mean_weights(state.alpha_hat);
      break;
    }
    case Algorithm::exact: {
      ExactConfig ec;
      ec.max_iters = config.max_iters;
      ec.rel_tol = config.rel_tol;
      ec.max_joint_states = config.max_joint_states;
      auto post = exact_infer(mixture, counts, ec);
      report.iterations = post.iterations;
      report.converged = post.converged;
      report.monitor_name = "log_likelihood";
      report.monitor = post.log_likelihood;
      report.iteration_seconds = post.iteration_seconds;
      for (std::size_t s = 0; s < mixture.source_count(); ++s)
        report.state_paths.push_back(most_probable_states(post.source_marginals(s)));
      report.weights = post.element_weights(mixture);
      break;
    }
    case Algorithm::plca: {
      auto w = plca_separate(mixture.beta_all(), counts, config.plca);
      report.iterations = w.iterations.empty()
                              ? 0
                              : *std::max_element(w.iterations.begin(), w.iterations.end());
      report.converged = report.iterations < config.plca.max_iters;
      report.monitor_name = "reconstruction_cross_entropy";
      report.weights = std::move(w.weights);
      // PLCA weights are point estimates; alpha_hat = weights reproduces
      // them as the posterior mean.
      report.monitor.push_back(reconstruction_cross_entropy(report.weights, mixture, counts));
      break;
    }
  }
  report.separation = separate_with_weights(mixture, report.weights, counts, mixture_spec);
  report.masking_residual = masking_residual(mixture_spec.magnitude(), report.separation.masked);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline SeparateReport separate(const std::vector<SourceModel>& models, const TimeSignal& mixture,
                               const StftConfig& stft_config, const SeparateConfig& config = {}) {
  return separate(models, stft(mixture, stft_config), config);
}

// ---------------------------------------------------------------------------
// Synthetic ground truth

struct SourceDesign {
  std::size_t band_begin = 0;  // dictionary support [band_begin, band_end)
  std::size_t band_end = 0;    // 0 = all bins
  double persistence = 0.8;    // self-transition probability
  double element_concentration = 1.0;  // symmetric Dirichlet over the support
};

// Random source model: dictionary elements are Dirichlet draws restricted
// to a frequency band; every state stays put with probability `persistence`
// and otherwise moves according to a random distribution over the others.
inline SourceModel random_source_model(const ModelDims& dims, const SourceDesign& design, Rng& rng) {
  detail::require(dims.states >= 1 && dims.elements >= 1 && dims.bins >= 1,
                  "model dimensions must be positive");
  const std::size_t end = design.band_end == 0 ? dims.bins : design.band_end;
  detail::require(design.band_begin < end && end <= dims.bins, "invalid frequency band");
  detail::require(design.persistence >= 0.0 && design.persistence <= 1.0,
                  "persistence must lie in [0, 1]");
  SourceModel model;
  model.dims = dims;
  model.dictionaries = Matrix<double>(dims.bins, dims.columns(), 0.0);
  for (std::size_t c = 0; c < dims.columns(); ++c) {
    const auto e = sample_dirichlet(rng, end - design.band_begin, design.element_concentration);
    for (std::size_t l = design.band_begin; l < end; ++l)
      model.dictionaries(l, c) = e[l - design.band_begin];
  }
  const std::size_t n = dims.states;
  model.chain.transition = Matrix<double>(n, n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (n == 1) {
      model.chain.transition(0, 0) = 1.0;
      continue;
    }
    const auto others = sample_dirichlet(rng, n - 1);
    for (std::size_t i = 0, o = 0; i < n; ++i)
      model.chain.transition(i, j) =
          i == j ? design.persistence : (1.0 - design.persistence) * others[o++];
  }
  model.chain.initial.assign(n, 1.0 / static_cast<double>(n));
  return model;
}

// Audio whose rectangular, non-overlapping STFT has exactly the given
// magnitudes with uniformly random phases (DC and Nyquist get a random sign).
inline TimeSignal counts_to_audio(const CountSpectrogram& counts, const StftConfig& config,
                                  double sample_rate, Rng& rng) {
  detail::require(config.window == WindowKind::rectangular &&
                      config.hop_length == config.window_length &&
                      config.fft_length == config.window_length,
                  "random-phase synthesis needs a rectangular, non-overlapping STFT");
  detail::require(counts.frequencies() == config.bins(), "counts do not match the STFT bins");
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::bernoulli_distribution sign(0.5);
  ComplexSpectrogram spec;
  spec.config = config;
  spec.sample_rate = sample_rate;
  spec.signal_length = counts.frames() * config.window_length;
  spec.bins = Matrix<std::complex<double>>(counts.frequencies(), counts.frames());
  const std::size_t last = counts.frequencies() - 1;
  for (std::size_t l = 0; l < counts.frequencies(); ++l)
    for (std::size_t t = 0; t < counts.frames(); ++t) {
      const double mag = counts.values(l, t);
      spec.bins(l, t) = (l == 0 || l == last) ? std::complex<double>(sign(rng) ? mag : -mag, 0.0)
                                              : std::polar(mag, phase(rng));
    }
  return istft(spec);
}

inline double rms(const TimeSignal& x) {
  double e = 0.0;
  for (double v : x.samples) e += v * v;
  return std::sqrt(e / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
}

struct SynthConfig {
  ModelDims dims{3, 4, 33};
  std::size_t frames = 200;
  std::size_t quanta = 500;        // sound quanta per frame
  std::size_t train_frames = 0;    // extra isolated frames per source; 0 = none
  std::uint64_t seed = 1;
  bool disjoint = false;           // split the band between the two sources
  double mix_db = 0.0;             // level of source 1 relative to source 2
  double persistence = 0.8;
  double element_concentration = 1.0;
  double sample_rate = 16000.0;
  // Linear gain applied to the audio; 1/quanta keeps samples in a sensible
  // range while leaving count ratios untouched.
  double audio_scale = 0.0;        // 0 = 1 / quanta
};

struct SynthResult {
  StftConfig stft_config;
  std::vector<SourceModel> models;
  std::vector<SampledSource> sampled;   // counts and true state paths
  std::vector<TimeSignal> references;   // per-source audio as it appears in the mixture
  TimeSignal mixture;
  std::vector<TimeSignal> training;     // isolated training audio (if requested)
  double source_gain = 1.0;             // factor applied to source 2 for the level offset
};

inline SynthResult synthesize(const SynthConfig& config) {
  detail::require(config.dims.bins >= 4, "need at least 4 frequency bins");
  detail::require(config.frames >= 1 && config.quanta >= 1, "frames and quanta must be positive");
  Rng rng(config.seed);
  SynthResult out;
  out.stft_config = StftConfig::rectangular_for_bins(config.dims.bins);
  const std::size_t half = config.dims.bins / 2;
  for (std::size_t s = 0; s < 2; ++s) {
    SourceDesign design;
    design.persistence = config.persistence;
    design.element_concentration = config.element_concentration;
    if (config.disjoint) {
      design.band_begin = s == 0 ? 0 : half;
      design.band_end = s == 0 ? half : config.dims.bins;
    }
    out.models.push_back(random_source_model(config.dims, design, rng));
  }
  const double scale =
      config.audio_scale > 0.0 ? config.audio_scale : 1.0 / static_cast<double>(config.quanta);
  for (std::size_t s = 0; s < 2; ++s) {
    out.sampled.push_back(sample(out.models[s], config.frames, config.quanta, rng()));
    auto audio = counts_to_audio(out.sampled[s].counts, out.stft_config, config.sample_rate, rng);
    for (double& v : audio.samples) v *= scale;
    out.references.push_back(std::move(audio));
    if (config.train_frames > 0) {
      auto train = sample(out.models[s], config.train_frames, config.quanta, rng());
      auto train_audio = counts_to_audio(train.counts, out.stft_config, config.sample_rate, rng);
      for (double& v : train_audio.samples) v *= scale;
      out.training.push_back(std::move(train_audio));
    }
  }
  const double r1 = rms(out.references[0]), r2 = rms(out.references[1]);
  detail::require(r1 > 0.0 && r2 > 0.0, "synthesized source is silent");
  out.source_gain = r1 / (r2 * std::pow(10.0, config.mix_db / 20.0));
  for (double& v : out.references[1].samples) v *= out.source_gain;
  out.mixture.sample_rate = config.sample_rate;
  out.mixture.samples.resize(out.references[0].size());
  for (std::size_t i = 0; i < out.mixture.size(); ++i)
    out.mixture.samples[i] = out.references[0].samples[i] + out.references[1].samples[i];
  return out;
}

// ---------------------------------------------------------------------------
// Timing

struct BenchConfig {
  std::vector<std::size_t> states{2, 5, 10, 20};
  std::size_t elements = 30;
  std::size_t bins = 513;
  std::size_t frames = 100;
  std::size_t iterations = 3;  // timed iterations per engine
  std::size_t quanta = 1000;
  std::uint64_t seed = 1;
  std::size_t max_joint_states = 4096;
};

struct BenchRow {
  std::size_t states = 0;
  double vi_seconds = 0.0;     // median per-iteration wall time
  double exact_seconds = 0.0;
  double ratio = 0.0;          // exact / vi
};

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline BenchRow bench_one(std::size_t states, const BenchConfig& config, Rng& rng) {
  const ModelDims dims{states, config.elements, config.bins};
  std::vector<SourceModel> models;
  for (int s = 0; s < 2; ++s) models.push_back(random_source_model(dims, {}, rng));
  Matrix<double> mix(config.bins, config.frames, 0.0);
  for (const auto& m : models) {
    const auto drawn = sample(m, config.frames, config.quanta, rng());
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] += drawn.counts.values.data()[i];
  }
  const CountSpectrogram data(std::move(mix));
  const MixtureModel mixture = combine(models, 1.0);

  VariationalConfig vc;
  vc.max_iters = config.iterations;
  vc.rel_tol = 0.0;
  const auto vi = vi_infer(mixture, data, vc);
  ExactConfig ec;
  ec.max_iters = config.iterations;
  ec.rel_tol = 0.0;
  ec.max_joint_states = config.max_joint_states;
  const auto exact = exact_infer(mixture, data, ec);

  BenchRow row;
  row.states = states;
  row.vi_seconds = median(vi.iteration_seconds);
  row.exact_seconds = median(exact.iteration_seconds);
  row.ratio = row.exact_seconds / std::max(row.vi_seconds, 1e-12);
  return row;
}

inline std::vector<BenchRow> bench(const BenchConfig& config) {
  detail::require(!config.states.empty(), "no state counts to benchmark");
  detail::require(config.iterations >= 1, "need at least one timed iteration");
  for (auto n : config.states)
    if (n * n > config.max_joint_states)
      throw ValidationError("N=" + std::to_string(n) + " gives a joint lattice of " +
                            std::to_string(n * n) + " states, above the limit of " +
                            std::to_string(config.max_joint_states));
  Rng rng(config.seed);
  std::vector<BenchRow> rows;
  for (auto n : config.states) rows.push_back(bench_one(n, config, rng));
  return rows;
}

}  // namespace nfhmm
