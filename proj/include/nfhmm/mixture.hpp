#pragma once

// Several source N-HMMs combined into one factorial model over a
// concatenated dictionary, with a Dirichlet prior on the per-frame mixing
// weights whose concentration follows the sources' Markov states.

#include <cstdint>
#include <string>
#include <vector>

#include "nfhmm/error.hpp"
#include "nfhmm/matrix.hpp"
#include "nfhmm/nhmm.hpp"

namespace nfhmm {

struct ElementBlock {
  std::size_t begin = 0;  // first global element index
  std::size_t end = 0;    // one past the last
};

class MixtureModel {
 public:
  MixtureModel() = default;

  std::size_t source_count() const noexcept { return sources_.size(); }
  std::size_t bins() const noexcept { return beta_all_.rows(); }
  std::size_t elements() const noexcept { return beta_all_.cols(); }
  std::size_t states(std::size_t s) const { return sources_.at(s).dims.states; }
  double gamma() const noexcept { return gamma_; }

  const std::vector<SourceModel>& sources() const noexcept { return sources_; }
  const SourceModel& source(std::size_t s) const { return sources_.at(s); }

  // L x K_total; column k is global element k.
  const Matrix<double>& beta_all() const noexcept { return beta_all_; }

  // Global elements owned by dictionary n of source s (contiguous).
  ElementBlock block(std::size_t s, std::size_t n) const {
    const auto& dims = sources_.at(s).dims;
    detail::require(n < dims.states, "state index out of range");
    const std::size_t begin = offsets_[s] + n * dims.elements;
    return {begin, begin + dims.elements};
  }
  // All global elements of source s.
  ElementBlock source_block(std::size_t s) const {
    return {offsets_.at(s), offsets_.at(s) + sources_.at(s).dims.columns()};
  }

  // Availability mask B_snk.
  bool available(std::size_t s, std::size_t n, std::size_t k) const {
    return mask_[(state_offsets_.at(s) + n) * elements() + k] != 0;
  }

  std::size_t owner_source(std::size_t k) const { return owner_source_.at(k); }

  friend MixtureModel combine(std::vector<SourceModel> sources, double gamma);

 private:
  std::vector<SourceModel> sources_;
  Matrix<double> beta_all_;
  std::vector<std::size_t> offsets_;        // first global element per source
  std::vector<std::size_t> state_offsets_;  // first (s, n) row of the mask per source
  std::vector<std::uint8_t> mask_;          // (sum_s N_s) x K_total
  std::vector<std::size_t> owner_source_;
  double gamma_ = 1.0;
};

// Global element order: source-major, then dictionary, then element.
inline MixtureModel combine(std::vector<SourceModel> sources, double gamma = 1.0) {
  detail::require(!sources.empty(), "mixture needs at least one source");
  detail::require(gamma >= 0.0 && std::isfinite(gamma), "gamma must be finite and >= 0");
  const std::size_t bins = sources.front().dims.bins;
  std::size_t total = 0, total_states = 0;
  for (const auto& s : sources) {
    s.validate(1e-9);
    detail::require(s.dims.bins == bins, "sources disagree on the number of frequency bins");
    total += s.dims.columns();
    total_states += s.dims.states;
  }

  MixtureModel m;
  m.gamma_ = gamma;
  m.beta_all_ = Matrix<double>(bins, total);
  m.mask_.assign(total_states * total, 0);
  m.owner_source_.resize(total);
  std::size_t offset = 0, state_offset = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    m.offsets_.push_back(offset);
    m.state_offsets_.push_back(state_offset);
    for (std::size_t c = 0; c < src.dims.columns(); ++c) {
      for (std::size_t l = 0; l < bins; ++l) m.beta_all_(l, offset + c) = src.dictionaries(l, c);
      const std::size_t n = c / src.dims.elements;
      m.mask_[(state_offset + n) * total + offset + c] = 1;
      m.owner_source_[offset + c] = s;
    }
    offset += src.dims.columns();
    state_offset += src.dims.states;
  }
  m.sources_ = std::move(sources);
  return m;
}

// Generative Dirichlet parameters for one joint state configuration:
// alpha_k = 1 + gamma * sum_s sum_n [state_s == n] B_snk.
inline std::vector<double> prior_alpha(const MixtureModel& mixture,
                                       const std::vector<std::size_t>& states) {
  detail::require(states.size() == mixture.source_count(), "need one state per source");
  std::vector<double> alpha(mixture.elements(), 1.0);
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (states[s] >= mixture.states(s))
      throw ValidationError("state " + std::to_string(states[s]) + " out of range for source " +
                            std::to_string(s));
    const auto b = mixture.block(s, states[s]);
    for (std::size_t k = b.begin; k < b.end; ++k) alpha[k] += mixture.gamma();
  }
  return alpha;
}

}  // namespace nfhmm
