#pragma once

// Exact inference in the original N-FHMM: one Markov chain over the product
// of all source state spaces, and maximum-likelihood mixing weights
// theta_t(d1, ..., dS) over the concatenation of the active dictionaries,
// estimated by EM. Cost per frame grows with prod_s N_s.

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nfhmm/error.hpp"
#include "nfhmm/hmm.hpp"
#include "nfhmm/matrix.hpp"
#include "nfhmm/mixture.hpp"
#include "nfhmm/signal_io.hpp"

namespace nfhmm {

struct ExactConfig {
  std::size_t max_iters = 50;
  double rel_tol = 1e-4;
  // Refuse lattices larger than this many joint states.
  std::size_t max_joint_states = 4096;
  // Refuse problems whose weight table (T x joint states x active elements)
  // exceeds this many doubles.
  std::size_t max_weight_entries = std::size_t{1} << 27;
};

// Mixed-radix enumeration of joint states; the last source varies fastest.
class JointLattice {
 public:
  explicit JointLattice(std::vector<std::size_t> radices) : radices_(std::move(radices)) {
    size_ = 1;
    for (auto r : radices_) size_ *= r;
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t sources() const noexcept { return radices_.size(); }
  const std::vector<std::size_t>& radices() const noexcept { return radices_; }

  std::vector<std::size_t> decode(std::size_t j) const {
    std::vector<std::size_t> states(radices_.size());
    for (std::size_t s = radices_.size(); s-- > 0;) {
      states[s] = j % radices_[s];
      j /= radices_[s];
    }
    return states;
  }

  std::size_t encode(const std::vector<std::size_t>& states) const {
    std::size_t j = 0;
    for (std::size_t s = 0; s < radices_.size(); ++s) j = j * radices_[s] + states[s];
    return j;
  }

 private:
  std::vector<std::size_t> radices_;
  std::size_t size_ = 1;
};

struct ExactPosterior {
  JointLattice lattice{{}};
  Matrix<double> joint_marginals;  // T x J
  // theta_t(j) over the active elements of joint state j, laid out
  // [t][j][a] where a runs over the active blocks in source order.
  std::vector<double> weights;
  std::size_t active = 0;  // active elements per joint state
  std::vector<double> log_likelihood;
  std::vector<double> iteration_seconds;
  std::size_t iterations = 0;
  bool converged = false;

  std::span<const double> weights_at(std::size_t t, std::size_t j) const {
    return {weights.data() + (t * lattice.size() + j) * active, active};
  }

  Matrix<double> source_marginals(std::size_t s) const {
    const std::size_t n = lattice.radices().at(s);
    Matrix<double> out(joint_marginals.rows(), n, 0.0);
    for (std::size_t j = 0; j < lattice.size(); ++j) {
      const std::size_t state = lattice.decode(j)[s];
      for (std::size_t t = 0; t < joint_marginals.rows(); ++t)
        out(t, state) += joint_marginals(t, j);
    }
    return out;
  }

  // Posterior-mean per-element weights sum_j P(j | t) theta_t(j), scattered
  // onto global element indices (T x K_total).
  Matrix<double> element_weights(const MixtureModel& mixture) const {
    const std::size_t frames = joint_marginals.rows();
    Matrix<double> out(frames, mixture.elements(), 0.0);
    for (std::size_t j = 0; j < lattice.size(); ++j) {
      const auto states = lattice.decode(j);
      for (std::size_t t = 0; t < frames; ++t) {
        const double pj = joint_marginals(t, j);
        const auto theta = weights_at(t, j);
        std::size_t a = 0;
        for (std::size_t s = 0; s < states.size(); ++s) {
          const auto b = mixture.block(s, states[s]);
          for (std::size_t k = b.begin; k < b.end; ++k) out(t, k) += pj * theta[a++];
        }
      }
    }
    return out;
  }
};

inline ChainParams joint_chain(const MixtureModel& mixture, const JointLattice& lattice) {
  const std::size_t n = lattice.size();
  ChainParams chain{Matrix<double>(n, n), std::vector<double>(n)};
  std::vector<std::vector<std::size_t>> decoded(n);
  for (std::size_t j = 0; j < n; ++j) decoded[j] = lattice.decode(j);
  for (std::size_t i = 0; i < n; ++i) {
    double p0 = 1.0;
    for (std::size_t s = 0; s < lattice.sources(); ++s)
      p0 *= mixture.source(s).chain.initial[decoded[i][s]];
    chain.initial[i] = p0;
    for (std::size_t j = 0; j < n; ++j) {
      double p = 1.0;
      for (std::size_t s = 0; s < lattice.sources(); ++s)
        p *= mixture.source(s).chain.transition(decoded[i][s], decoded[j][s]);
      chain.transition(i, j) = p;
    }
  }
  return chain;
}

inline ExactPosterior exact_infer(const MixtureModel& mixture, const CountSpectrogram& data,
                                  const ExactConfig& config = {}) {
  data.validate();
  detail::require(config.max_iters >= 1, "max_iters must be at least 1");
  detail::require(data.frequencies() == mixture.bins(),
                  "spectrogram bins do not match the mixture");
  const std::size_t sources = mixture.source_count();
  std::vector<std::size_t> radices(sources);
  std::size_t joint = 1, active = 0;
  for (std::size_t s = 0; s < sources; ++s) {
    radices[s] = mixture.states(s);
    if (joint > config.max_joint_states / radices[s] + 1)
      throw ValidationError("joint lattice too large for exact inference");
    joint *= radices[s];
    active += mixture.source(s).dims.elements;
  }
  if (joint > config.max_joint_states)
    throw ValidationError("joint lattice has " + std::to_string(joint) +
                          " states, above the exact-inference limit of " +
                          std::to_string(config.max_joint_states));
  const std::size_t frames = data.frames(), bins = mixture.bins();
  if (frames * joint * active > config.max_weight_entries)
    throw ValidationError("exact-inference weight table (" +
                          std::to_string(frames * joint * active) + " entries) exceeds limit");

  ExactPosterior post;
  post.lattice = JointLattice(radices);
  post.active = active;
  post.weights.assign(frames * joint * active, 0.0);
  // Uniform weights within every source's active block, equal mass per source.
  std::vector<double> init(active);
  {
    std::size_t a = 0;
    for (std::size_t s = 0; s < sources; ++s) {
      const std::size_t k = mixture.source(s).dims.elements;
      for (std::size_t z = 0; z < k; ++z)
        init[a++] = 1.0 / (static_cast<double>(k) * static_cast<double>(sources));
    }
  }
  for (std::size_t i = 0; i < frames * joint; ++i)
    std::copy(init.begin(), init.end(), post.weights.begin() + i * active);

  const ChainParams chain = joint_chain(mixture, post.lattice);
  std::vector<std::vector<ElementBlock>> blocks(joint);
  for (std::size_t j = 0; j < joint; ++j) {
    const auto states = post.lattice.decode(j);
    for (std::size_t s = 0; s < sources; ++s) blocks[j].push_back(mixture.block(s, states[s]));
  }

  const auto& beta = mixture.beta_all();
  Matrix<double> log_lik(frames, joint);
  std::vector<double> prob(bins), acc(active);
  using clock = std::chrono::steady_clock;
  for (std::size_t it = 0; it < config.max_iters; ++it) {
    const auto start = clock::now();
    // E-step likelihoods and the (chain-independent) weight M-step share the
    // per-(t, j) reconstruction.
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t j = 0; j < joint; ++j) {
        double* theta = post.weights.data() + (t * joint + j) * active;
        double ll = 0.0;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t l = 0; l < bins; ++l) {
          const double v = data.values(l, t);
          if (v == 0.0) continue;
          const double* b = beta.row(l).data();
          double p = 0.0;
          std::size_t a = 0;
          for (const auto& blk : blocks[j])
            for (std::size_t k = blk.begin; k < blk.end; ++k) p += theta[a++] * b[k];
          if (!(p > 0.0)) {
            ll = -std::numeric_limits<double>::infinity();
            continue;
          }
          ll += v * std::log(p);
          const double r = v / p;
          a = 0;
          for (const auto& blk : blocks[j])
            for (std::size_t k = blk.begin; k < blk.end; ++k) acc[a++] += r * b[k];
        }
        log_lik(t, j) = ll;
        double total = 0.0;
        for (std::size_t a = 0; a < active; ++a) total += (acc[a] *= theta[a]);
        if (total > 0.0)
          for (std::size_t a = 0; a < active; ++a) theta[a] = acc[a] / total;
      }
    }
    auto fb = forward_backward(log_lik, chain, {.pairwise = false});
    post.joint_marginals = std::move(fb.marginals);
    post.log_likelihood.push_back(fb.log_evidence);
    post.iteration_seconds.push_back(std::chrono::duration<double>(clock::now() - start).count());
    post.iterations = it + 1;
    if (post.log_likelihood.size() >= 2) {
      const double prev = post.log_likelihood[post.log_likelihood.size() - 2];
      const double cur = post.log_likelihood.back();
      if (std::abs(cur - prev) < config.rel_tol * std::max(std::abs(prev), 1e-300)) {
        post.converged = true;
        break;
      }
    }
  }
  return post;
}

}  // namespace nfhmm
