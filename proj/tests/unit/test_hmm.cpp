#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "nfhmm/hmm.hpp"
#include "oracles.hpp"

using namespace nfhmm;
using Catch::Approx;

namespace {

Matrix<double> random_log_lik(std::mt19937_64& rng, std::size_t frames, std::size_t n,
                              double spread = 5.0) {
  std::normal_distribution<double> g(0.0, spread);
  Matrix<double> m(frames, n);
  for (auto& v : m.storage()) v = g(rng);
  return m;
}

}  // namespace

TEST_CASE("single state chain", "[hmm]") {
  Matrix<double> ll(4, 1);
  ll(0, 0) = -1.5;
  ll(1, 0) = -2.0;
  ll(2, 0) = 0.25;
  ll(3, 0) = -7.0;
  const auto post = forward_backward(ll, ChainParams::uniform(1));
  for (std::size_t t = 0; t < 4; ++t) CHECK(post.marginals(t, 0) == 1.0);
  CHECK(post.log_evidence == Approx(-1.5 - 2.0 + 0.25 - 7.0).epsilon(1e-14));
}

TEST_CASE("symmetric two-state chain", "[hmm]") {
  Matrix<double> ll(5, 2);
  for (std::size_t t = 0; t < 5; ++t) ll(t, 0) = ll(t, 1) = -0.3 * static_cast<double>(t);
  const auto post = forward_backward(ll, ChainParams::uniform(2));
  for (double v : post.marginals.storage()) CHECK(v == Approx(0.5).epsilon(1e-14));
}

TEST_CASE("fixed three-frame table matches enumeration", "[hmm]") {
  ChainParams c{Matrix<double>(2, 2), {0.9, 0.1}};
  c.transition(0, 0) = 0.8;
  c.transition(1, 0) = 0.2;
  c.transition(0, 1) = 0.3;
  c.transition(1, 1) = 0.7;
  Matrix<double> ll(3, 2);
  const double table[3][2] = {{-1.0, -2.0}, {-0.5, -0.1}, {-3.0, -0.2}};
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t n = 0; n < 2; ++n) ll(t, n) = table[t][n];
  const auto post = forward_backward(ll, c);
  const auto ref = oracle::enumerate_paths(ll, c);
  for (std::size_t i = 0; i < post.marginals.size(); ++i)
    CHECK(std::abs(post.marginals.data()[i] - ref.marginals.data()[i]) <= 1e-12);
  CHECK(std::abs(post.log_evidence - ref.log_evidence) <= 1e-12);
}

TEST_CASE("forward-backward equals path enumeration on random chains", "[hmm]") {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t frames = 1 + rng() % 5, n = 1 + rng() % 3;
    const auto chain = oracle::random_chain(rng, n);
    const auto ll = random_log_lik(rng, frames, n);
    const auto post = forward_backward(ll, chain);
    const auto ref = oracle::enumerate_paths(ll, chain);
    for (std::size_t i = 0; i < post.marginals.size(); ++i)
      REQUIRE(std::abs(post.marginals.data()[i] - ref.marginals.data()[i]) <= 1e-10);
    REQUIRE(post.pairwise.size() == frames - 1);
    for (std::size_t t = 0; t + 1 < frames; ++t)
      for (std::size_t i = 0; i < n * n; ++i)
        REQUIRE(std::abs(post.pairwise[t].data()[i] - ref.pairwise[t].data()[i]) <= 1e-10);
    REQUIRE(std::abs(post.log_evidence - ref.log_evidence) <= 1e-10 * std::max(1.0, std::abs(ref.log_evidence)));
  }
}

TEST_CASE("row shifts leave posteriors unchanged", "[hmm]") {
  std::mt19937_64 rng(7);
  const auto chain = oracle::random_chain(rng, 3);
  const auto ll = random_log_lik(rng, 6, 3);
  auto shifted = ll;
  double total_shift = 0.0;
  for (std::size_t t = 0; t < 6; ++t) {
    const double c = 100.0 * static_cast<double>(t) - 250.0;
    total_shift += c;
    for (std::size_t n = 0; n < 3; ++n) shifted(t, n) += c;
  }
  const auto a = forward_backward(ll, chain), b = forward_backward(shifted, chain);
  for (std::size_t i = 0; i < a.marginals.size(); ++i)
    CHECK(std::abs(a.marginals.data()[i] - b.marginals.data()[i]) <= 1e-12);
  for (std::size_t t = 0; t < a.pairwise.size(); ++t)
    for (std::size_t i = 0; i < 9; ++i)
      CHECK(std::abs(a.pairwise[t].data()[i] - b.pairwise[t].data()[i]) <= 1e-12);
  CHECK(b.log_evidence == Approx(a.log_evidence + total_shift).epsilon(1e-12));
}

TEST_CASE("point-mass start with a permutation chain is deterministic", "[hmm]") {
  ChainParams c{Matrix<double>(3, 3, 0.0), {0.0, 1.0, 0.0}};
  // 0 -> 1 -> 2 -> 0
  c.transition(1, 0) = 1.0;
  c.transition(2, 1) = 1.0;
  c.transition(0, 2) = 1.0;
  std::mt19937_64 rng(3);
  const auto ll = random_log_lik(rng, 7, 3, 20.0);
  const auto post = forward_backward(ll, c);
  std::size_t state = 1;
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t n = 0; n < 3; ++n) CHECK(post.marginals(t, n) == (n == state ? 1.0 : 0.0));
    state = (state + 1) % 3;
  }
}

TEST_CASE("long sequences do not underflow", "[hmm]") {
  std::mt19937_64 rng(9);
  const auto chain = oracle::random_chain(rng, 4);
  auto ll = random_log_lik(rng, 5000, 4);
  for (auto& v : ll.storage()) v -= 800.0;
  const auto post = forward_backward(ll, chain, {.pairwise = false});
  CHECK(post.pairwise.empty());
  for (std::size_t t = 0; t < 5000; ++t) {
    double total = 0.0;
    for (std::size_t n = 0; n < 4; ++n) total += post.marginals(t, n);
    REQUIRE(total == Approx(1.0).epsilon(1e-12));
  }
  CHECK(std::isfinite(post.log_evidence));
}

TEST_CASE("hard zeros propagate as exact zeros", "[hmm]") {
  const double ninf = -std::numeric_limits<double>::infinity();
  Matrix<double> ll(3, 2, 0.0);
  ll(1, 0) = ninf;
  const auto post = forward_backward(ll, ChainParams::uniform(2));
  CHECK(post.marginals(1, 0) == 0.0);
  CHECK(post.marginals(1, 1) == 1.0);
  const auto ref = oracle::enumerate_paths(ll, ChainParams::uniform(2));
  CHECK(post.log_evidence == Approx(ref.log_evidence).epsilon(1e-12));
}

TEST_CASE("forward-backward input errors", "[hmm]") {
  Matrix<double> ll(2, 2, 0.0);
  CHECK_THROWS_AS(forward_backward(ll, ChainParams::uniform(3)), ValidationError);
  CHECK_THROWS_AS(forward_backward(Matrix<double>(0, 2), ChainParams::uniform(2)), ValidationError);
  auto bad = ChainParams::uniform(2);
  bad.transition(0, 0) = 0.9;
  CHECK_THROWS_AS(forward_backward(ll, bad), ValidationError);
  auto nan_ll = ll;
  nan_ll(1, 1) = std::nan("");
  CHECK_THROWS_AS(forward_backward(nan_ll, ChainParams::uniform(2)), NumericalError);
  auto dead = ll;
  dead(0, 0) = dead(0, 1) = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(forward_backward(dead, ChainParams::uniform(2)), NumericalError);
  // Reachable only through a forbidden transition.
  ChainParams stuck{Matrix<double>(2, 2, 0.0), {1.0, 0.0}};
  stuck.transition(0, 0) = 1.0;
  stuck.transition(1, 1) = 1.0;
  Matrix<double> only_second(2, 2, 0.0);
  only_second(1, 0) = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(forward_backward(only_second, stuck), NumericalError);
}
