#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "nfhmm/exact.hpp"
#include "nfhmm/mixture.hpp"
#include "oracles.hpp"

using namespace nfhmm;

TEST_CASE("combine two single-element sources", "[mixture]") {
  std::mt19937_64 rng(1);
  const auto a = oracle::random_model(rng, {2, 1, 5}), b = oracle::random_model(rng, {2, 1, 5});
  const auto m = combine({a, b}, 1.0);
  CHECK(m.source_count() == 2);
  CHECK(m.elements() == 4);
  CHECK(JointLattice({m.states(0), m.states(1)}).size() == 4);
  // Source-major global order.
  for (std::size_t l = 0; l < 5; ++l) {
    CHECK(m.beta_all()(l, 0) == a.at(0, 0, l));
    CHECK(m.beta_all()(l, 1) == a.at(1, 0, l));
    CHECK(m.beta_all()(l, 2) == b.at(0, 0, l));
    CHECK(m.beta_all()(l, 3) == b.at(1, 0, l));
  }
  CHECK(m.owner_source(1) == 0);
  CHECK(m.owner_source(2) == 1);
}

TEST_CASE("combine with unequal shapes", "[mixture]") {
  std::mt19937_64 rng(2);
  const auto m = combine({oracle::random_model(rng, {2, 3, 6}), oracle::random_model(rng, {3, 2, 6})});
  CHECK(m.elements() == 12);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t n = 0; n < m.states(s); ++n) {
      std::size_t count = 0;
      for (std::size_t k = 0; k < 12; ++k) count += m.available(s, n, k);
      CHECK(count == m.source(s).dims.elements);
      const auto blk = m.block(s, n);
      for (std::size_t k = blk.begin; k < blk.end; ++k) CHECK(m.available(s, n, k));
    }
  CHECK(m.source_block(1).begin == 6);
  CHECK(m.source_block(1).end == 12);
}

TEST_CASE("single-source mixture reduces to dictionary membership", "[mixture]") {
  std::mt19937_64 rng(3);
  const auto src = oracle::random_model(rng, {3, 2, 4});
  const auto m = combine({src}, 2.0);
  CHECK(m.elements() == 6);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 6; ++k) CHECK(m.available(0, n, k) == (k / 2 == n));
  CHECK(prior_alpha(m, {1}) == std::vector<double>{1, 1, 3, 3, 1, 1});
}

TEST_CASE("prior_alpha", "[mixture]") {
  std::mt19937_64 rng(4);
  const auto a = oracle::random_model(rng, {2, 1, 5}), b = oracle::random_model(rng, {2, 1, 5});
  CHECK(prior_alpha(combine({a, b}, 0.0), {0, 1}) == std::vector<double>{1, 1, 1, 1});
  CHECK(prior_alpha(combine({a, b}, 1.0), {0, 1}) == std::vector<double>{2, 1, 1, 2});
  CHECK(prior_alpha(combine({a, b}, 3.0), {0, 1}) == std::vector<double>{4, 1, 1, 4});
  CHECK_THROWS_AS(prior_alpha(combine({a, b}, 1.0), {0, 2}), ValidationError);
  CHECK_THROWS_AS(prior_alpha(combine({a, b}, 1.0), {0}), ValidationError);
}

TEST_CASE("combine validation", "[mixture]") {
  std::mt19937_64 rng(5);
  const auto a = oracle::random_model(rng, {2, 1, 5}), b = oracle::random_model(rng, {2, 1, 6});
  CHECK_THROWS_AS(combine({a, b}), ValidationError);
  CHECK_THROWS_AS(combine({}), ValidationError);
  CHECK_THROWS_AS(combine({a}, -1.0), ValidationError);
  auto broken = a;
  broken.chain.initial = {0.7, 0.7};
  CHECK_THROWS_AS(combine({broken}), ValidationError);
}
