#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nfhmm/exact.hpp"
#include "nfhmm/plca.hpp"
#include "oracles.hpp"

using namespace nfhmm;
using Catch::Approx;

TEST_CASE("joint lattice enumeration", "[exact]") {
  const JointLattice lat({2, 3, 4});
  CHECK(lat.size() == 24);
  for (std::size_t j = 0; j < 24; ++j) CHECK(lat.encode(lat.decode(j)) == j);
  CHECK(lat.decode(1) == std::vector<std::size_t>{0, 0, 1});
  CHECK(lat.decode(4) == std::vector<std::size_t>{0, 1, 0});
  CHECK(JointLattice({2, 2}).size() == 4);
}

TEST_CASE("joint chain is the product of the source chains", "[exact]") {
  std::mt19937_64 rng(1);
  const auto a = oracle::random_model(rng, {2, 1, 4}), b = oracle::random_model(rng, {3, 1, 4});
  const auto mixture = combine({a, b});
  const JointLattice lat({2, 3});
  const auto chain = joint_chain(mixture, lat);
  CHECK_NOTHROW(chain.validate());
  CHECK(chain.transition(lat.encode({1, 2}), lat.encode({0, 1})) ==
        Approx(a.chain.transition(1, 0) * b.chain.transition(2, 1)).epsilon(1e-15));
  CHECK(chain.initial[lat.encode({1, 0})] == Approx(a.chain.initial[1] * b.chain.initial[0]));
}

TEST_CASE("exact inference matches the joint-path oracle", "[exact]") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 5; ++rep) {
    const auto m1 = oracle::random_model(rng, {2, 1, 4}), m2 = oracle::random_model(rng, {2, 1, 4});
    const auto data = oracle::random_counts(rng, 4, 3, 10.0);
    const auto ref = oracle::exact_two_source_k1(m1, m2, data);
    ExactConfig cfg;
    cfg.max_iters = 20000;
    cfg.rel_tol = 0.0;
    const auto post = exact_infer(combine({m1, m2}), data, cfg);
    REQUIRE(post.lattice.size() == 4);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(std::abs(post.joint_marginals(t, j) - ref.joint_marginals(t, j)) <= 1e-6);
        CHECK(std::abs(post.weights_at(t, j)[0] - ref.weight_first(t, j)) <= 1e-6);
      }
    CHECK(std::abs(post.log_likelihood.back() - ref.log_evidence) <=
          1e-6 * std::max(1.0, std::abs(ref.log_evidence)));
  }
}

TEST_CASE("single-state sources reduce to PLCA", "[exact]") {
  std::mt19937_64 rng(3);
  const auto mixture = combine({oracle::random_model(rng, {1, 3, 7}), oracle::random_model(rng, {1, 3, 7})});
  const auto data = oracle::random_counts(rng, 7, 6, 10.0);
  ExactConfig ec;
  ec.max_iters = 150;
  ec.rel_tol = 0.0;
  const auto post = exact_infer(mixture, data, ec);
  CHECK(post.lattice.size() == 1);
  const auto exact_w = post.element_weights(mixture);
  const auto plca = plca_separate(mixture.beta_all(), data, {150, 0.0});
  for (std::size_t i = 0; i < exact_w.size(); ++i)
    CHECK(std::abs(exact_w.data()[i] - plca.weights.data()[i]) <= 1e-10);
}

TEST_CASE("exact log-likelihood is non-decreasing", "[exact]") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto mixture = combine({oracle::random_model(rng, {2, 2, 6}), oracle::random_model(rng, {3, 2, 6})});
    const auto data = oracle::random_counts(rng, 6, 8, 20.0);
    const auto post = exact_infer(mixture, data, {.max_iters = 30, .rel_tol = 0.0});
    for (std::size_t i = 1; i < post.log_likelihood.size(); ++i)
      REQUIRE(post.log_likelihood[i] >= post.log_likelihood[i - 1] - 1e-9);
  }
}

TEST_CASE("exact posterior invariants", "[exact]") {
  std::mt19937_64 rng(6);
  const auto mixture = combine({oracle::random_model(rng, {3, 2, 6}), oracle::random_model(rng, {2, 3, 6})});
  const auto data = oracle::random_counts(rng, 6, 9, 20.0);
  const auto post = exact_infer(mixture, data);
  CHECK(post.iterations == post.log_likelihood.size());
  CHECK(post.active == 5);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto m = post.source_marginals(s);
    for (std::size_t t = 0; t < 9; ++t) {
      double total = 0.0;
      for (std::size_t n = 0; n < m.cols(); ++n) total += m(t, n);
      CHECK(total == Approx(1.0).epsilon(1e-12));
    }
  }
  const auto w = post.element_weights(mixture);
  for (std::size_t t = 0; t < 9; ++t) {
    double total = 0.0;
    for (std::size_t k = 0; k < w.cols(); ++k) total += w(t, k);
    CHECK(total == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("exact inference guards", "[exact]") {
  std::mt19937_64 rng(7);
  const auto big = combine({oracle::random_model(rng, {70, 1, 4}), oracle::random_model(rng, {70, 1, 4})});
  const auto data = oracle::random_counts(rng, 4, 2);
  CHECK_THROWS_AS(exact_infer(big, data), ValidationError);
  const auto small = combine({oracle::random_model(rng, {2, 2, 4}), oracle::random_model(rng, {2, 2, 4})});
  CHECK_THROWS_AS(exact_infer(small, data, {.max_weight_entries = 10}), ValidationError);
  CHECK_THROWS_AS(exact_infer(small, oracle::random_counts(rng, 5, 2)), ValidationError);
  CHECK_THROWS_AS(exact_infer(small, data, {.max_iters = 0}), ValidationError);
}
