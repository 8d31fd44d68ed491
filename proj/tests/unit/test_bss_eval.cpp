#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nfhmm/bss_eval.hpp"

using namespace nfhmm;
using Catch::Approx;

namespace {

TimeSignal noise(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  TimeSignal x;
  x.samples.resize(n);
  for (auto& v : x.samples) v = g(rng);
  return x;
}

TimeSignal axpy(double a, const TimeSignal& x, const TimeSignal& y) {
  TimeSignal out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += a * x.samples[i];
  return out;
}

// Removes from x its projection on each signal in basis (Gram-Schmidt).
TimeSignal orthogonalize(TimeSignal x, const std::vector<TimeSignal>& basis) {
  auto ortho = basis;
  for (std::size_t i = 0; i < ortho.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double c = detail::dot(ortho[i].samples, ortho[j].samples) /
                       detail::dot(ortho[j].samples, ortho[j].samples);
      ortho[i] = axpy(-c, ortho[j], ortho[i]);
    }
  for (const auto& b : ortho) {
    const double c = detail::dot(x.samples, b.samples) / detail::dot(b.samples, b.samples);
    x = axpy(-c, b, x);
  }
  return x;
}

}  // namespace

TEST_CASE("perfect estimate hits the cap", "[bss_eval]") {
  std::mt19937_64 rng(1);
  const auto s1 = noise(rng, 1000), s2 = noise(rng, 1000);
  const auto sc = bss_eval(s1, {s1, s2}, 0);
  CHECK(sc.sdr == kScoreCapDb);
  CHECK(sc.sir == kScoreCapDb);
  CHECK(sc.sar == kScoreCapDb);
}

TEST_CASE("scores are scale invariant", "[bss_eval]") {
  std::mt19937_64 rng(2);
  const auto s1 = noise(rng, 800), s2 = noise(rng, 800), e = noise(rng, 800);
  const auto est = axpy(0.3, s2, axpy(0.2, e, s1));
  const auto base = bss_eval(est, {s1, s2}, 0);
  for (double a : {-3.0, 0.01, 7.5}) {
    TimeSignal scaled = est;
    for (auto& v : scaled.samples) v *= a;
    const auto sc = bss_eval(scaled, {s1, s2}, 0);
    CHECK(std::abs(sc.sdr - base.sdr) <= 1e-9);
    CHECK(std::abs(sc.sir - base.sir) <= 1e-9);
    CHECK(std::abs(sc.sar - base.sar) <= 1e-9);
  }
}

TEST_CASE("orthogonal equal-power interferer", "[bss_eval]") {
  std::mt19937_64 rng(3);
  const auto s1 = noise(rng, 2000);
  auto s2 = orthogonalize(noise(rng, 2000), {s1});
  const double k = std::sqrt(detail::energy(s1.samples) / detail::energy(s2.samples));
  for (auto& v : s2.samples) v *= k;
  const auto sc = bss_eval(axpy(1.0, s2, s1), {s1, s2}, 0);
  CHECK(std::abs(sc.sir) <= 1e-9);
  CHECK(std::abs(sc.sdr) <= 1e-9);
  CHECK(sc.sar == kScoreCapDb);
}

TEST_CASE("orthogonal noise lowers SDR and SAR only", "[bss_eval]") {
  std::mt19937_64 rng(4);
  const auto s1 = noise(rng, 1500), s2 = noise(rng, 1500);
  const auto n = orthogonalize(noise(rng, 1500), {s1, s2});
  double last_sdr = kScoreCapDb + 1.0, last_sar = kScoreCapDb + 1.0;
  for (double level : {0.001, 0.01, 0.1, 1.0}) {
    const auto sc = bss_eval(axpy(level, n, s1), {s1, s2}, 0);
    CHECK(sc.sdr < last_sdr);
    CHECK(sc.sar < last_sar);
    CHECK(sc.sir == kScoreCapDb);
    last_sdr = sc.sdr;
    last_sar = sc.sar;
  }
}

TEST_CASE("decomposition is exact and SDR is bounded", "[bss_eval]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto s1 = noise(rng, 300), s2 = noise(rng, 300), e = noise(rng, 300);
    const auto est = axpy(u(rng), s2, axpy(u(rng), e, axpy(u(rng), s1, TimeSignal{std::vector<double>(300, 0.0)})));
    const std::vector<std::span<const double>> refs{s1.samples, s2.samples};
    const auto d = bss_decompose(est.samples, refs, 0);
    double err = 0.0;
    for (std::size_t i = 0; i < 300; ++i)
      err = std::max(err, std::abs(d.target[i] + d.interference[i] + d.artifacts[i] - est.samples[i]));
    double peak = 0.0;
    for (double v : est.samples) peak = std::max(peak, std::abs(v));
    REQUIRE(err <= 1e-9 * peak);
    REQUIRE(std::abs(detail::dot(d.artifacts, s1.samples)) <= 1e-8 * std::sqrt(detail::energy(s1.samples)));
    const auto sc = bss_eval(est, {s1, s2}, 0);
    REQUIRE(sc.sdr <= std::min(sc.sir, sc.sar) + 3.0103 + 1e-6);
  }
}

TEST_CASE("best permutation assignment", "[bss_eval]") {
  std::mt19937_64 rng(6);
  const auto s1 = noise(rng, 900), s2 = noise(rng, 900), e = noise(rng, 900);
  const auto est1 = axpy(0.1, e, s1), est2 = axpy(0.2, e, s2);
  const auto straight = bss_eval_best_permutation({est1, est2}, {s1, s2});
  const auto swapped = bss_eval_best_permutation({est2, est1}, {s1, s2});
  CHECK(straight.assignment == std::vector<std::size_t>{0, 1});
  CHECK(swapped.assignment == std::vector<std::size_t>{1, 0});
  CHECK(swapped.scores[0].sdr == straight.scores[1].sdr);
  CHECK(swapped.scores[1].sdr == straight.scores[0].sdr);
  const auto perfect = bss_eval_best_permutation({s1, s2}, {s1, s2});
  for (const auto& sc : perfect.scores) CHECK(sc.sdr == kScoreCapDb);
}

TEST_CASE("bss_eval input errors", "[bss_eval]") {
  std::mt19937_64 rng(7);
  const auto s1 = noise(rng, 100), s2 = noise(rng, 100), shorter = noise(rng, 99);
  const TimeSignal zero{std::vector<double>(100, 0.0)};
  CHECK_THROWS_AS(bss_eval(shorter, {s1, s2}, 0), ValidationError);
  CHECK_THROWS_AS(bss_eval(s1, {zero, s2}, 0), ValidationError);
  CHECK_THROWS_AS(bss_eval(s1, {s1, s1}, 0), ValidationError);
  CHECK_THROWS_AS(bss_eval(s1, {s1, s2}, 2), ValidationError);
  CHECK_THROWS_AS(bss_eval_best_permutation({s1}, {s1, s2}), ValidationError);
}
