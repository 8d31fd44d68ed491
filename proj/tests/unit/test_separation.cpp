#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "nfhmm/bss_eval.hpp"
#include "nfhmm/pipeline.hpp"
#include "nfhmm/separation.hpp"
#include "oracles.hpp"

using namespace nfhmm;
using Catch::Approx;

namespace {

SourceModel fixed_model(std::size_t states, std::size_t elements, const Matrix<double>& beta) {
  SourceModel m;
  m.dims = {states, elements, beta.rows()};
  m.dictionaries = beta;
  m.chain = ChainParams::uniform(states);
  return m;
}

TimeSignal tone(std::size_t length, double cycles_per_sample, double amplitude) {
  TimeSignal x;
  x.samples.resize(length);
  for (std::size_t n = 0; n < length; ++n)
    x.samples[n] = amplitude * std::sin(2.0 * std::numbers::pi * cycles_per_sample * static_cast<double>(n));
  return x;
}

double band_energy(const Matrix<double>& mag, std::size_t begin, std::size_t end) {
  double e = 0.0;
  for (std::size_t l = begin; l < end; ++l)
    for (std::size_t t = 0; t < mag.cols(); ++t) e += mag(l, t) * mag(l, t);
  return e;
}

}  // namespace

TEST_CASE("reconstruct hand cases", "[separation]") {
  // Two sources with two single-element dictionaries each, four bins.
  Matrix<double> b1(4, 2, 0.0), b2(4, 2, 0.0);
  b1(2, 0) = 1.0;
  b1(0, 1) = 0.5, b1(1, 1) = 0.5;
  b2(3, 0) = 1.0;
  b2(0, 1) = 0.25, b2(3, 1) = 0.75;
  const auto mixture = combine({fixed_model(2, 1, b1), fixed_model(2, 1, b2)});
  const std::vector<double> totals{6.0};

  SECTION("point mass element") {
    Matrix<double> w(1, 4, 0.0);
    w(0, 0) = 1.0;
    const auto v = reconstruct(mixture, w, totals, 0);
    for (std::size_t l = 0; l < 4; ++l) CHECK(v(l, 0) == (l == 2 ? 6.0 : 0.0));
    const auto other = reconstruct(mixture, w, totals, 1);
    for (double x : other.storage()) CHECK(x == 0.0);
  }
  SECTION("even split between sources") {
    Matrix<double> w(1, 4, 0.0);
    w(0, 1) = 0.5;
    w(0, 3) = 0.5;
    for (std::size_t s = 0; s < 2; ++s) {
      const auto v = reconstruct(mixture, w, totals, s);
      double total = 0.0;
      for (double x : v.storage()) total += x;
      CHECK(total == Approx(3.0).epsilon(1e-15));
    }
  }
  SECTION("uniform weights") {
    const Matrix<double> w(1, 4, 0.25);
    const auto v1 = reconstruct(mixture, w, totals, 0), v2 = reconstruct(mixture, w, totals, 1);
    const double e1[4] = {0.75, 0.75, 1.5, 0.0}, e2[4] = {0.375, 0.0, 0.0, 2.625};
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(v1(l, 0) == Approx(e1[l]).epsilon(1e-15));
      CHECK(v2(l, 0) == Approx(e2[l]).epsilon(1e-15));
    }
  }
  SECTION("linear in weights and totals") {
    std::mt19937_64 rng(1);
    Matrix<double> wa(1, 4), wb(1, 4);
    const auto pa = oracle::random_simplex(rng, 4), pb = oracle::random_simplex(rng, 4);
    Matrix<double> mid(1, 4);
    for (std::size_t k = 0; k < 4; ++k) {
      wa(0, k) = pa[k];
      wb(0, k) = pb[k];
      mid(0, k) = 0.3 * pa[k] + 0.7 * pb[k];
    }
    const auto va = reconstruct(mixture, wa, totals, 0), vb = reconstruct(mixture, wb, totals, 0);
    const auto vm = reconstruct(mixture, mid, totals, 0);
    const auto v2 = reconstruct(mixture, wa, std::vector<double>{12.0}, 0);
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(vm(l, 0) == Approx(0.3 * va(l, 0) + 0.7 * vb(l, 0)).epsilon(1e-14));
      CHECK(v2(l, 0) == Approx(2.0 * va(l, 0)).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(reconstruct(mixture, Matrix<double>(1, 4, 0.25), totals, 2), ValidationError);
}

TEST_CASE("wiener_mask", "[separation]") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Matrix<double> v(5, 7), e1(5, 7), e2(5, 7), e3(5, 7);
  for (auto* m : {&v, &e1, &e2, &e3})
    for (auto& x : m->storage()) x = u(rng);

  SECTION("equal estimates split evenly") {
    const auto out = wiener_mask(v, {e1, e1});
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(out[0].data()[i] == Approx(v.data()[i] / 2.0).epsilon(1e-15));
      CHECK(out[1].data()[i] == out[0].data()[i]);
    }
  }
  SECTION("a silent estimate leaves everything to the other") {
    const auto out = wiener_mask(v, {e1, Matrix<double>(5, 7, 0.0)});
    CHECK(out[0] == v);
    for (double x : out[1].storage()) CHECK(x == 0.0);
  }
  SECTION("all-zero cells are shared equally") {
    const auto out = wiener_mask(v, {Matrix<double>(5, 7, 0.0), Matrix<double>(5, 7, 0.0)});
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(out[0].data()[i] == v.data()[i] / 2.0);
  }
  SECTION("conservation") {
    const auto out = wiener_mask(v, {e1, e2, e3});
    CHECK(masking_residual(v, out) <= 1e-12);
    for (const auto& m : out)
      for (double x : m.storage()) CHECK(x >= 0.0);
  }
  CHECK_THROWS_AS(wiener_mask(v, {e1, Matrix<double>(5, 6, 0.0)}), ValidationError);
  auto negative = e1;
  negative(0, 0) = -1.0;
  CHECK_THROWS_AS(wiener_mask(v, {negative, e2}), ValidationError);
  CHECK_THROWS_AS(wiener_mask(v, {}), ValidationError);
}

TEST_CASE("resynthesize", "[separation]") {
  const StftConfig cfg{128, 32, WindowKind::hann, 128};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.3);
  TimeSignal x;
  x.samples.resize(2048);
  for (auto& s : x.samples) s = g(rng);
  const auto spec = stft(x, cfg);

  SECTION("identity mask") {
    const auto y = resynthesize(spec.magnitude(), spec);
    const auto ref = istft(spec);
    REQUIRE(y.size() == ref.size());
    for (std::size_t n = 0; n < y.size(); ++n) CHECK(std::abs(y.samples[n] - ref.samples[n]) <= 1e-6);
  }
  SECTION("zero mask") {
    const auto y = resynthesize(Matrix<double>(spec.frequencies(), spec.frames(), 0.0), spec);
    for (double s : y.samples) CHECK(s == 0.0);
  }
  CHECK_THROWS_AS(resynthesize(Matrix<double>(3, 3, 0.0), spec), ValidationError);
}

TEST_CASE("disjoint bands separate cleanly with oracle masks", "[separation]") {
  const StftConfig cfg{128, 32, WindowKind::hann, 128};
  const std::size_t length = 4096, split = 32;
  auto low = tone(length, 6.0 / 128.0, 1.0), high = tone(length, 45.0 / 128.0, 0.7);
  const auto low2 = tone(length, 11.0 / 128.0, 0.4), high2 = tone(length, 50.0 / 128.0, 0.5);
  for (std::size_t n = 0; n < length; ++n) {
    low.samples[n] += low2.samples[n];
    high.samples[n] += high2.samples[n];
  }
  TimeSignal mix = low;
  for (std::size_t n = 0; n < length; ++n) mix.samples[n] += high.samples[n];
  const auto spec = stft(mix, cfg);
  const auto mag = spec.magnitude();
  Matrix<double> m_low(mag.rows(), mag.cols(), 0.0), m_high = m_low;
  for (std::size_t l = 0; l < mag.rows(); ++l)
    for (std::size_t t = 0; t < mag.cols(); ++t) (l < split ? m_low : m_high)(l, t) = mag(l, t);
  const auto y_low = stft(resynthesize(m_low, spec), cfg).magnitude();
  const auto y_high = stft(resynthesize(m_high, spec), cfg).magnitude();
  CHECK(band_energy(y_low, split, mag.rows()) <= 0.01 * band_energy(y_low, 0, split));
  CHECK(band_energy(y_high, 0, split) <= 0.01 * band_energy(y_high, split, mag.rows()));
}

TEST_CASE("one source plus silence is recovered", "[separation]") {
  SynthConfig sc;
  sc.dims = {3, 4, 33};
  sc.frames = 60;
  sc.seed = 4;
  // With overlapping spectra the absent source's elements can explain part
  // of the present one, so recovery is only clean when supports differ.
  sc.disjoint = true;
  const auto synth = synthesize(sc);
  const auto& source = synth.references[0];
  const auto report = separate(synth.models, source, synth.stft_config,
                               {.gain = static_cast<double>(sc.quanta)});
  CHECK(report.masking_residual <= 1e-9);
  const auto scores = bss_eval(report.separation.signals[0], {source}, 0);
  CHECK(scores.sdr >= 20.0);
}

TEST_CASE("separate_with_weights enforces conservation", "[separation]") {
  std::mt19937_64 rng(5);
  const auto mixture = combine({oracle::random_model(rng, {2, 2, 65}), oracle::random_model(rng, {2, 2, 65})});
  TimeSignal x;
  x.samples.resize(1024);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& s : x.samples) s = g(rng);
  const auto spec = stft(x, {128, 32, WindowKind::hann, 128});
  const auto counts = to_counts(spec);
  Matrix<double> w(counts.frames(), 8);
  for (std::size_t t = 0; t < w.rows(); ++t) {
    const auto p = oracle::random_simplex(rng, 8);
    std::copy(p.begin(), p.end(), w.row(t).begin());
  }
  const auto result = separate_with_weights(mixture, w, counts, spec);
  REQUIRE(result.signals.size() == 2);
  CHECK(masking_residual(spec.magnitude(), result.masked) <= 1e-9);
  CHECK(result.signals[0].size() == x.size());
}
