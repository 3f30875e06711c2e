// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <random>

#include "david/dsp.hpp"
#include "david/error.hpp"

using namespace david;

namespace {

AudioBuffer sine(double hz, double seconds, double amp = 0.5, int sr = 16000) {
  AudioBuffer a;
  a.sample_rate_hz = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  for (std::size_t i = 0; i < n; ++i) a.samples.push_back(static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / sr)));
  return a;
}

}  // namespace

TEST_CASE("mel scale") {
  CHECK(mel_scale(0.0) == 0.0);
  CHECK(mel_scale(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(mel_scale(700.0) == doctest::Approx(781.17).epsilon(1e-5));
  CHECK(mel_scale(8000.0) == doctest::Approx(2840.03).epsilon(1e-5));
  for (double f = 0; f < 8000; f += 37.0) CHECK(mel_scale(f + 1.0) > mel_scale(f));
  CHECK(mel_to_hz(mel_scale(1234.5)) == doctest::Approx(1234.5));
}

TEST_CASE("filterbank rows are non-negative and cover interior bins") {
  FeatureConfig cfg;
  auto fb = mel_filterbank(cfg, 16000);
  REQUIRE(fb.size() == 64);
  REQUIRE(fb[0].size() == 513);
  for (const auto& r : fb)
    for (double w : r) CHECK(w >= 0.0);
  for (std::size_t k = 1; k < 512; ++k) {
    double total = 0;
    for (const auto& r : fb) total += r[k];
    CHECK(total > 0.0);
  }
}

TEST_CASE("logmel frame count and silence") {
  FeatureConfig cfg;
  AudioBuffer a;
  a.samples.assign(16000, 0.0f);
  auto f = logmel(a, cfg);
  CHECK(f.dim(0) == 64);
  CHECK(f.dim(1) == 39);
  for (float v : f.floats()) CHECK(v == doctest::Approx(std::log(1e-10)));
  a.samples.resize(799);
  CHECK(logmel(a, cfg).dim(1) == 0);
  a.samples.resize(800);
  CHECK(logmel(a, cfg).dim(1) == 1);
}

TEST_CASE("1 kHz sine peaks in the band bracketing 1 kHz") {
  FeatureConfig cfg;
  auto f = logmel(sine(1000.0, 0.5), cfg);
  const auto centers = mel_band_centers(cfg);
  for (std::int64_t t = 0; t < f.dim(1); ++t) {
    std::int64_t best = 0;
    for (std::int64_t b = 1; b < 64; ++b)
      if (f.value(b, t) > f.value(best, t)) best = b;
    const double left = best > 0 ? centers[best - 1] : 0.0;
    const double right = best < 63 ? centers[best + 1] : 8000.0;
    CHECK(left <= 1000.0);
    CHECK(right >= 1000.0);
  }
}

TEST_CASE("logmel agrees with a direct DFT") {
  FeatureConfig cfg;
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> d(-0.5f, 0.5f);
  AudioBuffer a;
  for (int i = 0; i < 1600; ++i) a.samples.push_back(d(rng));
  auto f = logmel(a, cfg);
  auto fb = mel_filterbank(cfg, 16000);
  for (int t : {0, 2}) {
    std::vector<double> power(513);
    for (int k = 0; k <= 512; ++k) {
      std::complex<double> acc = 0;
      for (int i = 0; i < 800; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / 800);
        acc += w * a.samples[t * 400 + i] * std::polar(1.0, -2 * std::numbers::pi * k * i / 1024);
      }
      power[k] = std::norm(acc);
    }
    for (int b = 0; b < 64; b += 9) {
      double e = 0;
      for (int k = 0; k <= 512; ++k) e += fb[b][k] * power[k];
      CHECK(f.value(b, t) == doctest::Approx(std::log(e)).epsilon(1e-5));
    }
  }
}

TEST_CASE("logmel is shift covariant by one hop") {
  FeatureConfig cfg;
  std::mt19937 rng(9);
  std::normal_distribution<float> d(0.0f, 0.2f);
  AudioBuffer a;
  for (int i = 0; i < 8000; ++i) a.samples.push_back(d(rng));
  AudioBuffer b = a;
  b.samples.insert(b.samples.begin(), 400, 0.0f);
  auto fa = logmel(a, cfg), fb = logmel(b, cfg);
  for (std::int64_t t = 0; t < fa.dim(1); ++t)
    for (std::int64_t m = 0; m < 64; ++m) CHECK(std::abs(fa.value(m, t) - fb.value(m, t + 1)) <= 1e-6);
}

TEST_CASE("invalid feature config") {
  FeatureConfig cfg;
  cfg.fft_size = 512;
  CHECK_THROWS_AS(logmel(sine(100, 0.1), cfg), Error);
  cfg = {};
  cfg.fmax_hz = 9000;
  CHECK_THROWS_AS(cfg.validate(16000), Error);
}

TEST_CASE("normalize") {
  std::mt19937 rng(4);
  std::normal_distribution<float> d(3.0f, 2.0f);
  std::vector<float> v(4 * 50);
  for (auto& x : v) x = d(rng);
  Tensor t = Tensor::from_floats({4, 50}, v);
  auto n = normalize(t, compute_norm_stats(t));
  for (std::int64_t b = 0; b < 4; ++b) {
    double m = 0, s = 0;
    for (std::int64_t j = 0; j < 50; ++j) m += n.value(b, j);
    m /= 50;
    for (std::int64_t j = 0; j < 50; ++j) s += (n.value(b, j) - m) * (n.value(b, j) - m);
    CHECK(std::abs(m) <= 1e-6);
    CHECK(s / 50 == doctest::Approx(1.0).epsilon(1e-5));
  }
  NormStats id{{0, 0, 0, 0}, {1, 1, 1, 1}};
  CHECK(normalize(t, id) == t);
  Tensor c = Tensor::from_floats({1, 3}, {2.5f, 2.5f, 2.5f});
  CHECK(normalize(c, NormStats{{2.5f}, {1.0f}}) == Tensor::from_floats({1, 3}, {0, 0, 0}));
  CHECK_THROWS_AS(normalize(c, NormStats{{2.5f}, {0.0f}}), Error);
}

TEST_CASE("mu-law") {
  CHECK(mulaw_encode(1.0) == 255);
  CHECK(mulaw_encode(-1.0) == 0);
  CHECK(mulaw_encode(0.0) == 128);
  CHECK(mulaw_encode(3.0) == 255);
  int prev = -1;
  double worst = 0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = -1.0 + 2.0 * i / 10000;
    const int c = mulaw_encode(x);
    CHECK(c >= prev);
    prev = c;
    worst = std::max(worst, std::abs(x - mulaw_decode(c)));
  }
  CHECK(worst <= 0.025);
}

TEST_CASE("wav round trip") {
  AudioBuffer a = sine(440, 0.05);
  auto back = parse_wav(encode_wav(a));
  CHECK(back.sample_rate_hz == 16000);
  REQUIRE(back.samples.size() == a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(std::abs(back.samples[i] - a.samples[i]) <= 1.0 / 32767);
  CHECK_THROWS_AS(parse_wav({'n', 'o'}), Error);
}
