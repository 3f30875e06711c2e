// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "david/analyzer.hpp"
#include "david/dsp.hpp"
#include "david/error.hpp"
#include "david/tts.hpp"

using namespace david;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

TTSConfig small_config() {
  TTSConfig c;
  c.encoder = {{3, 8}, {3, 8}};
  c.duration_predictor = {{3, 4}, {3, 1}};
  c.decoder = {{3, 8}, {3, 64}};
  c.vocoder_pre_channels = 8;
  c.vocoder = {{5, 4}, {5, 4}, {4, 4}, {4, 2}};
  return c;
}

const TtsModel& small_model() {
  static const TtsModel m = make_tts_model(small_config(), 7);
  return m;
}

Tensor random_mel(std::int64_t bands, std::int64_t t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<float> v(static_cast<std::size_t>(bands * t));
  for (auto& x : v) x = static_cast<float>(n(rng));
  return Tensor::from_floats({bands, t}, v);
}

}  // namespace

TEST_CASE("text_to_ids maps and validates") {
  CHECK(text_to_ids("Hi it's") == std::vector<int>{8, 9, 27, 9, 20, 28, 19});
  CHECK(text_vocabulary().size() == 29);
  CHECK(text_vocabulary()[kPad] == "<pad>");
  CHECK(kind_of([] { text_to_ids(""); }) == ErrorKind::EmptyInput);
  CHECK(kind_of([] { text_to_ids("hi!"); }) == ErrorKind::InvalidCharacter);
}

TEST_CASE("length_regulate repeats columns") {
  const Tensor e = Tensor::from_floats({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = length_regulate(e, {2, 0, 1});
  REQUIRE(r.shape() == Shape{2, 3});
  CHECK(std::vector<float>(r.floats().begin(), r.floats().end()) == std::vector<float>{1, 1, 3, 4, 4, 6});
  CHECK(kind_of([&] { length_regulate(e, {0, 0, 0}); }) == ErrorKind::EmptyOutput);
  CHECK(kind_of([&] { length_regulate(e, {1, 1}); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("config validation") {
  TTSConfig c = small_config();
  c.vocoder[0].upsample = 4;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::ConfigError);
  c = small_config();
  c.decoder.back().channels = 32;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::ConfigError);
  CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("synthesize length follows durations") {
  const auto& m = small_model();
  const auto s = synthesize("hello there", m);
  std::int64_t total = 0;
  for (auto d : s.durations) {
    CHECK(d >= 1);
    total += d;
  }
  CHECK(s.mel_frames == total);
  CHECK(static_cast<std::int64_t>(s.audio.samples.size()) == total * 400);

  const auto o = synthesize("hey", m, std::vector<std::int64_t>{2, 5, 3});
  CHECK(o.durations == std::vector<std::int64_t>{2, 5, 3});
  CHECK(o.audio.samples.size() == 10u * 400u);

  FeatureConfig fc;
  const Tensor lm = logmel(s.audio, fc);
  CHECK(std::llabs(lm.dim(1) - total) <= 1);
  CHECK(kind_of([&] { synthesize("hey", m, std::vector<std::int64_t>{1, 1}); }) == ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { synthesize("hey", m, std::vector<std::int64_t>{0, 0, 0}); }) == ErrorKind::EmptyOutput);
}

double worst_diff(const std::vector<float>& a, const std::vector<float>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - b[i]));
  return worst;
}

TEST_CASE("sliding vocoder matches full inference for every chunk size") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 4; ++trial) {
    TTSConfig c = small_config();
    const std::int64_t k1 = std::uniform_int_distribution<std::int64_t>(1, 3)(rng) * 2 + 1;
    const std::int64_t k2 = std::uniform_int_distribution<std::int64_t>(1, 3)(rng) * 2 + 1;
    c.vocoder = {{5, 4, k1}, {5, 4, k2}, {4, 4, 3}, {4, 2, k1}};
    const TtsModel m = make_tts_model(c, 100 + static_cast<std::uint64_t>(trial));
    const std::int64_t t = std::uniform_int_distribution<std::int64_t>(6, 14)(rng);
    const Tensor mel = random_mel(64, t, 3 + static_cast<std::uint64_t>(trial));
    ActivationMeter full_meter;
    const auto full = vocoder_full(mel, m, &full_meter);
    const auto ctx = vocoder_context(m.vocoder);
    CHECK(ctx.past > 0);
    CHECK(ctx.future > 0);

    TtsModel q = m;
    PortOptions opt;
    opt.calibration = {mel};
    q.vocoder = port_model_unchecked(m.vocoder, Budget{}, 0.0, 40.0, opt).graph;
    REQUIRE(q.vocoder.is_quantized());
    const auto qfull = vocoder_full(mel, q);

    for (std::int64_t chunk = 1; chunk <= t; ++chunk) {
      ActivationMeter meter;
      CHECK(worst_diff(vocoder_sliding(mel, m, chunk, &meter), full) <= 1e-6);
      if (t > chunk + ctx.past + ctx.future) CHECK(meter.peak < full_meter.peak);
      CHECK(vocoder_sliding(mel, q, chunk) == qfull);
    }
  }
}

TEST_CASE("identity vocoder upsamples the mel") {
  TtsModel m = small_model();
  m.cfg.mel_bands = 1;
  GraphSpec g;
  g.input.shape = {1, 8};
  g.input.time_axis = 1;
  g.input.frame_rate_hz = 40;
  std::string cur = kGraphInput;
  const std::int64_t factors[] = {5, 5, 4, 4};
  for (int i = 0; i < 4; ++i) {
    LayerSpec l;
    l.id = i == 3 ? kWaveOut : "up" + std::to_string(i);
    l.kind = LayerKind::NearestUpsample;
    l.inputs = {cur};
    l.factor = factors[i];
    cur = l.id;
    g.layers.push_back(l);
  }
  g.outputs = {kWaveOut};
  g.validate();
  m.vocoder = g;
  const Tensor mel = random_mel(1, 6, 9);
  for (std::int64_t chunk : {1, 4, 6}) {
    const auto w = vocoder_sliding(mel, m, chunk);
    REQUIRE(w.size() == 2400u);
    for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(w[i] == mel.floats()[i / 400]);
  }
}

TEST_CASE("tts bundle round-trips through json") {
  const auto& m = small_model();
  const TtsModel r = tts_model_from_json(Json::parse(to_json(m).dump()));
  const auto a = synthesize("ok", m);
  const auto b = synthesize("ok", r);
  CHECK(a.audio.samples == b.audio.samples);
  CHECK(kind_of([] { tts_model_from_json(Json{{"kind", "asr"}}); }) == ErrorKind::ParseError);
}
