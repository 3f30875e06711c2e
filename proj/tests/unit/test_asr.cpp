// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "david/analyzer.hpp"
#include "david/asr.hpp"
#include "david/error.hpp"
#include "random_graph.hpp"

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

Tensor columns(const Tensor& x, std::int64_t begin, std::int64_t end) {
  const std::int64_t c = x.dim(0), n = x.dim(1);
  std::vector<float> v;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t j = begin; j < end; ++j) v.push_back(static_cast<float>(x.value(ch, j)));
  if (x.is_quantized()) return quantize(Tensor::from_floats({c, end - begin}, v), *x.quant());
  (void)n;
  return Tensor::from_floats({c, end - begin}, v);
}

Tensor stream_all(const GraphSpec& g, const Tensor& x, std::int64_t chunk) {
  AsrStream s(g);
  std::vector<float> rows;
  for (std::int64_t pos = 0; pos < x.dim(1); pos += chunk) {
    auto p = s.step(columns(x, pos, std::min(x.dim(1), pos + chunk)));
    rows.insert(rows.end(), p.floats().begin(), p.floats().end());
    CHECK(s.buffered_frames() <= s.receptive_field());
  }
  auto p = s.finish();
  rows.insert(rows.end(), p.floats().begin(), p.floats().end());
  const auto n = static_cast<std::int64_t>(rows.size()) / kAsrVocabSize;
  return Tensor::from_floats({n, kAsrVocabSize}, rows);
}

Tensor one_hot_rows(const std::vector<int>& ids, int v) {
  std::vector<float> p(ids.size() * static_cast<std::size_t>(v), 0.0f);
  for (std::size_t t = 0; t < ids.size(); ++t) p[t * static_cast<std::size_t>(v) + static_cast<std::size_t>(ids[t])] = 1.0f;
  return Tensor::from_floats({static_cast<std::int64_t>(ids.size()), v}, p);
}

}  // namespace

TEST_CASE("vocabulary") {
  const auto& v = asr_vocabulary();
  REQUIRE(v.size() == 29);
  CHECK(v[0] == "<blank>");
  CHECK(v[1] == "a");
  CHECK(v[26] == "z");
  CHECK(v[27] == " ");
  CHECK(v[28] == "'");
  CHECK(asr_symbols("Hey d'a") == std::vector<int>{8, 5, 25, 27, 4, 28, 1});
  CHECK(kind_of([] { asr_symbols("r2d2"); }) == ErrorKind::InvalidCharacter);
}

TEST_CASE("reference SpeechNet1 timing") {
  auto g = build_speechnet(reference_speechnet1_config(16));
  auto r = analyze(g, 40.0);
  const auto& o = r.output(kPosteriors);
  CHECK(o.receptive_field_frames == 133);
  CHECK(o.lookahead_frames == 52);
  CHECK(o.context_seconds == doctest::Approx(3.325));
  CHECK(o.latency_seconds == doctest::Approx(1.3));
  CHECK(o.shape[0] == 29);
}

TEST_CASE("config validation") {
  auto cfg = reference_speechnet1_config(8);
  SUBCASE("duplicate kernels") {
    cfg.blocks[1].paths[1].front().kernel = 3;
    for (auto& st : cfg.blocks[1].paths[1]) st.kernel = 3;
    CHECK(kind_of([&] { build_speechnet(cfg); }) == ErrorKind::ConfigError);
  }
  SUBCASE("single-stage path") {
    cfg.blocks[2].paths[0].pop_back();
    CHECK(kind_of([&] { build_speechnet(cfg); }) == ErrorKind::ConfigError);
  }
  SUBCASE("residual first block") {
    cfg.blocks[0].residual = true;
    CHECK(kind_of([&] { build_speechnet(cfg); }) == ErrorKind::ConfigError);
  }
  SUBCASE("head size") {
    cfg.head_classes = 30;
    CHECK(kind_of([&] { build_speechnet(cfg); }) == ErrorKind::ConfigError);
  }
  SUBCASE("one path is accepted with a warning") {
    for (auto& b : cfg.blocks) b.paths.resize(1);
    std::vector<std::string> warnings;
    auto g = build_speechnet(cfg, 0, &warnings);
    CHECK(warnings.size() == cfg.blocks.size());
    CHECK(g.layer(kPosteriors).kind == LayerKind::Softmax);
  }
}

TEST_CASE("streaming equals offline for float and quantized graphs") {
  std::mt19937 rng(99);
  auto g = build_speechnet(reference_speechnet1_config(8), 3);
  for (int trial = 0; trial < 3; ++trial) {
    const std::int64_t t = std::uniform_int_distribution<std::int64_t>(40, 160)(rng);
    auto x = testutil::random_tensor(rng, {64, t}, -2.0f, 2.0f);
    const Tensor off = offline_posteriors(g, x);
    REQUIRE(off.dim(0) == t);
    for (std::int64_t chunk : {std::int64_t{1}, std::int64_t{7}, t}) {
      CHECK(max_abs_diff(stream_all(g, x, chunk), off) <= 1e-5);
    }
    for (std::int64_t r = 0; r < t; ++r) {
      double sum = 0;
      for (int k = 0; k < 29; ++k) {
        CHECK(off.value(r, k) >= 0.0);
        sum += off.value(r, k);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  PortOptions opt;
  opt.calibration = {testutil::random_tensor(rng, {64, 100}, -2.0f, 2.0f)};
  auto q = port_model(g, Budget{}, 0.0, 40.0, opt).graph;
  auto x = quantize(testutil::random_tensor(rng, {64, 90}, -2.0f, 2.0f), *q.input.quant);
  const Tensor off = offline_posteriors(q, x);
  for (std::int64_t chunk : {1, 7, 90}) CHECK(stream_all(q, x, chunk) == off);
}

TEST_CASE("no output before the lookahead has arrived") {
  auto g = build_speechnet(reference_speechnet1_config(8), 1);
  std::mt19937 rng(5);
  AsrStream s(g);
  CHECK(s.lookahead() == 52);
  auto x = testutil::random_tensor(rng, {64, 60});
  CHECK(s.step(columns(x, 0, 52)).dim(0) == 0);
  CHECK(s.emitted() == 0);
  CHECK(s.step(columns(x, 52, 53)).dim(0) == 1);
}

TEST_CASE("SpeechNet2 consumes mu-law midpoints") {
  auto cfg = reference_speechnet2_config(8);
  auto m = make_asr_model(cfg, 4, "sn2");
  AudioBuffer a;
  std::mt19937 rng(8);
  std::uniform_real_distribution<float> d(-0.8f, 0.8f);
  for (int i = 0; i < 16000; ++i) a.samples.push_back(d(rng));
  auto x = asr_input(m, a);
  CHECK(x.dim(0) == 1);
  CHECK(x.dim(1) == 16000);
  for (float v : x.floats()) CHECK(v == static_cast<float>(mulaw_decode(mulaw_encode(v))));
  const Tensor off = offline_posteriors(m.graph, x);
  CHECK(off.dim(0) == 40);
  CHECK(max_abs_diff(stream_all(m.graph, x, 997), off) <= 1e-5);
}

TEST_CASE("greedy decode") {
  const std::vector<std::string> v3{"-", "a", "b"};
  CHECK(ctc_greedy_decode(one_hot_rows({0, 1, 1, 0, 2}, 3), v3) == "ab");
  CHECK(ctc_greedy_decode(one_hot_rows({1, 1}, 3), v3) == "a");
  CHECK(ctc_greedy_decode(one_hot_rows({1, 0, 1}, 3), v3) == "aa");
  // Ties go to the lowest index.
  CHECK(ctc_greedy_decode(Tensor::from_floats({1, 3}, {0.2f, 0.4f, 0.4f}), v3) == "a");
  for (int len = 1; len <= 6; ++len) {
    int total = 1;
    for (int i = 0; i < len; ++i) total *= 3;
    for (int code = 0; code < total; ++code) {
      std::vector<int> ids;
      for (int i = 0, c = code; i < len; ++i, c /= 3) ids.push_back(c % 3);
      std::string expect;
      int prev = -1;
      for (int s : ids) {
        if (s != prev && s != 0) expect += v3[static_cast<std::size_t>(s)];
        prev = s;
      }
      CHECK(ctc_greedy_decode(one_hot_rows(ids, 3), v3) == expect);
    }
  }
}

TEST_CASE("ctc forward score") {
  auto lp = Tensor::from_floats({2, 2}, {std::log(0.4f), std::log(0.6f), std::log(0.5f), std::log(0.5f)});
  CHECK(ctc_forward_score(lp, {1}) == doctest::Approx(0.8).epsilon(1e-7));
  CHECK(ctc_forward_score(lp, {1, 1}) == 0.0);
  CHECK(ctc_forward_score(lp, {}) == doctest::Approx(0.2).epsilon(1e-7));

  std::mt19937 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const int t_n = std::uniform_int_distribution<int>(1, 6)(rng);
    const int v = std::uniform_int_distribution<int>(2, 4)(rng);
    std::vector<double> probs(static_cast<std::size_t>(t_n * v));
    std::vector<float> logs;
    for (int t = 0; t < t_n; ++t) {
      double z = 0;
      for (int k = 0; k < v; ++k) z += probs[t * v + k] = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
      for (int k = 0; k < v; ++k) probs[t * v + k] /= z;
    }
    // Probabilities are rounded to float for the tensor; use those exact values.
    for (double p : probs) logs.push_back(static_cast<float>(std::log(p)));
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(static_cast<double>(logs[i]));
    const Tensor lt = Tensor::from_floats({t_n, v}, logs);

    std::map<std::vector<int>, double> by_target;
    int total = 1;
    for (int i = 0; i < t_n; ++i) total *= v;
    for (int code = 0; code < total; ++code) {
      std::vector<int> path, collapsed;
      double p = 1;
      for (int i = 0, c = code; i < t_n; ++i, c /= v) {
        path.push_back(c % v);
        p *= probs[static_cast<std::size_t>(i * v + c % v)];
      }
      int prev = -1;
      for (int s : path) {
        if (s != prev && s != 0) collapsed.push_back(s);
        prev = s;
      }
      by_target[collapsed] += p;
    }
    // Float rounding leaves each row summing to ~1; the alignments partition their product.
    double mass = 1;
    for (int t = 0; t < t_n; ++t) {
      double row = 0;
      for (int k = 0; k < v; ++k) row += probs[static_cast<std::size_t>(t * v + k)];
      mass *= row;
    }
    double sum = 0;
    for (const auto& [target, p] : by_target) {
      const double got = ctc_forward_score(lt, target);
      CHECK(std::abs(got - p) <= 1e-9);
      sum += got;
    }
    CHECK(sum <= mass + 1e-9);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("tone model transcribes tone-coded speech") {
  auto m = tone_asr_model();
  auto r = analyze(m.graph, 40.0).output(kPosteriors);
  CHECK(r.receptive_field_frames == 133);
  CHECK(r.lookahead_frames == 52);
  auto tr = transcribe(m, tone_audio("hey david"), 5);
  CHECK(tr.text == "hey david");
  CHECK(tr.char_frames.size() == tr.text.size());
  CHECK(transcribe(m, tone_audio("it's all good"), 0).text == "it's all good");
}

TEST_CASE("model bundle JSON round trip") {
  auto m = tone_asr_model();
  auto back = asr_model_from_json(Json::parse(to_json(m).dump()));
  CHECK(to_json(back) == to_json(m));
  CHECK(transcribe(back, tone_audio("ok")).text == "ok");
}
