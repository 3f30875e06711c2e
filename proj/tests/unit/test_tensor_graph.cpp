// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "david/error.hpp"
#include "david/executor.hpp"
#include "david/ops.hpp"
#include "david/serialize.hpp"
#include "oracle.hpp"
#include "random_graph.hpp"

using namespace david;

namespace {

Tensor row(std::vector<float> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::from_floats({1, n}, std::move(v));
}

std::vector<float> as_vec(const Tensor& t) { return {t.floats().begin(), t.floats().end()}; }

oracle::Mat to_mat(const Tensor& t) {
  oracle::Mat m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (std::int64_t c = 0; c < t.dim(0); ++c)
    for (std::int64_t j = 0; j < t.dim(1); ++j) m[c][j] = t.value(c, j);
  return m;
}

std::vector<double> to_d(std::span<const float> s) { return {s.begin(), s.end()}; }

double mat_diff(const oracle::Mat& a, const Tensor& t) {
  REQUIRE(static_cast<std::int64_t>(a.size()) == t.dim(0));
  double worst = 0;
  for (std::int64_t c = 0; c < t.dim(0); ++c) {
    REQUIRE(static_cast<std::int64_t>(a[c].size()) == t.dim(1));
    for (std::int64_t j = 0; j < t.dim(1); ++j) worst = std::max(worst, std::abs(a[c][j] - t.value(c, j)));
  }
  return worst;
}

}  // namespace

TEST_CASE("conv1d examples") {
  const float id[] = {0, 1, 0};
  const float box[] = {1, 1, 1};
  Conv1dParams p{1, 1, 1, 1};
  CHECK(as_vec(conv1d_forward(row({1, 2, 3}), Tensor::from_floats({1, 1, 3}, {id, id + 3}), {}, p)) ==
        std::vector<float>{1, 2, 3});
  CHECK(as_vec(conv1d_forward(row({1, 2, 3}), Tensor::from_floats({1, 1, 3}, {box, box + 3}), {}, p)) ==
        std::vector<float>{3, 6, 5});
  p.stride = 2;
  CHECK(conv1d_forward(row({1, 2, 3, 4, 5}), Tensor::from_floats({1, 1, 3}, {box, box + 3}), {}, p).dim(1) == 3);
}

TEST_CASE("conv1d channel mismatch") {
  CHECK_THROWS_AS(conv1d_forward(Tensor::zeros({2, 4}), Tensor::zeros({1, 3, 1}), {}, {}), Error);
  try {
    conv1d_forward(Tensor::zeros({2, 4}), Tensor::zeros({1, 3, 1}), {}, {});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("conv1d output length matches brute-force window count") {
  for (int k = 1; k <= 7; ++k)
    for (int s = 1; s <= 3; ++s)
      for (int d = 1; d <= 3; ++d)
        for (int pl = 0; pl <= 7; pl += 3)
          for (int pr = 0; pr <= 7; pr += 2) {
            const int t = 9;
            int count = 0;
            for (int start = -pl; start + d * (k - 1) <= t - 1 + pr; start += s) ++count;
            if (count == 0) continue;
            CHECK(conv_output_length(t, k, s, d, pl, pr) == count);
            Conv1dParams p{s, d, pl, pr};
            auto y = conv1d_forward(Tensor::zeros({1, t}), Tensor::zeros({1, 1, k}), {}, p);
            CHECK(y.dim(1) == count);
          }
}

TEST_CASE("conv1d matches naive oracle") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> kd(1, 6), sd(1, 3), dd(1, 3), pd(0, 4), cd(1, 4);
    const int ci = cd(rng), co = cd(rng), k = kd(rng), s = sd(rng), d = dd(rng), pl = pd(rng), pr = pd(rng);
    const int t = d * (k - 1) + 1 + 7;
    auto x = testutil::random_tensor(rng, {ci, t});
    auto w = testutil::random_tensor(rng, {co, ci, k});
    auto b = testutil::random_tensor(rng, {co});
    auto y = conv1d_forward(x, w, b.floats(), {s, d, pl, pr});
    auto ref = oracle::conv1d(to_mat(x), to_d(w.floats()), to_d(b.floats()), co, k, s, d, pl, pr);
    CHECK(mat_diff(ref, y) <= 1e-6);
  }
}

TEST_CASE("quantize examples") {
  const QuantParams qp{0.1, 0};
  CHECK(quantize_value(0.0, qp) == 0);
  CHECK(quantize_value(0.25, qp) == 3);
  CHECK(quantize_value(-0.25, qp) == -3);
  CHECK(quantize_value(20.0, qp) == 127);
  CHECK(quantize_value(-20.0, qp) == -128);
  CHECK(quantize_value(0.0, QuantParams{0.5, -7}) == -7);
  auto t = quantize(Tensor::from_floats({3}, {0.0f, 1.0f, -1.0f}), QuantParams{0.5, 10});
  CHECK(std::vector<std::int8_t>(t.codes().begin(), t.codes().end()) == std::vector<std::int8_t>{10, 12, 8});
  CHECK(as_vec(dequantize(t)) == std::vector<float>{0.0f, 1.0f, -1.0f});
  CHECK_THROWS_AS(QuantParams({0.0, 0}).validate(), Error);
}

TEST_CASE("fold_batchnorm") {
  std::mt19937 rng(3);
  auto c = testutil::conv(rng, "c", kGraphInput, 3, 4, 3, 1, 1, 1, 1);

  SUBCASE("identity normalization leaves the conv unchanged") {
    BatchNormParams bn{{1, 1, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}, {1, 1, 1, 1}, 0.0};
    auto f = fold_batchnorm(c, bn);
    CHECK(f.weights == c.weights);
    CHECK(f.bias == c.bias);
  }
  SUBCASE("mean equal to bias gives zero bias") {
    BatchNormParams bn{{1, 1, 1, 1}, {0, 0, 0, 0}, c.bias, {1, 1, 1, 1}, 0.0};
    auto f = fold_batchnorm(c, bn);
    for (float b : f.bias) CHECK(b == 0.0f);
  }
  SUBCASE("non-positive variance") {
    BatchNormParams bn{{1, 1, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}, {1, 0, 1, 1}, 0.0};
    try {
      fold_batchnorm(c, bn);
      FAIL("expected NumericalError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NumericalError);
    }
  }
  SUBCASE("folded forward equals composition") {
    for (int trial = 0; trial < 10; ++trial) {
      auto conv = testutil::conv(rng, "c", kGraphInput, 3, 4, 3, 1, 1, 1, 1);
      BatchNormParams bn;
      for (int i = 0; i < 4; ++i) {
        bn.gamma.push_back(std::uniform_real_distribution<float>(0.5f, 2.0f)(rng));
        bn.beta.push_back(std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng));
        bn.mean.push_back(std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng));
        bn.var.push_back(std::uniform_real_distribution<float>(0.2f, 3.0f)(rng));
      }
      auto x = testutil::random_tensor(rng, {3, 16});
      Conv1dParams p{1, 1, 1, 1};
      auto composed = batchnorm_forward(conv1d_forward(x, conv.weights, conv.bias, p), bn);
      auto f = fold_batchnorm(conv, bn);
      auto folded = conv1d_forward(x, f.weights, f.bias, p);
      CHECK(max_abs_diff(composed, folded) <= 1e-6);
    }
  }
}

TEST_CASE("fold_batchnorms rewrites the graph") {
  std::mt19937 rng(5);
  GraphSpec g;
  g.input.shape = {2, 10};
  g.input.time_axis = 1;
  g.layers.push_back(testutil::conv(rng, "c", kGraphInput, 2, 2, 3, 1, 1, 1, 1));
  auto bn = testutil::simple("bn", LayerKind::BatchNorm, {"c"});
  bn.gamma = {1.5f, 0.5f};
  bn.beta = {0.1f, -0.2f};
  bn.mean = {0.3f, 0.0f};
  bn.var = {2.0f, 0.5f};
  g.layers.push_back(bn);
  g.layers.push_back(testutil::simple("r", LayerKind::Relu, {"bn"}));
  g.outputs = {"r"};
  auto f = fold_batchnorms(g);
  REQUIRE(f.layers.size() == 2);
  CHECK(f.layers[0].id == "bn");
  CHECK(f.layers[0].kind == LayerKind::Conv1d);
  auto x = testutil::random_tensor(rng, {2, 10});
  CHECK(max_abs_diff(graph_forward(g, x).at("r"), graph_forward(f, x).at("r")) <= 1e-6);
}

TEST_CASE("graph_forward trivial graphs") {
  GraphSpec g;
  g.input.shape = {1, 2};
  g.input.time_axis = 1;
  g.layers.push_back(testutil::simple("r", LayerKind::Relu, {kGraphInput}));
  g.outputs = {"r"};
  CHECK(as_vec(graph_forward(g, row({-1, 2})).at("r")) == std::vector<float>{0, 2});

  g.layers.push_back(testutil::simple("twice", LayerKind::ResidualAdd, {kGraphInput, kGraphInput}));
  g.outputs = {"twice"};
  CHECK(as_vec(graph_forward(g, row({-1.5f, 2})).at("twice")) == std::vector<float>{-3, 4});
}

TEST_CASE("graph_forward matches per-op composition") {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    GraphSpec g;
    g.input.shape = {3, 20};
    g.input.time_axis = 1;
    auto c1 = testutil::conv(rng, "c1", kGraphInput, 3, 4, 3, 1, 2, 2, 2);
    auto c2 = testutil::conv(rng, "c2", "r1", 4, 4, 5, 1, 1, 2, 2);
    g.layers = {c1, testutil::simple("r1", LayerKind::Relu, {"c1"}), c2,
                testutil::simple("sum", LayerKind::ResidualAdd, {"r1", "c2"})};
    g.outputs = {"sum"};
    auto x = testutil::random_tensor(rng, {3, 20});
    auto h1 = oracle::relu(oracle::conv1d(to_mat(x), to_d(c1.weights.floats()), to_d(c1.bias), 4, 3, 1, 2, 2, 2));
    auto h2 = oracle::conv1d(h1, to_d(c2.weights.floats()), to_d(c2.bias), 4, 5, 1, 1, 2, 2);
    CHECK(mat_diff(oracle::add(h1, h2), graph_forward(g, x).at("sum")) <= 1e-6);
  }
}

TEST_CASE("graph_forward is deterministic") {
  std::mt19937 rng(8);
  auto g = testutil::random_graph(rng, 3, 6);
  auto x = testutil::random_tensor(rng, {3, 32});
  auto a = graph_forward(g, x);
  auto b = graph_forward(g, x);
  CHECK(a == b);
}

TEST_CASE("graph validation") {
  GraphSpec g;
  g.input.shape = {1, 4};
  g.input.time_axis = 1;
  g.layers.push_back(testutil::simple("r", LayerKind::Relu, {"missing"}));
  g.outputs = {"r"};
  CHECK_THROWS_AS(g.validate(), Error);
  CHECK_THROWS_AS(parse_layer_kind("lstm"), Error);
  try {
    parse_layer_kind("lstm");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownLayerKind);
  }
}

TEST_CASE("window and streaming execution equal offline execution") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    auto g = testutil::random_graph(rng, 2, 5);
    auto x = testutil::random_tensor(rng, {2, 40});
    const auto offline = graph_forward(g, x);
    const std::string out = g.outputs.front();
    const Tensor& ref = offline.at(out);

    StreamingExecutor s(g);
    std::vector<float> got;
    std::vector<Tensor> parts;
    std::int64_t pos = 0;
    std::uniform_int_distribution<int> chunk(0, 5);
    while (pos < 40) {
      const std::int64_t n = std::min<std::int64_t>(chunk(rng), 40 - pos);
      std::vector<float> buf;
      for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t j = 0; j < n; ++j) buf.push_back(x.floats()[c * 40 + pos + j]);
      parts.push_back(s.push(Tensor::from_floats({2, n}, buf)).at(out));
      pos += n;
    }
    parts.push_back(s.finish().at(out));
    std::int64_t cols = 0;
    for (const auto& p : parts) cols += p.dim(1);
    REQUIRE(cols == ref.dim(1));
    std::int64_t j0 = 0;
    for (const auto& p : parts) {
      for (std::int64_t c = 0; c < p.dim(0); ++c)
        for (std::int64_t j = 0; j < p.dim(1); ++j) CHECK(p.value(c, j) == ref.value(c, j0 + j));
      j0 += p.dim(1);
    }
  }
}

TEST_CASE("graph JSON round trip") {
  std::mt19937 rng(2);
  auto g = testutil::random_graph(rng, 2, 5);
  auto back = graph_from_json(Json::parse(graph_to_json(g).dump()));
  CHECK(graph_to_json(back) == graph_to_json(g));
  auto x = testutil::random_tensor(rng, {2, 32});
  CHECK(graph_forward(g, x) == graph_forward(back, x));
  const std::uint8_t raw[] = {'M', 'a', 'n', 'y'};
  CHECK(base64_encode(raw) == "TWFueQ==");
  CHECK(base64_decode("TWFueQ==") == std::vector<std::uint8_t>(raw, raw + 4));
}
