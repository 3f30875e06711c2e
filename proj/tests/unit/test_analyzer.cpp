// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <functional>
#include <random>

#include "david/analyzer.hpp"
#include "david/error.hpp"
#include "david/executor.hpp"
#include "random_graph.hpp"

using namespace david;

namespace {

GraphSpec chain(std::vector<LayerSpec> layers, std::int64_t channels = 1, std::int64_t t = 32) {
  GraphSpec g;
  g.input.shape = {channels, t};
  g.input.time_axis = 1;
  g.input.frame_rate_hz = 40.0;
  g.outputs = {layers.back().id};
  g.layers = std::move(layers);
  return g;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("dependency_interval examples") {
  std::mt19937 rng(1);
  auto one = chain({testutil::conv(rng, "c", kGraphInput, 1, 1, 3, 1, 1, 1, 1)});
  CHECK(dependency_interval(one, "c", 5) == IndexInterval{4, 6});
  CHECK(impulse_probe(one, "c", 5, 20) == IndexInterval{4, 6});
  CHECK(dependency_interval(one, "c", 0, 20) == IndexInterval{0, 1});

  auto two = chain({testutil::conv(rng, "c1", kGraphInput, 1, 1, 3, 1, 1, 1, 1),
                    testutil::conv(rng, "c2", "c1", 1, 1, 3, 1, 1, 1, 1)});
  CHECK(dependency_interval(two, "c2", 10).width() == 5);
  CHECK(impulse_probe(two, "c2", 10, 30).width() == 5);

  auto par = chain({testutil::conv(rng, "p3", kGraphInput, 1, 1, 3, 1, 1, 1, 1),
                    testutil::conv(rng, "p7", kGraphInput, 1, 1, 7, 1, 1, 3, 3),
                    testutil::simple("sum", LayerKind::ResidualAdd, {"p3", "p7"})});
  CHECK(dependency_interval(par, "sum", 10).width() == 7);
  CHECK(impulse_probe(par, "sum", 10, 30).width() == 7);

  CHECK(kind_of([&] { dependency_interval(par, "p3", 1); }) == ErrorKind::UnknownOutput);
  CHECK(kind_of([&] { impulse_probe(par, "nope", 1, 10); }) == ErrorKind::UnknownOutput);
}

TEST_CASE("dependency_interval equals impulse probe on random graphs") {
  std::mt19937 rng(1234);
  for (int trial = 0; trial < 30; ++trial) {
    auto g = testutil::random_probe_graph(rng);
    const std::string out = g.outputs.front();
    const std::int64_t len = 160;
    const auto out_len = g.infer_shapes({1, len}).at(out).back();
    for (std::int64_t o : {std::int64_t{0}, out_len / 2, out_len - 1}) {
      CAPTURE(trial);
      CAPTURE(o);
      CHECK(dependency_interval(g, out, o, len) == impulse_probe(g, out, o, len));
    }
  }
}

TEST_CASE("analyze identity and MAC counts") {
  auto id = chain({testutil::simple("r", LayerKind::Relu, {kGraphInput})});
  auto r = analyze(id, 40.0);
  CHECK(r.output("r").receptive_field_frames == 1);
  CHECK(r.output("r").lookahead_frames == 0);
  CHECK(r.output("r").latency_seconds == 0.0);

  std::mt19937 rng(2);
  auto c = chain({testutil::conv(rng, "c", kGraphInput, 2, 4, 3, 1, 1, 1, 1)}, 2, 5);
  auto rc = analyze(c, 40.0);
  CHECK(rc.layers[0].macs == 120);
  CHECK(rc.total_macs == 120);
  CHECK(rc.macs_per_second == doctest::Approx(3 * 2 * 4 * 40.0));
  CHECK(rc.output("c").receptive_field_frames == 3);
  CHECK(rc.output("c").lookahead_frames == 1);
  CHECK(rc.output("c").context_seconds == doctest::Approx(3 * 0.025));
}

TEST_CASE("lookahead with stride and upsampling") {
  std::mt19937 rng(3);
  // Stride 2, K 4, pads 1/2: output o reads [2o-1, 2o+2], aligned frame 2o.
  auto s = chain({testutil::conv(rng, "c", kGraphInput, 1, 1, 4, 2, 1, 1, 2)});
  auto r = analyze(s, 100.0);
  CHECK(r.output("c").receptive_field_frames == 4);
  CHECK(r.output("c").lookahead_frames == 2);
  auto up = testutil::simple("u", LayerKind::NearestUpsample, {"c"});
  up.factor = 2;
  auto su = chain({testutil::conv(rng, "c", kGraphInput, 1, 1, 4, 2, 1, 1, 2), up});
  CHECK(analyze(su, 100.0).output("u").lookahead_frames == 2);
}

TEST_CASE("estimate_power") {
  Budget b;
  CHECK(estimate_power(1.375e12, b) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(estimate_power(2.75e12, b) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(estimate_power(0.0, b) == 0.0);
  CHECK(estimate_power(2e11, b) == doctest::Approx(2 * estimate_power(1e11, b)));
  b.idle_floor_mw = 2.0;
  CHECK(estimate_power(0.0, b) == 2.0);
  CHECK(estimate_power(1.375e12, b) == doctest::Approx(50.0));
}

TEST_CASE("port_model pruning and sparsity") {
  std::mt19937 rng(4);
  auto c = testutil::conv(rng, "c", kGraphInput, 2, 2, 3, 1, 1, 1, 1);
  // 12 weights, exactly 3 with |w| < 0.1.
  c.weights = Tensor::from_floats({2, 2, 3}, {0.05f, -0.02f, 0.09f, 0.5f, -0.4f, 0.3f, 0.7f, -0.6f, 0.2f, 0.25f, -0.35f, 0.45f});
  auto g = chain({c, testutil::simple("r", LayerKind::Relu, {"c"})}, 2, 16);

  auto p0 = port_model(g, Budget{}, 0.0, 40.0);
  CHECK(p0.report.layers[0].sparsity == 0.0);
  CHECK(p0.graph.is_quantized());

  auto p1 = port_model(g, Budget{}, 0.1, 40.0);
  CHECK(p1.report.layers[0].zero_weights == 3);
  CHECK(p1.report.layers[0].sparsity == doctest::Approx(0.25));

  CHECK(kind_of([&] { port_model(g, Budget{}, 1.0, 40.0); }) == ErrorKind::DegenerateModel);

  Budget tight;
  tight.power_budget_mw = 1e-12;
  CHECK(kind_of([&] { port_model(g, tight, 0.0, 40.0); }) == ErrorKind::BudgetExceeded);
  CHECK_FALSE(port_model_unchecked(g, tight, 0.0, 40.0).report.budget_ok);
}

TEST_CASE("port_model is idempotent") {
  std::mt19937 rng(5);
  auto g = testutil::random_graph(rng, 3, 5);
  auto once = port_model(g, Budget{}, 0.2, 40.0);
  auto twice = port_model(once.graph, Budget{}, 0.2, 40.0);
  CHECK(graph_to_json(once.graph) == graph_to_json(twice.graph));
  for (std::size_t i = 0; i < once.report.layers.size(); ++i) {
    CHECK(once.report.layers[i].zero_weights == twice.report.layers[i].zero_weights);
  }
}

TEST_CASE("quantized execution tracks float within 2 * scale * depth") {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t ch = 2;
    auto g = testutil::random_graph(rng, ch, 4, false);
    auto x = testutil::random_tensor(rng, {ch, 32});
    PortOptions opt;
    opt.calibration = {x};
    auto p = port_model(g, Budget{}, 0.0, 40.0, opt);
    const std::string out = g.outputs.front();
    const Tensor yf = graph_forward(g, x).at(out);
    const Tensor yq = graph_forward(p.graph, x).at(out);
    REQUIRE(yq.is_quantized());
    const double bound = 2.0 * p.graph.layer(out).out_quant->scale * static_cast<double>(p.graph.layers.size());
    CAPTURE(trial);
    CHECK(max_abs_diff(dequantize(yq), yf) <= bound);
  }
}

TEST_CASE("report JSON") {
  std::mt19937 rng(7);
  auto g = chain({testutil::conv(rng, "c", kGraphInput, 1, 1, 3, 1, 1, 1, 1)});
  auto j = to_json(analyze(g, 40.0));
  CHECK(j["outputs"][0]["receptive_field_frames"] == 3);
  CHECK(j["budget"]["tops_per_watt"] == 55.0);
}
