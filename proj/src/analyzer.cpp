// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "david/error.hpp"
#include "david/executor.hpp"
#include "david/ops.hpp"

namespace david {

namespace {

struct DependencySets {
  std::vector<std::int64_t> input;  // sorted, unique
  bool clipped = false;
};

void sort_unique(std::vector<std::int64_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

std::size_t output_index(const GraphSpec& g, const std::string& output) {
  if (std::find(g.outputs.begin(), g.outputs.end(), output) == g.outputs.end()) {
    raise(ErrorKind::UnknownOutput, "'" + output + "' is not a graph output");
  }
  return *g.index_of(output);
}

// Exact set propagation from one output frame back to the input. Layer
// lengths (for right-edge clipping) are only known with a finite input.
DependencySets propagate(const GraphSpec& g, std::size_t out_idx, std::int64_t index,
                         const std::optional<std::map<std::string, Shape>>& shapes) {
  const std::size_t n = g.layers.size();
  std::vector<std::vector<std::int64_t>> need(n + 1);  // slot n is the graph input
  auto slot = [&](const std::string& id) { return id == kGraphInput ? n : *g.index_of(id); };
  auto length_of = [&](const std::string& id) -> std::int64_t {
    return shapes ? shapes->at(id).back() : std::numeric_limits<std::int64_t>::max();
  };
  DependencySets result;
  need[out_idx].push_back(index);
  for (std::size_t li = out_idx + 1; li-- > 0;) {
    auto& mine = need[li];
    if (mine.empty()) continue;
    sort_unique(mine);
    const LayerSpec& l = g.layers[li];
    for (const auto& src : l.inputs) {
      const std::int64_t len = length_of(src);
      auto& dst = need[slot(src)];
      auto put = [&](std::int64_t i) {
        if (i < 0 || i >= len) {
          result.clipped = true;
        } else {
          dst.push_back(i);
        }
      };
      for (std::int64_t o : mine) {
        switch (l.kind) {
          case LayerKind::Conv1d:
            for (std::int64_t k = 0; k < l.kernel; ++k) put(o * l.stride - l.pad_left + k * l.dilation);
            break;
          case LayerKind::NearestUpsample:
            put(o / l.factor);
            break;
          case LayerKind::Conv2d:
            raise(ErrorKind::ConfigError, "dependency analysis needs a time-axis graph");
          default:
            put(o);
            break;
        }
      }
    }
    if (li == 0) break;
  }
  result.input = std::move(need[n]);
  sort_unique(result.input);
  return result;
}

IndexInterval hull(const std::vector<std::int64_t>& s) {
  if (s.empty()) return {};
  return {s.front(), s.back()};
}

// Output frames per input frame along the first-input chain, as U / S.
std::pair<std::int64_t, std::int64_t> rate_of(const GraphSpec& g, std::size_t idx) {
  std::int64_t up = 1, down = 1;
  std::string cur = g.layers[idx].id;
  while (cur != kGraphInput) {
    const LayerSpec& l = g.layer(cur);
    if (l.kind == LayerKind::Conv1d) down *= l.stride;
    if (l.kind == LayerKind::NearestUpsample) up *= l.factor;
    cur = l.inputs.front();
  }
  const std::int64_t d = std::gcd(up, down);
  return {up / d, down / d};
}

std::int64_t layer_macs(const LayerSpec& l, const Shape& out) {
  switch (l.kind) {
    case LayerKind::Conv1d:
      return l.kernel * l.in_channels * l.out_channels * out[1];
    case LayerKind::Conv2d:
      return l.kernel_h * l.kernel * l.in_channels * l.out_channels * out[1] * out[2];
    case LayerKind::Dense:
      return l.in_channels * out[0] * (shape_numel(out) / std::max<std::int64_t>(out[0], 1));
    default:
      return 0;
  }
}

std::int64_t macs_per_column(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv1d:
      return l.kernel * l.in_channels * l.out_channels;
    case LayerKind::Dense:
      return l.in_channels * l.out_channels;
    default:
      return 0;
  }
}

GraphSpec structural_copy(const GraphSpec& g, std::int64_t input_length) {
  GraphSpec s;
  s.input.shape = {1, input_length};
  s.input.time_axis = 1;
  s.input.frame_rate_hz = g.input.frame_rate_hz;
  for (const auto& src : g.layers) {
    LayerSpec l;
    l.id = src.id;
    l.inputs = src.inputs;
    switch (src.kind) {
      case LayerKind::Conv1d:
        l = src;
        l.in_channels = l.out_channels = 1;
        l.weights = Tensor::from_floats({1, 1, src.kernel}, std::vector<float>(static_cast<std::size_t>(src.kernel), 1.0f));
        l.bias.clear();
        break;
      case LayerKind::Dense:
        l.kind = LayerKind::Dense;
        l.in_channels = l.out_channels = 1;
        l.weights = Tensor::from_floats({1, 1}, {1.0f});
        break;
      case LayerKind::NearestUpsample:
        l.kind = src.kind;
        l.factor = src.factor;
        break;
      case LayerKind::ResidualAdd:
      case LayerKind::ConcatChannels:
        l.kind = LayerKind::ResidualAdd;
        break;
      case LayerKind::Conv2d:
        raise(ErrorKind::ConfigError, "impulse probe needs a time-axis graph");
      default:
        l.kind = LayerKind::Relu;  // identity on the non-negative probe values
        break;
    }
    l.out_quant.reset();
    s.layers.push_back(std::move(l));
  }
  s.outputs = g.outputs;
  return s;
}

}  // namespace

void Budget::validate() const {
  if (!(tops_per_watt > 0) || !(power_budget_mw > 0) || ops_per_mac <= 0 || !(idle_floor_mw >= 0)) {
    raise(ErrorKind::ConfigError, "budget fields must be positive (idle floor non-negative)");
  }
}

IndexInterval dependency_interval(const GraphSpec& g, const std::string& output, std::int64_t index,
                                  std::optional<std::int64_t> input_length) {
  if (!g.has_time_axis()) raise(ErrorKind::ConfigError, "dependency analysis needs a time-axis graph");
  const std::size_t idx = output_index(g, output);
  std::optional<std::map<std::string, Shape>> shapes;
  if (input_length) shapes = g.infer_shapes({g.input.shape[0], *input_length});
  return hull(propagate(g, idx, index, shapes).input);
}

IndexInterval impulse_probe(const GraphSpec& g, const std::string& output, std::int64_t index,
                            std::int64_t input_length) {
  if (!g.has_time_axis()) raise(ErrorKind::ConfigError, "impulse probe needs a time-axis graph");
  output_index(g, output);
  GraphSpec s = structural_copy(g, input_length);
  s.outputs = {output};
  s.validate();
  const auto out_len = s.infer_shapes(s.input.shape).at(output).back();
  if (index < 0 || index >= out_len) {
    raise(ErrorKind::ConfigError, "output frame " + std::to_string(index) + " outside [0, " +
                                      std::to_string(out_len) + ") for this input length");
  }
  IndexInterval iv;
  std::vector<float> x(static_cast<std::size_t>(input_length), 0.0f);
  for (std::int64_t i = 0; i < input_length; ++i) {
    x[static_cast<std::size_t>(i)] = 1.0f;
    const Tensor y = graph_forward(s, Tensor::from_floats({1, input_length}, x)).at(output);
    x[static_cast<std::size_t>(i)] = 0.0f;
    if (y.floats()[static_cast<std::size_t>(index)] != 0.0f) {
      if (iv.empty()) iv.lo = i;
      iv.hi = i;
    }
  }
  return iv;
}

double estimate_power(double macs_per_second, const Budget& budget) {
  const double mw = macs_per_second * budget.ops_per_mac / (budget.tops_per_watt * 1e12) * 1000.0;
  return std::max(budget.idle_floor_mw, mw);
}

const OutputAnalysis& AnalysisReport::output(const std::string& id) const {
  for (const auto& o : outputs) {
    if (o.id == id) return o;
  }
  raise(ErrorKind::UnknownOutput, "no analysis for output '" + id + "'");
}

AnalysisReport analyze(const GraphSpec& g, const Budget& budget) { return analyze(g, g.input.frame_rate_hz, budget); }

AnalysisReport analyze(const GraphSpec& g, double frame_rate_hz, const Budget& budget) {
  g.validate();
  budget.validate();
  if (!(frame_rate_hz > 0)) raise(ErrorKind::ConfigError, "frame rate must be positive");
  AnalysisReport r;
  r.frame_rate_hz = frame_rate_hz;
  r.budget = budget;
  const auto shapes = g.infer_shapes(g.input.shape);
  const bool timed = g.has_time_axis();

  double per_frame = 0.0;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    LayerAnalysis la{l.id, l.kind, shapes.at(l.id), layer_macs(l, shapes.at(l.id)), 0.0};
    if (timed) {
      const auto [up, down] = rate_of(g, i);
      la.macs_per_input_frame = static_cast<double>(macs_per_column(l)) * static_cast<double>(up) / static_cast<double>(down);
    } else {
      la.macs_per_input_frame = static_cast<double>(la.macs);
    }
    per_frame += la.macs_per_input_frame;
    r.total_macs += la.macs;
    r.layers.push_back(std::move(la));
  }
  r.macs_per_second = per_frame * frame_rate_hz;
  const double hop = 1.0 / frame_rate_hz;

  for (const auto& id : g.outputs) {
    OutputAnalysis oa;
    oa.id = id;
    oa.shape = shapes.at(id);
    const std::size_t idx = *g.index_of(id);
    if (!timed) {
      oa.macs_per_output_frame = static_cast<double>(r.total_macs);
      oa.context_seconds = hop;
      r.outputs.push_back(std::move(oa));
      continue;
    }
    const auto [up, down] = rate_of(g, idx);
    oa.macs_per_output_frame = per_frame * static_cast<double>(down) / static_cast<double>(up);
    // First output frame whose dependencies avoid the left padding. Clipping
    // is monotone in the frame index, so an exponential then binary search works.
    auto clipped = [&](std::int64_t o) { return propagate(g, idx, o, std::nullopt).clipped; };
    std::int64_t hi = 1;
    while (clipped(hi)) {
      if (hi > (std::int64_t{1} << 40)) raise(ErrorKind::NumericalError, "no steady-state output frame");
      hi *= 2;
    }
    std::int64_t lo = 0;
    if (clipped(0)) {
      lo = hi / 2;  // clipped(lo) is true, clipped(hi) false
      while (hi - lo > 1) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        (clipped(mid) ? lo : hi) = mid;
      }
    } else {
      hi = 0;
    }
    oa.steady_index = hi;
    const std::int64_t period = std::min<std::int64_t>(up, 4096);
    oa.receptive_field_frames = 0;
    for (std::int64_t o = hi; o < hi + period; ++o) {
      const IndexInterval iv = hull(propagate(g, idx, o, std::nullopt).input);
      oa.receptive_field_frames = std::max(oa.receptive_field_frames, iv.width());
      const std::int64_t aligned = o * down / up;
      oa.lookahead_frames = std::max(oa.lookahead_frames, iv.hi - aligned);
      oa.past_frames = std::max(oa.past_frames, aligned - iv.lo);
    }
    oa.context_seconds = static_cast<double>(oa.receptive_field_frames) * hop;
    oa.latency_seconds = static_cast<double>(oa.lookahead_frames) * hop;
    r.outputs.push_back(std::move(oa));
  }
  r.estimated_power_mw = estimate_power(r.macs_per_second, budget);
  r.budget_ok = r.estimated_power_mw <= budget.power_budget_mw;
  return r;
}

QuantParams range_quant(double lo, double hi) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  QuantParams qp;
  qp.scale = hi > lo ? (hi - lo) / 255.0 : 1.0 / 255.0;
  qp.zero_point = static_cast<int>(std::clamp(round_half_away(-128.0 - lo / qp.scale), -128.0, 127.0));
  return qp;
}

namespace {

Tensor default_calibration(const GraphSpec& g, std::uint64_t seed) {
  Shape shape = g.input.shape;
  if (!g.has_time_axis()) {
    for (std::size_t a = 1; a < shape.size(); ++a) shape[a] = std::min<std::int64_t>(shape[a], 32);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = d(rng);
  return Tensor::from_floats(std::move(shape), std::move(v));
}

PortReport report_for_quantized(const GraphSpec& g) {
  PortReport rep;
  rep.input_quant = *g.input.quant;
  for (const auto& l : g.layers) {
    LayerPortInfo info;
    info.id = l.id;
    info.out_quant = *l.out_quant;
    if (l.has_weights()) {
      const auto qp = *l.weights.quant();
      info.weight_quant = qp;
      info.weight_count = l.weights.numel();
      for (auto c : l.weights.codes()) info.zero_weights += c == qp.zero_point;
      info.sparsity = info.weight_count ? static_cast<double>(info.zero_weights) / info.weight_count : 0.0;
    }
    rep.layers.push_back(std::move(info));
  }
  return rep;
}

}  // namespace

PortResult port_model_unchecked(const GraphSpec& g, const Budget& budget, double prune_threshold,
                                double frame_rate_hz, const PortOptions& options) {
  g.validate();
  budget.validate();
  if (!(prune_threshold >= 0)) raise(ErrorKind::ConfigError, "prune threshold must be >= 0");
  PortResult res;
  if (g.is_quantized()) {
    res.graph = g;
    res.report = report_for_quantized(g);
  } else {
    GraphSpec f = fold_batchnorms(g);
    for (auto& l : f.layers) {
      if (!l.has_weights()) continue;
      auto w = l.weights.mutable_floats();
      bool any = false;
      for (auto& v : w) {
        if (std::abs(v) < prune_threshold) v = 0.0f;
        any = any || v != 0.0f;
      }
      if (!any) raise(ErrorKind::DegenerateModel, "layer '" + l.id + "' has no weights left after pruning");
    }

    // Activation ranges from the pruned float graph.
    GraphSpec probe = f;
    probe.outputs.clear();
    for (const auto& l : f.layers) probe.outputs.push_back(l.id);
    std::vector<Tensor> calib = options.calibration;
    if (calib.empty()) calib.push_back(default_calibration(f, options.seed));
    std::map<std::string, std::pair<double, double>> range;
    auto widen = [&](const std::string& id, const Tensor& t) {
      auto [it, fresh] = range.try_emplace(id, 0.0, 0.0);
      for (float v : t.floats()) {
        it->second.first = std::min<double>(it->second.first, v);
        it->second.second = std::max<double>(it->second.second, v);
      }
    };
    for (const auto& x : calib) {
      const Tensor xf = dequantize(x);
      GraphSpec run = f.has_time_axis() ? f : f.with_input_shape(xf.shape());
      probe.input.shape = run.input.shape;
      widen(kGraphInput, xf);
      for (const auto& [id, t] : graph_forward(probe, xf)) widen(id, t);
    }

    res.report.input_quant = range_quant(range[kGraphInput].first, range[kGraphInput].second);
    f.input.quant = res.report.input_quant;
    for (auto& l : f.layers) {
      LayerPortInfo info;
      info.id = l.id;
      if (l.kind == LayerKind::Softmax) {
        l.out_quant = QuantParams{1.0 / 255.0, -128};
      } else {
        l.out_quant = range_quant(range[l.id].first, range[l.id].second);
      }
      info.out_quant = *l.out_quant;
      if (l.has_weights()) {
        auto w = l.weights.floats();
        const auto [mn, mx] = std::minmax_element(w.begin(), w.end());
        const QuantParams wq = range_quant(*mn, *mx);
        info.weight_count = l.weights.numel();
        info.zero_weights = std::count(w.begin(), w.end(), 0.0f);
        info.sparsity = info.weight_count ? static_cast<double>(info.zero_weights) / info.weight_count : 0.0;
        info.weight_quant = wq;
        l.weights = quantize(l.weights, wq);
      }
      res.report.layers.push_back(std::move(info));
    }
    f.validate();
    res.graph = std::move(f);
  }
  res.report.prune_threshold = prune_threshold;
  res.report.analysis = analyze(res.graph, frame_rate_hz, budget);
  res.report.estimated_power_mw = res.report.analysis.estimated_power_mw;
  res.report.budget_ok = res.report.analysis.budget_ok;
  return res;
}

PortResult port_model(const GraphSpec& g, const Budget& budget, double prune_threshold, double frame_rate_hz,
                      const PortOptions& options) {
  PortResult res = port_model_unchecked(g, budget, prune_threshold, frame_rate_hz, options);
  if (!res.report.budget_ok) {
    raise(ErrorKind::BudgetExceeded, "estimated " + std::to_string(res.report.estimated_power_mw) + " mW exceeds " +
                                         std::to_string(budget.power_budget_mw) + " mW budget");
  }
  return res;
}

Json to_json(const IndexInterval& iv) {
  if (iv.empty()) return Json{{"empty", true}};
  return Json{{"lo", iv.lo}, {"hi", iv.hi}, {"width", iv.width()}};
}

Json to_json(const Budget& b) {
  return Json{{"tops_per_watt", b.tops_per_watt},
              {"power_budget_mw", b.power_budget_mw},
              {"ops_per_mac", b.ops_per_mac},
              {"idle_floor_mw", b.idle_floor_mw}};
}

Json to_json(const AnalysisReport& r) {
  Json outs = Json::array();
  for (const auto& o : r.outputs) {
    outs.push_back({{"id", o.id},
                    {"shape", o.shape},
                    {"steady_index", o.steady_index},
                    {"receptive_field_frames", o.receptive_field_frames},
                    {"lookahead_frames", o.lookahead_frames},
                    {"past_frames", o.past_frames},
                    {"context_seconds", o.context_seconds},
                    {"latency_seconds", o.latency_seconds},
                    {"macs_per_output_frame", o.macs_per_output_frame}});
  }
  Json layers = Json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"id", l.id},
                      {"kind", to_string(l.kind)},
                      {"shape", l.shape},
                      {"macs", l.macs},
                      {"macs_per_input_frame", l.macs_per_input_frame}});
  }
  return Json{{"frame_rate_hz", r.frame_rate_hz},
              {"outputs", outs},
              {"layers", layers},
              {"total_macs", r.total_macs},
              {"macs_per_second", r.macs_per_second},
              {"estimated_power_mw", r.estimated_power_mw},
              {"budget", to_json(r.budget)},
              {"budget_ok", r.budget_ok}};
}

Json to_json(const PortReport& r) {
  Json layers = Json::array();
  for (const auto& l : r.layers) {
    Json j{{"id", l.id}, {"out_quant", quant_to_json(l.out_quant)}};
    if (l.weight_quant) {
      j["weight_quant"] = quant_to_json(*l.weight_quant);
      j["weight_count"] = l.weight_count;
      j["zero_weights"] = l.zero_weights;
      j["sparsity"] = l.sparsity;
    }
    layers.push_back(std::move(j));
  }
  return Json{{"prune_threshold", r.prune_threshold},
              {"input_quant", quant_to_json(r.input_quant)},
              {"layers", layers},
              {"estimated_power_mw", r.estimated_power_mw},
              {"budget_ok", r.budget_ok},
              {"analysis", to_json(r.analysis)}};
}

}  // namespace david
