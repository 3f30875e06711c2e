// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/executor.hpp"

#include <algorithm>
#include <limits>

#include "david/error.hpp"
#include "kernels.hpp"

namespace david {
namespace detail {

/// Validated graph plus per-layer kernel parameters and wiring.
struct CompiledGraph {
  GraphSpec spec;
  std::vector<PreparedLayer> layers;
  std::vector<std::vector<int>> producers;  // -1 is the graph input
  std::vector<std::vector<int>> consumers;  // index layers.size() is "graph output"
  std::vector<int> input_consumers;
  std::vector<bool> is_output;
};

namespace {

std::shared_ptr<CompiledGraph> compile(const GraphSpec& g) {
  g.validate();
  auto cg = std::make_shared<CompiledGraph>();
  cg->spec = g;
  const GraphSpec& s = cg->spec;
  const std::size_t n = s.layers.size();
  cg->producers.resize(n);
  cg->consumers.resize(n);
  cg->is_output.assign(n, false);
  cg->layers.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& l = s.layers[i];
    std::vector<std::optional<QuantParams>> qin;
    for (const auto& src : l.inputs) {
      if (src == kGraphInput) {
        cg->producers[i].push_back(-1);
        cg->input_consumers.push_back(static_cast<int>(i));
        qin.push_back(s.input.quant);
      } else {
        const int p = static_cast<int>(*s.index_of(src));
        cg->producers[i].push_back(p);
        cg->consumers[static_cast<std::size_t>(p)].push_back(static_cast<int>(i));
        qin.push_back(s.layers[static_cast<std::size_t>(p)].out_quant);
      }
    }
    cg->layers.push_back(prepare_layer(l, std::move(qin)));
  }
  for (const auto& o : s.outputs) cg->is_output[*s.index_of(o)] = true;
  return cg;
}

Tensor coerce_input(const GraphSpec& g, const Tensor& input) {
  if (g.is_quantized()) {
    if (!input.is_quantized()) return quantize(input, *g.input.quant);
    if (*input.quant() != *g.input.quant) {
      raise(ErrorKind::ShapeMismatch, "input quantization differs from the graph input parameters");
    }
    return input;
  }
  if (input.is_quantized()) return dequantize(input);
  return input;
}

void check_input_shape(const GraphSpec& g, const Tensor& input) {
  const Shape& want = g.input.shape;
  const Shape& got = input.shape();
  bool ok = got.size() == want.size();
  for (std::size_t a = 0; ok && a < want.size(); ++a) {
    const bool is_time = g.input.time_axis && static_cast<std::size_t>(*g.input.time_axis) == a;
    ok = is_time ? got[a] >= 1 : got[a] == want[a];
  }
  if (!ok) {
    raise(ErrorKind::ShapeMismatch, "input " + shape_string(got) + " does not match graph input " + shape_string(want));
  }
}

struct Interval {
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();  // inclusive
  bool empty() const { return lo > hi; }
  void hull(std::int64_t a, std::int64_t b) {
    if (a > b) return;
    lo = std::min(lo, a);
    hi = std::max(hi, b);
  }
};

/// Producer columns a layer reads to produce outputs [a, b].
std::pair<std::int64_t, std::int64_t> demand(const LayerSpec& l, std::int64_t a, std::int64_t b) {
  switch (l.kind) {
    case LayerKind::Conv1d:
      return {a * l.stride - l.pad_left, b * l.stride - l.pad_left + l.dilation * (l.kernel - 1)};
    case LayerKind::NearestUpsample:
      return {a / l.factor, b / l.factor};
    default:
      return {a, b};
  }
}

OutputMap forward_spatial(const CompiledGraph& cg, const Tensor& input, ActivationMeter* meter) {
  const GraphSpec& g = cg.spec;
  const auto shapes = g.infer_shapes(input.shape());
  std::vector<Block> blocks(g.layers.size());
  std::vector<std::size_t> pending(g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i) pending[i] = cg.consumers[i].size();
  std::size_t input_pending = cg.input_consumers.size();
  Block in = block_from_tensor(input);
  if (meter) meter->add(in.elements());

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const PreparedLayer& p = cg.layers[i];
    const LayerSpec& l = g.layers[i];
    std::vector<const Block*> ins;
    std::vector<std::int64_t> lens;
    const Shape* in_shape = nullptr;
    for (std::size_t k = 0; k < l.inputs.size(); ++k) {
      const int src = cg.producers[i][k];
      const Block& b = src < 0 ? in : blocks[static_cast<std::size_t>(src)];
      ins.push_back(&b);
      lens.push_back(b.cols);
      if (!in_shape) in_shape = &shapes.at(l.inputs[k]);
    }
    const Shape& out_shape = shapes.at(l.id);
    if (l.kind == LayerKind::Conv2d) {
      blocks[i] = compute_conv2d(p, *ins[0], (*in_shape)[1], (*in_shape)[2], out_shape[1], out_shape[2]);
    } else {
      if (l.kind == LayerKind::NearestUpsample && in_shape->size() != 2) {
        raise(ErrorKind::ShapeMismatch, "layer '" + l.id + "': nearest_upsample needs a [C, T] input");
      }
      Block out = make_output_block(p, out_shape[0], 0);
      const std::int64_t cols = out_shape[0] == 0 ? 0 : shape_numel(out_shape) / out_shape[0];
      compute_columns(p, ins, lens, 0, cols, out);
      blocks[i] = std::move(out);
    }
    if (meter) meter->add(blocks[i].elements());
    for (int src : cg.producers[i]) {
      if (src < 0) {
        if (--input_pending == 0 && meter) meter->release(in.elements());
      } else if (--pending[static_cast<std::size_t>(src)] == 0 && !cg.is_output[static_cast<std::size_t>(src)]) {
        if (meter) meter->release(blocks[static_cast<std::size_t>(src)].elements());
        blocks[static_cast<std::size_t>(src)] = Block{};
      }
    }
  }
  OutputMap out;
  for (const auto& id : g.outputs) {
    const std::size_t i = *g.index_of(id);
    out.emplace(id, tensor_from_block(blocks[i], shapes.at(id)));
  }
  return out;
}

OutputMap forward_range(const CompiledGraph& cg, const Block& window, std::int64_t total_length,
                        const std::map<std::string, ColumnRange>& ranges, ActivationMeter* meter) {
  const GraphSpec& g = cg.spec;
  const std::size_t n = g.layers.size();
  const auto shapes = g.infer_shapes({g.input.shape[0], total_length});
  std::vector<std::int64_t> len(n);
  for (std::size_t i = 0; i < n; ++i) len[i] = shapes.at(g.layers[i].id)[1];

  std::vector<Interval> need(n);
  Interval need_input;
  for (const auto& [id, range] : ranges) {
    auto idx = g.index_of(id);
    if (!idx || !cg.is_output[*idx]) raise(ErrorKind::UnknownOutput, "'" + id + "' is not a graph output");
    if (range.first < 0 || range.second > len[*idx] || range.first > range.second) {
      raise(ErrorKind::UnknownOutput, "range for '" + id + "' outside [0, " + std::to_string(len[*idx]) + ")");
    }
    need[*idx].hull(range.first, range.second - 1);
  }
  for (std::size_t i = n; i-- > 0;) {
    if (need[i].empty()) continue;
    const auto [a, b] = demand(g.layers[i], need[i].lo, need[i].hi);
    for (int src : cg.producers[i]) {
      const std::int64_t plen = src < 0 ? total_length : len[static_cast<std::size_t>(src)];
      const std::int64_t lo = std::max<std::int64_t>(a, 0);
      const std::int64_t hi = std::min<std::int64_t>(b, plen - 1);
      (src < 0 ? need_input : need[static_cast<std::size_t>(src)]).hull(lo, hi);
    }
  }
  if (!need_input.empty() && (need_input.lo < window.offset || need_input.hi >= window.end())) {
    raise(ErrorKind::ShapeMismatch, "input window [" + std::to_string(window.offset) + ", " +
                                        std::to_string(window.end()) + ") does not cover needed [" +
                                        std::to_string(need_input.lo) + ", " + std::to_string(need_input.hi + 1) + ")");
  }

  std::vector<Block> blocks(n);
  std::vector<std::size_t> pending(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c : cg.consumers[i]) pending[i] += need[static_cast<std::size_t>(c)].empty() ? 0 : 1;
  }
  if (meter) meter->add(window.elements());
  for (std::size_t i = 0; i < n; ++i) {
    if (need[i].empty()) continue;
    const PreparedLayer& p = cg.layers[i];
    std::vector<const Block*> ins;
    std::vector<std::int64_t> lens;
    for (int src : cg.producers[i]) {
      ins.push_back(src < 0 ? &window : &blocks[static_cast<std::size_t>(src)]);
      lens.push_back(src < 0 ? total_length : len[static_cast<std::size_t>(src)]);
    }
    blocks[i] = make_output_block(p, shapes.at(g.layers[i].id)[0], need[i].lo);
    compute_columns(p, ins, lens, need[i].lo, need[i].hi + 1, blocks[i]);
    if (meter) meter->add(blocks[i].elements());
    for (int src : cg.producers[i]) {
      if (src < 0) continue;
      const auto s = static_cast<std::size_t>(src);
      if (--pending[s] == 0 && !cg.is_output[s]) {
        if (meter) meter->release(blocks[s].elements());
        blocks[s] = Block{};
      }
    }
  }
  OutputMap out;
  for (const auto& [id, range] : ranges) {
    const std::size_t i = *g.index_of(id);
    Block slice = range.second > range.first ? blocks[i].slice(range.first, range.second)
                                             : make_output_block(cg.layers[i], blocks[i].channels, range.first);
    if (slice.channels == 0) slice.channels = shapes.at(id)[0];
    out.emplace(id, tensor_from_block(slice, {shapes.at(id)[0], range.second - range.first}));
  }
  return out;
}

}  // namespace

struct StreamLayerState {
  Block input;
  std::int64_t pushed = 0;
  bool finished = false;
  std::vector<Block> out;
  std::vector<std::int64_t> produced;
  std::vector<std::optional<std::int64_t>> final_len;
  std::map<std::string, std::int64_t> emitted;
  ActivationMeter meter;
};

}  // namespace detail

using detail::Block;

OutputMap graph_forward(const GraphSpec& g, const Tensor& input, ActivationMeter* meter) {
  auto cg = detail::compile(g);
  detail::check_input_shape(cg->spec, input);
  const Tensor x = detail::coerce_input(cg->spec, input);
  if (!cg->spec.has_time_axis()) return detail::forward_spatial(*cg, x, meter);
  std::map<std::string, ColumnRange> ranges;
  const auto shapes = cg->spec.infer_shapes(x.shape());
  for (const auto& id : cg->spec.outputs) ranges[id] = {0, shapes.at(id)[1]};
  return detail::forward_range(*cg, detail::block_from_tensor(x), x.dim(1), ranges, meter);
}

OutputMap forward_window(const GraphSpec& g, const Tensor& window, std::int64_t window_offset,
                         std::int64_t total_length, const std::map<std::string, ColumnRange>& ranges,
                         ActivationMeter* meter) {
  auto cg = detail::compile(g);
  if (!cg->spec.has_time_axis()) raise(ErrorKind::ConfigError, "forward_window needs a time-axis graph");
  if (window.rank() != 2 || window.dim(0) != cg->spec.input.shape[0]) {
    raise(ErrorKind::ShapeMismatch, "window " + shape_string(window.shape()) + " has the wrong channel count");
  }
  if (window_offset < 0 || window_offset + window.dim(1) > total_length) {
    raise(ErrorKind::ShapeMismatch, "window lies outside the input");
  }
  const Tensor x = detail::coerce_input(cg->spec, window);
  return detail::forward_range(*cg, detail::block_from_tensor(x, window_offset), total_length, ranges, meter);
}

StreamingExecutor::StreamingExecutor(const GraphSpec& g)
    : graph_(detail::compile(g)), state_(std::make_unique<detail::StreamLayerState>()) {
  const GraphSpec& s = graph_->spec;
  if (!s.has_time_axis()) raise(ErrorKind::ConfigError, "streaming needs a time-axis graph");
  const std::size_t n = s.layers.size();
  state_->input.channels = s.input.shape[0];
  state_->input.quant = s.input.quant;
  state_->out.resize(n);
  state_->produced.assign(n, 0);
  state_->final_len.resize(n);
  const auto shapes = s.infer_shapes(s.input.shape);
  for (std::size_t i = 0; i < n; ++i) {
    state_->out[i] = detail::make_output_block(graph_->layers[i], shapes.at(s.layers[i].id)[0], 0);
  }
  for (const auto& o : s.outputs) state_->emitted[o] = 0;
}

StreamingExecutor::~StreamingExecutor() = default;
StreamingExecutor::StreamingExecutor(StreamingExecutor&&) noexcept = default;
StreamingExecutor& StreamingExecutor::operator=(StreamingExecutor&&) noexcept = default;

OutputMap StreamingExecutor::push(const Tensor& frames) {
  if (state_->finished) raise(ErrorKind::ConfigError, "push after finish");
  const GraphSpec& s = graph_->spec;
  if (frames.rank() != 2 || frames.dim(0) != s.input.shape[0]) {
    raise(ErrorKind::ShapeMismatch, "frames " + shape_string(frames.shape()) + " do not match input channels " +
                                        std::to_string(s.input.shape[0]));
  }
  const Tensor x = detail::coerce_input(s, frames);
  Block b = detail::block_from_tensor(x, state_->pushed);
  state_->input.append_columns(b, b.offset, b.end());
  state_->pushed += b.cols;
  return advance();
}

OutputMap StreamingExecutor::finish() {
  if (state_->finished) return {};
  state_->finished = true;
  return advance();
}

OutputMap StreamingExecutor::advance() {
  const auto& cg = *graph_;
  const GraphSpec& g = cg.spec;
  auto& st = *state_;
  const std::size_t n = g.layers.size();

  auto avail_of = [&](int src) { return src < 0 ? st.pushed : st.produced[static_cast<std::size_t>(src)]; };
  auto final_of = [&](int src) -> std::optional<std::int64_t> {
    if (src < 0) return st.finished ? std::optional<std::int64_t>(st.pushed) : std::nullopt;
    return st.final_len[static_cast<std::size_t>(src)];
  };

  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& l = g.layers[i];
    const auto& prods = cg.producers[i];
    std::int64_t limit = std::numeric_limits<std::int64_t>::max();
    bool all_final = true;
    for (int src : prods) {
      limit = std::min(limit, avail_of(src));
      all_final = all_final && final_of(src).has_value();
    }
    const int p0 = prods.front();
    if (l.kind == LayerKind::Conv1d) {
      if (auto fl = final_of(p0)) {
        limit = conv_output_length(*fl, l.kernel, l.stride, l.dilation, l.pad_left, l.pad_right);
      } else {
        const std::int64_t last = avail_of(p0) - 1 + l.pad_left - l.dilation * (l.kernel - 1);
        limit = last < 0 ? 0 : last / l.stride + 1;
      }
    } else if (l.kind == LayerKind::NearestUpsample) {
      limit = avail_of(p0) * l.factor;
    }
    if (all_final) st.final_len[i] = limit;

    if (limit > st.produced[i]) {
      std::vector<const Block*> ins;
      std::vector<std::int64_t> lens;
      for (int src : prods) {
        ins.push_back(src < 0 ? &st.input : &st.out[static_cast<std::size_t>(src)]);
        lens.push_back(final_of(src).value_or(detail::kUnboundedLength));
      }
      detail::compute_columns(cg.layers[i], ins, lens, st.produced[i], limit, st.out[i]);
      st.produced[i] = limit;
    }
  }

  std::int64_t live = st.input.elements();
  for (const auto& b : st.out) live += b.elements();
  st.meter.add(live - st.meter.live);

  OutputMap emitted;
  const auto shapes = g.infer_shapes(g.input.shape);
  for (const auto& id : g.outputs) {
    const std::size_t i = *g.index_of(id);
    const std::int64_t from = st.emitted[id];
    const std::int64_t to = st.produced[i];
    Block slice;
    slice.channels = st.out[i].channels;
    slice.quant = st.out[i].quant;
    slice.offset = from;
    slice.append_columns(st.out[i], from, to);
    emitted.emplace(id, detail::tensor_from_block(slice, {shapes.at(id)[0], to - from}));
    st.emitted[id] = to;
  }

  // Keep only columns some consumer still has to read.
  auto low_water = [&](const std::vector<int>& consumers, std::int64_t floor) {
    std::int64_t keep = floor;
    for (int c : consumers) {
      const LayerSpec& cl = g.layers[static_cast<std::size_t>(c)];
      const std::int64_t next = st.produced[static_cast<std::size_t>(c)];
      keep = std::min(keep, detail::demand(cl, next, next).first);
    }
    return keep;
  };
  constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
  st.input.drop_before(low_water(cg.input_consumers, kMax));
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t floor = cg.is_output[i] ? st.produced[i] : kMax;
    st.out[i].drop_before(low_water(cg.consumers[i], floor));
  }
  live = st.input.elements();
  for (const auto& b : st.out) live += b.elements();
  st.meter.live = live;
  return emitted;
}

std::int64_t StreamingExecutor::frames_pushed() const noexcept { return state_->pushed; }
std::int64_t StreamingExecutor::buffered_input_frames() const noexcept { return state_->input.cols; }
std::int64_t StreamingExecutor::emitted(const std::string& output) const { return state_->emitted.at(output); }
std::int64_t StreamingExecutor::peak_elements() const noexcept { return state_->meter.peak; }
bool StreamingExecutor::finished() const noexcept { return state_->finished; }

}  // namespace david
