// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/graph.hpp"

#include <algorithm>
#include <set>

#include "david/error.hpp"

namespace david {

namespace {

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Conv1d, "conv1d"},
    {LayerKind::Conv2d, "conv2d"},
    {LayerKind::BatchNorm, "batchnorm"},
    {LayerKind::Relu, "relu"},
    {LayerKind::ResidualAdd, "residual_add"},
    {LayerKind::NearestUpsample, "nearest_upsample"},
    {LayerKind::ConcatChannels, "concat_channels"},
    {LayerKind::Dense, "dense"},
    {LayerKind::Softmax, "softmax"},
};

void require(bool ok, const std::string& what) {
  if (!ok) raise(ErrorKind::ConfigError, what);
}

}  // namespace

std::string to_string(LayerKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (const auto& kn : kKindNames) {
    if (name == kn.name) return kn.kind;
  }
  raise(ErrorKind::UnknownLayerKind, "unknown layer kind '" + name + "'");
}

std::int64_t conv_output_length(std::int64_t in_len, std::int64_t kernel, std::int64_t stride,
                                std::int64_t dilation, std::int64_t pad_left,
                                std::int64_t pad_right) {
  const std::int64_t span = in_len + pad_left + pad_right - dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

const LayerSpec& GraphSpec::layer(const std::string& id) const {
  auto idx = index_of(id);
  if (!idx) raise(ErrorKind::UnknownOutput, "no layer named '" + id + "'");
  return layers[*idx];
}

LayerSpec& GraphSpec::layer(const std::string& id) {
  auto idx = index_of(id);
  if (!idx) raise(ErrorKind::UnknownOutput, "no layer named '" + id + "'");
  return layers[*idx];
}

std::optional<std::size_t> GraphSpec::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) return i;
  }
  return std::nullopt;
}

void GraphSpec::validate() const {
  require(!input.shape.empty(), "graph input shape is empty");
  if (input.time_axis) {
    require(input.shape.size() == 2 && *input.time_axis == 1,
            "time-axis graphs take [channels, time] input with time_axis 1");
  }
  require(input.frame_rate_hz > 0.0, "frame_rate_hz must be positive");
  if (input.quant) input.quant->validate();

  std::set<std::string> seen{kGraphInput};
  for (const auto& l : layers) {
    const std::string where = "layer '" + l.id + "': ";
    require(!l.id.empty(), "layer with empty id");
    require(!seen.contains(l.id), where + "duplicate id");
    const bool multi = l.kind == LayerKind::ResidualAdd || l.kind == LayerKind::ConcatChannels;
    if (multi) {
      require(l.inputs.size() >= 2, where + "needs two or more inputs");
    } else {
      require(l.inputs.size() == 1, where + "needs exactly one input");
    }
    for (const auto& in : l.inputs) {
      require(seen.contains(in), where + "input '" + in + "' is not an earlier layer");
    }
    seen.insert(l.id);

    if (l.has_weights()) {
      require(l.in_channels >= 1 && l.out_channels >= 1, where + "channel counts must be >= 1");
      require(l.kernel >= 1 && l.kernel_h >= 1, where + "kernel sizes must be >= 1");
      require(l.stride >= 1 && l.dilation >= 1, where + "stride and dilation must be >= 1");
      require(l.pad_left >= 0 && l.pad_right >= 0 && l.pad_top >= 0 && l.pad_bottom >= 0,
              where + "padding must be >= 0");
      Shape expect;
      if (l.kind == LayerKind::Conv1d) expect = {l.out_channels, l.in_channels, l.kernel};
      if (l.kind == LayerKind::Conv2d) expect = {l.out_channels, l.in_channels, l.kernel_h, l.kernel};
      if (l.kind == LayerKind::Dense) expect = {l.out_channels, l.in_channels};
      if (l.weights.shape() != expect) {
        raise(ErrorKind::ShapeMismatch, where + "weights " + shape_string(l.weights.shape()) +
                                            ", expected " + shape_string(expect));
      }
      if (!l.bias.empty() && static_cast<std::int64_t>(l.bias.size()) != l.out_channels) {
        raise(ErrorKind::ShapeMismatch, where + "bias length differs from out_channels");
      }
      require(l.weights.is_quantized() == is_quantized(),
              where + "weight dtype must match the graph's quantization mode");
    }
    if (l.kind == LayerKind::BatchNorm) {
      const auto n = l.gamma.size();
      require(n > 0 && l.beta.size() == n && l.mean.size() == n && l.var.size() == n,
              where + "batchnorm parameter vectors must be equal, non-empty length");
    }
    if (l.kind == LayerKind::NearestUpsample) require(l.factor >= 1, where + "factor must be >= 1");
    if (is_quantized()) {
      require(l.out_quant.has_value(), where + "quantized graph needs out_quant on every layer");
      l.out_quant->validate();
    }
  }
  require(!outputs.empty(), "graph has no outputs");
  for (const auto& o : outputs) {
    if (o == kGraphInput || !index_of(o)) raise(ErrorKind::UnknownOutput, "output '" + o + "'");
  }
  infer_shapes(input.shape);
}

std::map<std::string, Shape> GraphSpec::infer_shapes(const Shape& input_shape) const {
  std::map<std::string, Shape> shapes;
  shapes[kGraphInput] = input_shape;
  for (const auto& l : layers) {
    const std::string where = "layer '" + l.id + "': ";
    const Shape& in = shapes.at(l.inputs.front());
    auto mismatch = [&](const std::string& what) {
      raise(ErrorKind::ShapeMismatch, where + what + " (input " + shape_string(in) + ")");
    };
    Shape out;
    switch (l.kind) {
      case LayerKind::Conv1d: {
        if (in.size() != 2 || in[0] != l.in_channels) mismatch("expects [in_channels, T]");
        const auto t = conv_output_length(in[1], l.kernel, l.stride, l.dilation, l.pad_left, l.pad_right);
        if (t < 1) mismatch("padded length shorter than the dilated kernel");
        out = {l.out_channels, t};
        break;
      }
      case LayerKind::Conv2d: {
        if (in.size() != 3 || in[0] != l.in_channels) mismatch("expects [in_channels, H, W]");
        const auto h = conv_output_length(in[1], l.kernel_h, l.stride, l.dilation, l.pad_top, l.pad_bottom);
        const auto w = conv_output_length(in[2], l.kernel, l.stride, l.dilation, l.pad_left, l.pad_right);
        if (h < 1 || w < 1) mismatch("padded extent shorter than the dilated kernel");
        out = {l.out_channels, h, w};
        break;
      }
      case LayerKind::Dense:
        if (in.empty() || in[0] != l.in_channels) mismatch("leading axis must equal in_channels");
        out = in;
        out[0] = l.out_channels;
        break;
      case LayerKind::BatchNorm:
        if (in.empty() || in[0] != static_cast<std::int64_t>(l.gamma.size())) {
          mismatch("channel count differs from batchnorm parameters");
        }
        out = in;
        break;
      case LayerKind::Relu:
      case LayerKind::Softmax:
        out = in;
        break;
      case LayerKind::ResidualAdd:
        for (const auto& src : l.inputs) {
          if (shapes.at(src) != in) mismatch("residual inputs must share one shape");
        }
        out = in;
        break;
      case LayerKind::ConcatChannels: {
        out = in;
        out[0] = 0;
        for (const auto& src : l.inputs) {
          const Shape& s = shapes.at(src);
          if (s.size() != in.size() || !std::equal(s.begin() + 1, s.end(), in.begin() + 1)) {
            mismatch("concat inputs must agree on every non-channel axis");
          }
          out[0] += s[0];
        }
        break;
      }
      case LayerKind::NearestUpsample:
        if (in.size() < 2) mismatch("upsample needs a positional axis");
        out = in;
        out.back() *= l.factor;
        break;
    }
    shapes[l.id] = std::move(out);
  }
  return shapes;
}

GraphSpec GraphSpec::with_input_shape(Shape shape) const {
  GraphSpec g = *this;
  g.input.shape = std::move(shape);
  return g;
}

}  // namespace david
