// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "david/tensor.hpp"

namespace david {

enum class LayerKind {
  Conv1d,
  Conv2d,
  BatchNorm,
  Relu,
  ResidualAdd,
  NearestUpsample,
  ConcatChannels,
  Dense,
  Softmax,
};

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

/// Reserved producer id naming the graph input.
inline constexpr const char* kGraphInput = "input";

/// One node of a layer graph. Only the fields relevant to `kind` are read:
///   conv1d   in/out_channels, kernel, stride, dilation, pad_left/right, weights [Co,Ci,K], bias
///   conv2d   as conv1d plus kernel_h and pad_top/bottom; weights [Co,Ci,Kh,Kw]
///   dense    in/out_channels, weights [Co,Ci], bias; applied at every position
///   batchnorm gamma, beta, mean, var, eps (per channel)
///   nearest_upsample factor (time axis)
/// residual_add and concat_channels take two or more inputs; every other kind takes one.
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::Relu;
  std::vector<std::string> inputs;

  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 1;
  std::int64_t kernel_h = 1;
  std::int64_t stride = 1;
  std::int64_t dilation = 1;
  std::int64_t pad_left = 0;
  std::int64_t pad_right = 0;
  std::int64_t pad_top = 0;
  std::int64_t pad_bottom = 0;
  Tensor weights;
  std::vector<float> bias;

  std::vector<float> gamma, beta, mean, var;
  double eps = 1e-5;

  std::int64_t factor = 1;

  /// Output quantization; present on every layer of a quantized graph.
  std::optional<QuantParams> out_quant;

  bool has_weights() const noexcept {
    return kind == LayerKind::Conv1d || kind == LayerKind::Conv2d || kind == LayerKind::Dense;
  }
};

struct GraphInput {
  /// Nominal input shape. For time-axis graphs the time dimension is only a
  /// default length; executions accept any length >= 1 on that axis.
  Shape shape;
  std::optional<int> time_axis;
  double frame_rate_hz = 1.0;
  std::optional<QuantParams> quant;
};

struct GraphSpec {
  GraphInput input;
  std::vector<LayerSpec> layers;
  std::vector<std::string> outputs;

  bool is_quantized() const noexcept { return input.quant.has_value(); }
  bool has_time_axis() const noexcept { return input.time_axis.has_value(); }

  const LayerSpec& layer(const std::string& id) const;
  LayerSpec& layer(const std::string& id);
  std::optional<std::size_t> index_of(const std::string& id) const;

  /// Arity, parameter ranges, id uniqueness, topological order, weight
  /// shapes, quantization completeness, output existence. Throws ConfigError
  /// or ShapeMismatch.
  void validate() const;

  /// Output shape of every layer (plus "input") for a given input shape.
  std::map<std::string, Shape> infer_shapes(const Shape& input_shape) const;

  /// Copy with a different nominal input shape (used to run spatial
  /// graphs at a reduced execution resolution).
  GraphSpec with_input_shape(Shape shape) const;
};

/// Output length along a conv's sliding axis.
std::int64_t conv_output_length(std::int64_t in_len, std::int64_t kernel, std::int64_t stride,
                                std::int64_t dilation, std::int64_t pad_left,
                                std::int64_t pad_right);

}  // namespace david
