// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

// Column kernels shared by the offline, windowed and streaming executors.
// Every output element is produced by exactly one code path with a fixed
// accumulation order, which is what makes chunked and offline runs agree
// bit for bit.

#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "david/graph.hpp"
#include "david/tensor.hpp"

namespace david::detail {

inline constexpr std::int64_t kUnboundedLength = std::numeric_limits<std::int64_t>::max();

/// Position-major block of columns [offset, offset + cols) of one activation.
/// Element (column j, channel c) lives at (j - offset) * channels + c.
struct Block {
  std::int64_t channels = 0;
  std::int64_t offset = 0;
  std::int64_t cols = 0;
  std::optional<QuantParams> quant;
  std::vector<float> f;
  std::vector<std::int8_t> q;

  std::int64_t end() const noexcept { return offset + cols; }
  std::int64_t elements() const noexcept { return channels * cols; }
  bool quantized() const noexcept { return quant.has_value(); }

  void append_columns(const Block& src, std::int64_t from, std::int64_t to);
  void drop_before(std::int64_t column);
  Block slice(std::int64_t from, std::int64_t to) const;
};

Block block_from_tensor(const Tensor& t, std::int64_t offset = 0);
Tensor tensor_from_block(const Block& b, const Shape& shape);

/// Layer parameters rearranged for the column kernels.
struct PreparedLayer {
  const LayerSpec* spec = nullptr;
  std::vector<std::optional<QuantParams>> in_quant;

  // conv / dense, float mode: weights [Co][Kh][K][Ci]
  std::vector<float> wf;
  std::vector<double> bias_f;
  // conv / dense, quantized mode
  std::vector<std::int32_t> wq;
  std::vector<std::int32_t> bias_q;
  double requant = 0.0;

  // batchnorm folded into a per-channel affine map
  std::vector<double> bn_scale, bn_shift;
};

PreparedLayer prepare_layer(const LayerSpec& layer,
                            std::vector<std::optional<QuantParams>> in_quant);

/// Computes output columns [o0, o1) of a time-axis (or per-position) layer
/// and appends them to `out`. `in_lengths[i]` is the full length of producer
/// i; indices outside [0, length) read as zero padding. Indices that are
/// inside the valid range must be present in the producer block.
void compute_columns(const PreparedLayer& layer, std::span<const Block* const> ins,
                     std::span<const std::int64_t> in_lengths, std::int64_t o0, std::int64_t o1,
                     Block& out);

/// Full conv2d over a [C, H, W] activation stored position-major (cols = H*W).
Block compute_conv2d(const PreparedLayer& layer, const Block& in, std::int64_t height,
                     std::int64_t width, std::int64_t out_height, std::int64_t out_width);

Block make_output_block(const PreparedLayer& layer, std::int64_t channels, std::int64_t offset);

}  // namespace david::detail
