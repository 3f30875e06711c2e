// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "david/error.hpp"

namespace david::detail {

void Block::append_columns(const Block& src, std::int64_t from, std::int64_t to) {
  if (to <= from) return;
  if (src.channels != channels || src.quantized() != quantized()) {
    raise(ErrorKind::ShapeMismatch, "appending columns from an incompatible block");
  }
  if (from < src.offset || to > src.end()) raise(ErrorKind::ShapeMismatch, "column range not in source block");
  if (cols == 0) {
    offset = from;
  } else if (from != end()) {
    raise(ErrorKind::ShapeMismatch, "appended columns are not contiguous");
  }
  const auto lo = static_cast<std::size_t>((from - src.offset) * channels);
  const auto hi = static_cast<std::size_t>((to - src.offset) * channels);
  if (quantized()) {
    q.insert(q.end(), src.q.begin() + static_cast<std::ptrdiff_t>(lo), src.q.begin() + static_cast<std::ptrdiff_t>(hi));
  } else {
    f.insert(f.end(), src.f.begin() + static_cast<std::ptrdiff_t>(lo), src.f.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  cols += to - from;
}

void Block::drop_before(std::int64_t column) {
  if (column <= offset) return;
  const std::int64_t n = std::min(column, end()) - offset;
  const auto count = static_cast<std::ptrdiff_t>(n * channels);
  if (quantized()) {
    q.erase(q.begin(), q.begin() + count);
  } else {
    f.erase(f.begin(), f.begin() + count);
  }
  offset += n;
  cols -= n;
}

Block Block::slice(std::int64_t from, std::int64_t to) const {
  Block out;
  out.channels = channels;
  out.quant = quant;
  out.offset = from;
  out.append_columns(*this, from, to);
  out.offset = from;
  return out;
}

Block block_from_tensor(const Tensor& t, std::int64_t offset) {
  if (t.rank() < 1) raise(ErrorKind::ShapeMismatch, "rank-0 tensor");
  Block b;
  b.channels = t.dim(0);
  b.cols = b.channels == 0 ? 0 : t.numel() / b.channels;
  b.offset = offset;
  b.quant = t.quant();
  const auto c = static_cast<std::size_t>(b.channels);
  const auto n = static_cast<std::size_t>(b.cols);
  if (t.is_quantized()) {
    auto src = t.codes();
    b.q.resize(src.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < n; ++j) b.q[j * c + ch] = src[ch * n + j];
    }
  } else {
    auto src = t.floats();
    b.f.resize(src.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < n; ++j) b.f[j * c + ch] = src[ch * n + j];
    }
  }
  return b;
}

Tensor tensor_from_block(const Block& b, const Shape& shape) {
  const auto c = static_cast<std::size_t>(b.channels);
  const auto n = static_cast<std::size_t>(b.cols);
  if (shape_numel(shape) != b.elements()) raise(ErrorKind::ShapeMismatch, "block does not fill " + shape_string(shape));
  if (b.quantized()) {
    std::vector<std::int8_t> codes(b.q.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t j = 0; j < n; ++j) codes[ch * n + j] = b.q[j * c + ch];
    }
    return Tensor::from_codes(shape, std::move(codes), *b.quant);
  }
  std::vector<float> data(b.f.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < n; ++j) data[ch * n + j] = b.f[j * c + ch];
  }
  return Tensor::from_floats(shape, std::move(data));
}

PreparedLayer prepare_layer(const LayerSpec& layer, std::vector<std::optional<QuantParams>> in_quant) {
  PreparedLayer p;
  p.spec = &layer;
  p.in_quant = std::move(in_quant);
  const bool quantized = layer.out_quant.has_value() && !p.in_quant.empty() && p.in_quant.front().has_value();

  if (layer.has_weights()) {
    const std::int64_t co_n = layer.out_channels;
    const std::int64_t ci_n = layer.in_channels;
    const std::int64_t kh_n = layer.kind == LayerKind::Conv2d ? layer.kernel_h : 1;
    const std::int64_t kw_n = layer.kind == LayerKind::Dense ? 1 : layer.kernel;
    const std::int64_t taps = kh_n * kw_n;
    const auto total = static_cast<std::size_t>(co_n * taps * ci_n);
    // source layout [Co][Ci][Kh][Kw]; target layout [Co][Kh][Kw][Ci]
    auto src_index = [&](std::int64_t co, std::int64_t ci, std::int64_t tap) {
      return static_cast<std::size_t>((co * ci_n + ci) * taps + tap);
    };
    auto dst_index = [&](std::int64_t co, std::int64_t ci, std::int64_t tap) {
      return static_cast<std::size_t>((co * taps + tap) * ci_n + ci);
    };
    if (quantized) {
      if (!layer.weights.is_quantized()) raise(ErrorKind::ConfigError, "layer '" + layer.id + "': float weights in quantized graph");
      const QuantParams wq = *layer.weights.quant();
      const QuantParams xq = *p.in_quant.front();
      const QuantParams yq = *layer.out_quant;
      // |x - zx| <= 255 and |w - zw| <= 255 bound each product term.
      if (static_cast<double>(taps * ci_n) * 255.0 * 255.0 > 2.0e9) {
        raise(ErrorKind::ConfigError, "layer '" + layer.id + "': int32 accumulator could overflow");
      }
      auto codes = layer.weights.codes();
      p.wq.resize(total);
      for (std::int64_t co = 0; co < co_n; ++co) {
        for (std::int64_t ci = 0; ci < ci_n; ++ci) {
          for (std::int64_t t = 0; t < taps; ++t) {
            p.wq[dst_index(co, ci, t)] = static_cast<std::int32_t>(codes[src_index(co, ci, t)]) - wq.zero_point;
          }
        }
      }
      const double acc_scale = xq.scale * wq.scale;
      p.bias_q.assign(static_cast<std::size_t>(co_n), 0);
      for (std::size_t co = 0; co < layer.bias.size(); ++co) {
        p.bias_q[co] = static_cast<std::int32_t>(round_half_away(layer.bias[co] / acc_scale));
      }
      p.requant = acc_scale / yq.scale;
    } else {
      if (layer.weights.is_quantized()) raise(ErrorKind::ConfigError, "layer '" + layer.id + "': int8 weights in float graph");
      auto w = layer.weights.floats();
      p.wf.resize(total);
      for (std::int64_t co = 0; co < co_n; ++co) {
        for (std::int64_t ci = 0; ci < ci_n; ++ci) {
          for (std::int64_t t = 0; t < taps; ++t) p.wf[dst_index(co, ci, t)] = w[src_index(co, ci, t)];
        }
      }
      p.bias_f.assign(static_cast<std::size_t>(co_n), 0.0);
      for (std::size_t co = 0; co < layer.bias.size(); ++co) p.bias_f[co] = layer.bias[co];
    }
  }

  if (layer.kind == LayerKind::BatchNorm) {
    const std::size_t n = layer.gamma.size();
    p.bn_scale.resize(n);
    p.bn_shift.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
      const double denom = static_cast<double>(layer.var[c]) + layer.eps;
      if (!(denom > 0.0)) raise(ErrorKind::NumericalError, "layer '" + layer.id + "': var + eps <= 0");
      p.bn_scale[c] = layer.gamma[c] / std::sqrt(denom);
      p.bn_shift[c] = layer.beta[c] - layer.mean[c] * p.bn_scale[c];
    }
  }
  return p;
}

Block make_output_block(const PreparedLayer& layer, std::int64_t channels, std::int64_t offset) {
  Block b;
  b.channels = channels;
  b.offset = offset;
  b.quant = layer.spec->out_quant;
  if (!layer.in_quant.empty() && !layer.in_quant.front().has_value()) b.quant.reset();
  return b;
}

namespace {

bool is_padding(std::int64_t j, std::int64_t len) { return j < 0 || j >= len; }

void check_present(const Block& b, std::int64_t j, const LayerSpec& l) {
  if (j < b.offset || j >= b.end()) {
    raise(ErrorKind::ShapeMismatch, "layer '" + l.id + "': input column " + std::to_string(j) +
                                        " not available (have [" + std::to_string(b.offset) + ", " +
                                        std::to_string(b.end()) + "))");
  }
}

const float* fcol(const Block& b, std::int64_t j) {
  return b.f.data() + static_cast<std::size_t>((j - b.offset) * b.channels);
}

const std::int8_t* qcol(const Block& b, std::int64_t j) {
  return b.q.data() + static_cast<std::size_t>((j - b.offset) * b.channels);
}

double real_at(const Block& b, std::int64_t j, std::int64_t c) {
  if (b.quantized()) return dequantize_value(qcol(b, j)[c], *b.quant);
  return fcol(b, j)[c];
}

/// Sliding dot product shared by conv1d (taps = K) and dense (taps = 1).
void sliding_columns(const PreparedLayer& p, const Block& in, std::int64_t in_len, std::int64_t o0,
                     std::int64_t o1, std::int64_t kernel, std::int64_t stride,
                     std::int64_t dilation, std::int64_t pad_left, Block& out) {
  const LayerSpec& l = *p.spec;
  const std::int64_t ci_n = l.in_channels;
  const std::int64_t co_n = l.out_channels;
  if (in.channels != ci_n) raise(ErrorKind::ShapeMismatch, "layer '" + l.id + "': input channel count");
  for (std::int64_t o = o0; o < o1; ++o) {
    const std::int64_t base = o * stride - pad_left;
    for (std::int64_t k = 0; k < kernel; ++k) {
      const std::int64_t j = base + k * dilation;
      if (!is_padding(j, in_len)) check_present(in, j, l);
    }
    if (out.quantized()) {
      const int zx = in.quant->zero_point;
      const QuantParams& yq = *out.quant;
      for (std::int64_t co = 0; co < co_n; ++co) {
        std::int32_t acc = 0;
        for (std::int64_t k = 0; k < kernel; ++k) {
          const std::int64_t j = base + k * dilation;
          if (is_padding(j, in_len)) continue;
          const std::int8_t* x = qcol(in, j);
          const std::int32_t* w = p.wq.data() + static_cast<std::size_t>((co * kernel + k) * ci_n);
          for (std::int64_t ci = 0; ci < ci_n; ++ci) acc += (static_cast<std::int32_t>(x[ci]) - zx) * w[ci];
        }
        acc += p.bias_q[static_cast<std::size_t>(co)];
        const double code = round_half_away(static_cast<double>(acc) * p.requant) + yq.zero_point;
        out.q.push_back(static_cast<std::int8_t>(std::clamp(code, -128.0, 127.0)));
      }
    } else {
      for (std::int64_t co = 0; co < co_n; ++co) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < kernel; ++k) {
          const std::int64_t j = base + k * dilation;
          if (is_padding(j, in_len)) continue;
          const float* x = fcol(in, j);
          const float* w = p.wf.data() + static_cast<std::size_t>((co * kernel + k) * ci_n);
          for (std::int64_t ci = 0; ci < ci_n; ++ci) acc += static_cast<double>(w[ci]) * static_cast<double>(x[ci]);
        }
        out.f.push_back(static_cast<float>(acc + p.bias_f[static_cast<std::size_t>(co)]));
      }
    }
    ++out.cols;
  }
}

void push_real(Block& out, double v) {
  if (out.quantized()) {
    out.q.push_back(quantize_value(v, *out.quant));
  } else {
    out.f.push_back(static_cast<float>(v));
  }
}

}  // namespace

void compute_columns(const PreparedLayer& p, std::span<const Block* const> ins,
                     std::span<const std::int64_t> in_lengths, std::int64_t o0, std::int64_t o1,
                     Block& out) {
  if (o1 <= o0) return;
  const LayerSpec& l = *p.spec;
  if (out.cols == 0) {
    out.offset = o0;
  } else if (out.end() != o0) {
    raise(ErrorKind::ShapeMismatch, "layer '" + l.id + "': output columns not contiguous");
  }
  const Block& in0 = *ins.front();
  const std::int64_t len0 = in_lengths.front();

  switch (l.kind) {
    case LayerKind::Conv1d:
      sliding_columns(p, in0, len0, o0, o1, l.kernel, l.stride, l.dilation, l.pad_left, out);
      return;
    case LayerKind::Dense:
      sliding_columns(p, in0, len0, o0, o1, 1, 1, 1, 0, out);
      return;
    case LayerKind::Conv2d:
      raise(ErrorKind::ShapeMismatch, "layer '" + l.id + "': conv2d has no column form");
    default:
      break;
  }

  for (std::int64_t o = o0; o < o1; ++o) {
    switch (l.kind) {
      case LayerKind::BatchNorm:
      case LayerKind::Relu:
      case LayerKind::Softmax: {
        check_present(in0, o, l);
        const std::int64_t c_n = in0.channels;
        if (l.kind == LayerKind::Softmax) {
          std::vector<double> x(static_cast<std::size_t>(c_n));
          double peak = -HUGE_VAL;
          for (std::int64_t c = 0; c < c_n; ++c) {
            x[static_cast<std::size_t>(c)] = real_at(in0, o, c);
            peak = std::max(peak, x[static_cast<std::size_t>(c)]);
          }
          double sum = 0.0;
          for (auto& v : x) {
            v = std::exp(v - peak);
            sum += v;
          }
          for (auto v : x) push_real(out, v / sum);
        } else if (l.kind == LayerKind::Relu) {
          for (std::int64_t c = 0; c < c_n; ++c) push_real(out, std::max(0.0, real_at(in0, o, c)));
        } else {
          for (std::int64_t c = 0; c < c_n; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            push_real(out, real_at(in0, o, c) * p.bn_scale[cc] + p.bn_shift[cc]);
          }
        }
        break;
      }
      case LayerKind::ResidualAdd: {
        for (const Block* b : ins) check_present(*b, o, l);
        for (std::int64_t c = 0; c < in0.channels; ++c) {
          double acc = 0.0;
          for (const Block* b : ins) acc += real_at(*b, o, c);
          push_real(out, acc);
        }
        break;
      }
      case LayerKind::ConcatChannels: {
        for (const Block* b : ins) {
          check_present(*b, o, l);
          if (!out.quantized() && !b->quantized()) {
            const float* x = fcol(*b, o);
            out.f.insert(out.f.end(), x, x + b->channels);
          } else {
            for (std::int64_t c = 0; c < b->channels; ++c) push_real(out, real_at(*b, o, c));
          }
        }
        break;
      }
      case LayerKind::NearestUpsample: {
        const std::int64_t src = o / l.factor;
        check_present(in0, src, l);
        if (!out.quantized()) {
          const float* x = fcol(in0, src);
          out.f.insert(out.f.end(), x, x + in0.channels);
        } else if (in0.quant == out.quant) {
          const std::int8_t* x = qcol(in0, src);
          out.q.insert(out.q.end(), x, x + in0.channels);
        } else {
          for (std::int64_t c = 0; c < in0.channels; ++c) push_real(out, real_at(in0, src, c));
        }
        break;
      }
      default:
        raise(ErrorKind::UnknownLayerKind, "layer '" + l.id + "'");
    }
    ++out.cols;
  }
}

Block compute_conv2d(const PreparedLayer& p, const Block& in, std::int64_t height, std::int64_t width,
                     std::int64_t out_height, std::int64_t out_width) {
  const LayerSpec& l = *p.spec;
  const std::int64_t ci_n = l.in_channels;
  const std::int64_t co_n = l.out_channels;
  const std::int64_t kh_n = l.kernel_h;
  const std::int64_t kw_n = l.kernel;
  Block out = make_output_block(p, co_n, 0);
  if (out.quantized()) {
    out.q.reserve(static_cast<std::size_t>(co_n * out_height * out_width));
  } else {
    out.f.reserve(static_cast<std::size_t>(co_n * out_height * out_width));
  }
  for (std::int64_t ho = 0; ho < out_height; ++ho) {
    for (std::int64_t wo = 0; wo < out_width; ++wo) {
      for (std::int64_t co = 0; co < co_n; ++co) {
        if (out.quantized()) {
          const int zx = in.quant->zero_point;
          std::int32_t acc = 0;
          for (std::int64_t kh = 0; kh < kh_n; ++kh) {
            const std::int64_t ih = ho * l.stride - l.pad_top + kh * l.dilation;
            if (is_padding(ih, height)) continue;
            for (std::int64_t kw = 0; kw < kw_n; ++kw) {
              const std::int64_t iw = wo * l.stride - l.pad_left + kw * l.dilation;
              if (is_padding(iw, width)) continue;
              const std::int8_t* x = qcol(in, ih * width + iw);
              const std::int32_t* w = p.wq.data() + static_cast<std::size_t>(((co * kh_n + kh) * kw_n + kw) * ci_n);
              for (std::int64_t ci = 0; ci < ci_n; ++ci) acc += (static_cast<std::int32_t>(x[ci]) - zx) * w[ci];
            }
          }
          acc += p.bias_q[static_cast<std::size_t>(co)];
          const double code = round_half_away(static_cast<double>(acc) * p.requant) + out.quant->zero_point;
          out.q.push_back(static_cast<std::int8_t>(std::clamp(code, -128.0, 127.0)));
        } else {
          double acc = 0.0;
          for (std::int64_t kh = 0; kh < kh_n; ++kh) {
            const std::int64_t ih = ho * l.stride - l.pad_top + kh * l.dilation;
            if (is_padding(ih, height)) continue;
            for (std::int64_t kw = 0; kw < kw_n; ++kw) {
              const std::int64_t iw = wo * l.stride - l.pad_left + kw * l.dilation;
              if (is_padding(iw, width)) continue;
              const float* x = fcol(in, ih * width + iw);
              const float* w = p.wf.data() + static_cast<std::size_t>(((co * kh_n + kh) * kw_n + kw) * ci_n);
              for (std::int64_t ci = 0; ci < ci_n; ++ci) acc += static_cast<double>(w[ci]) * static_cast<double>(x[ci]);
            }
          }
          out.f.push_back(static_cast<float>(acc + p.bias_f[static_cast<std::size_t>(co)]));
        }
      }
    }
  }
  out.cols = out_height * out_width;
  return out;
}

}  // namespace david::detail
