// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/ops.hpp"

#include <algorithm>
#include <cmath>

#include "david/error.hpp"
#include "david/executor.hpp"

namespace david {

Tensor conv1d_forward(const Tensor& input, const Tensor& weights, std::span<const float> bias,
                      const Conv1dParams& params) {
  if (input.rank() != 2 || weights.rank() != 3 || weights.dim(1) != input.dim(0)) {
    raise(ErrorKind::ShapeMismatch, "conv1d input " + shape_string(input.shape()) + " vs weights " +
                                        shape_string(weights.shape()));
  }
  if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != weights.dim(0)) {
    raise(ErrorKind::ShapeMismatch, "conv1d bias length differs from output channels");
  }
  LayerSpec l;
  l.id = "conv";
  l.kind = LayerKind::Conv1d;
  l.inputs = {kGraphInput};
  l.in_channels = weights.dim(1);
  l.out_channels = weights.dim(0);
  l.kernel = weights.dim(2);
  l.stride = params.stride;
  l.dilation = params.dilation;
  l.pad_left = params.pad_left;
  l.pad_right = params.pad_right;
  l.weights = weights.is_quantized() ? dequantize(weights) : weights;
  l.bias.assign(bias.begin(), bias.end());

  GraphSpec g;
  g.input.shape = input.shape();
  g.input.time_axis = 1;
  g.layers.push_back(std::move(l));
  g.outputs = {"conv"};
  return graph_forward(g, dequantize(input)).at("conv");
}

BatchNormParams batchnorm_params(const LayerSpec& bn_layer) {
  return BatchNormParams{bn_layer.gamma, bn_layer.beta, bn_layer.mean, bn_layer.var, bn_layer.eps};
}

Tensor batchnorm_forward(const Tensor& input, const BatchNormParams& bn) {
  const Tensor x = dequantize(input);
  const std::int64_t c_n = x.dim(0);
  if (static_cast<std::int64_t>(bn.gamma.size()) != c_n) raise(ErrorKind::ShapeMismatch, "batchnorm channel count");
  const std::int64_t per = c_n == 0 ? 0 : x.numel() / c_n;
  std::vector<float> out(static_cast<std::size_t>(x.numel()));
  auto src = x.floats();
  for (std::int64_t c = 0; c < c_n; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    const double denom = static_cast<double>(bn.var[cc]) + bn.eps;
    if (!(denom > 0.0)) raise(ErrorKind::NumericalError, "var + eps <= 0");
    for (std::int64_t j = 0; j < per; ++j) {
      const auto idx = static_cast<std::size_t>(c * per + j);
      out[idx] = static_cast<float>((src[idx] - bn.mean[cc]) * bn.gamma[cc] / std::sqrt(denom) + bn.beta[cc]);
    }
  }
  return Tensor::from_floats(x.shape(), std::move(out));
}

LayerSpec fold_batchnorm(const LayerSpec& conv, const BatchNormParams& bn) {
  if (!conv.has_weights()) raise(ErrorKind::ConfigError, "fold_batchnorm needs a conv or dense layer");
  if (conv.weights.is_quantized()) raise(ErrorKind::ConfigError, "fold_batchnorm needs float weights");
  const auto co_n = static_cast<std::size_t>(conv.out_channels);
  if (bn.gamma.size() != co_n || bn.beta.size() != co_n || bn.mean.size() != co_n || bn.var.size() != co_n) {
    raise(ErrorKind::ShapeMismatch, "batchnorm channels differ from conv output channels");
  }
  LayerSpec out = conv;
  std::vector<float> w(conv.weights.floats().begin(), conv.weights.floats().end());
  const std::size_t per = w.size() / co_n;
  out.bias.assign(co_n, 0.0f);
  for (std::size_t c = 0; c < co_n; ++c) {
    const double denom = static_cast<double>(bn.var[c]) + bn.eps;
    if (!(denom > 0.0)) raise(ErrorKind::NumericalError, "var + eps <= 0 in channel " + std::to_string(c));
    const double k = bn.gamma[c] / std::sqrt(denom);
    for (std::size_t j = 0; j < per; ++j) w[c * per + j] = static_cast<float>(w[c * per + j] * k);
    const double b = conv.bias.empty() ? 0.0 : conv.bias[c];
    out.bias[c] = static_cast<float>((b - bn.mean[c]) * k + bn.beta[c]);
  }
  out.weights = Tensor::from_floats(conv.weights.shape(), std::move(w));
  return out;
}

GraphSpec fold_batchnorms(const GraphSpec& g) {
  GraphSpec out = g;
  out.layers.clear();
  auto consumers_of = [&](const std::string& id) {
    std::size_t n = 0;
    for (const auto& l : g.layers) n += static_cast<std::size_t>(std::count(l.inputs.begin(), l.inputs.end(), id));
    return n;
  };
  auto is_output = [&](const std::string& id) {
    return std::find(g.outputs.begin(), g.outputs.end(), id) != g.outputs.end();
  };
  std::vector<bool> absorbed(g.layers.size(), false);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    if (l.kind != LayerKind::BatchNorm) continue;
    auto src = g.index_of(l.inputs.front());
    if (!src) continue;
    const LayerSpec& conv = g.layers[*src];
    if (!conv.has_weights() || conv.weights.is_quantized()) continue;
    if (consumers_of(conv.id) != 1 || is_output(conv.id)) continue;
    absorbed[*src] = true;
  }
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (absorbed[i]) continue;
    const LayerSpec& l = g.layers[i];
    if (l.kind == LayerKind::BatchNorm) {
      auto src = g.index_of(l.inputs.front());
      if (src && absorbed[*src]) {
        LayerSpec folded = fold_batchnorm(g.layers[*src], batchnorm_params(l));
        folded.id = l.id;
        folded.out_quant = l.out_quant;
        out.layers.push_back(std::move(folded));
        continue;
      }
    }
    out.layers.push_back(l);
  }
  return out;
}

}  // namespace david
