// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "david/graph.hpp"
#include "david/tensor.hpp"

namespace david {

struct Conv1dParams {
  std::int64_t stride = 1;
  std::int64_t dilation = 1;
  std::int64_t pad_left = 0;
  std::int64_t pad_right = 0;
};

/// input [C_in, T], weights [C_out, C_in, K], bias length C_out (or empty).
/// Zero padding; output length floor((T + pl + pr - d(K-1) - 1) / s) + 1.
Tensor conv1d_forward(const Tensor& input, const Tensor& weights, std::span<const float> bias,
                      const Conv1dParams& params);

struct BatchNormParams {
  std::vector<float> gamma, beta, mean, var;
  double eps = 1e-5;
};

/// Per-channel (x - mean) * gamma / sqrt(var + eps) + beta over axis 0.
Tensor batchnorm_forward(const Tensor& input, const BatchNormParams& bn);

/// Folds a batch normalization into the preceding conv/dense layer:
/// w' = w * gamma / sqrt(var + eps), b' = (b - mean) * gamma / sqrt(var + eps) + beta.
/// Throws NumericalError when var + eps <= 0 for any channel.
LayerSpec fold_batchnorm(const LayerSpec& conv, const BatchNormParams& bn);

BatchNormParams batchnorm_params(const LayerSpec& bn_layer);

/// Folds every conv -> batchnorm pair where the batchnorm is the conv's only
/// consumer and the conv is not a graph output. Consumers of the removed
/// batchnorm read from the folded conv instead.
GraphSpec fold_batchnorms(const GraphSpec& g);

}  // namespace david
