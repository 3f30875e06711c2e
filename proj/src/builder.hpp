// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded construction of conv stacks shared by the model builders.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "david/asr.hpp"
#include "david/graph.hpp"

namespace david::detail {

struct Builder {
  GraphSpec g;
  std::mt19937_64 rng;
  bool batchnorm = true;

  float uniform(double lo, double hi) { return static_cast<float>(std::uniform_real_distribution<double>(lo, hi)(rng)); }

  std::string conv(const std::string& id, const std::string& in, std::int64_t ci, const ConvStage& st) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::Conv1d;
    l.inputs = {in};
    l.in_channels = ci;
    l.out_channels = st.channels;
    l.kernel = st.kernel;
    l.stride = st.stride;
    l.dilation = st.dilation;
    const std::int64_t total = st.dilation * (st.kernel - 1);
    l.pad_left = st.pad_left >= 0 ? st.pad_left : total - total / 2;
    l.pad_right = st.pad_right >= 0 ? st.pad_right : total / 2;
    const double a = std::sqrt(6.0 / static_cast<double>(ci * st.kernel));
    std::vector<float> w(static_cast<std::size_t>(st.channels * ci * st.kernel));
    for (auto& v : w) v = uniform(-a, a);
    l.weights = Tensor::from_floats({st.channels, ci, st.kernel}, std::move(w));
    l.bias.resize(static_cast<std::size_t>(st.channels));
    for (auto& v : l.bias) v = uniform(-0.05, 0.05);
    g.layers.push_back(std::move(l));
    return id;
  }

  std::string stage(const std::string& prefix, const std::string& in, std::int64_t ci, const ConvStage& st) {
    std::string cur = conv(prefix + ".conv", in, ci, st);
    if (batchnorm) {
      LayerSpec bn;
      bn.id = prefix + ".bn";
      bn.kind = LayerKind::BatchNorm;
      bn.inputs = {cur};
      for (std::int64_t c = 0; c < st.channels; ++c) {
        bn.gamma.push_back(uniform(0.8, 1.2));
        bn.beta.push_back(uniform(-0.1, 0.1));
        bn.mean.push_back(uniform(-0.1, 0.1));
        bn.var.push_back(uniform(0.8, 1.2));
      }
      g.layers.push_back(std::move(bn));
      cur = prefix + ".bn";
    }
    LayerSpec r;
    r.id = prefix + ".relu";
    r.kind = LayerKind::Relu;
    r.inputs = {cur};
    g.layers.push_back(std::move(r));
    return prefix + ".relu";
  }

  void simple(const std::string& id, LayerKind kind, std::vector<std::string> inputs) {
    LayerSpec l;
    l.id = id;
    l.kind = kind;
    l.inputs = std::move(inputs);
    g.layers.push_back(std::move(l));
  }
};

}  // namespace david::detail
