// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "david/graph.hpp"
#include "david/serialize.hpp"
#include "david/tensor.hpp"

namespace david {

/// Inclusive range of input frames; empty when hi < lo.
struct IndexInterval {
  std::int64_t lo = 0;
  std::int64_t hi = -1;

  bool empty() const noexcept { return hi < lo; }
  std::int64_t width() const noexcept { return empty() ? 0 : hi - lo + 1; }
  bool operator==(const IndexInterval&) const = default;
};

struct Budget {
  double tops_per_watt = 55.0;
  double power_budget_mw = 50.0;
  int ops_per_mac = 2;
  double idle_floor_mw = 0.0;

  void validate() const;
};

/// Hull of the input frames that influence frame `index` of `output`.
/// With `input_length` set, frames at or past the end are treated as padding.
IndexInterval dependency_interval(const GraphSpec& g, const std::string& output, std::int64_t index,
                                  std::optional<std::int64_t> input_length = std::nullopt);

/// Empirical counterpart: perturbs every input frame of a zero input of
/// `input_length` frames in a structural copy of the graph (unit weights, no
/// bias, monotone activations) and reports the hull of frames that move the
/// output.
IndexInterval impulse_probe(const GraphSpec& g, const std::string& output, std::int64_t index,
                            std::int64_t input_length);

double estimate_power(double macs_per_second, const Budget& budget);

struct LayerAnalysis {
  std::string id;
  LayerKind kind = LayerKind::Relu;
  Shape shape;
  std::int64_t macs = 0;  // at the nominal input shape
  double macs_per_input_frame = 0.0;
};

struct OutputAnalysis {
  std::string id;
  Shape shape;
  std::int64_t steady_index = 0;
  std::int64_t receptive_field_frames = 1;
  std::int64_t lookahead_frames = 0;
  /// Frames before the aligned input frame that the output still reads.
  std::int64_t past_frames = 0;
  double context_seconds = 0.0;
  double latency_seconds = 0.0;
  double macs_per_output_frame = 0.0;
};

struct AnalysisReport {
  double frame_rate_hz = 1.0;
  std::vector<OutputAnalysis> outputs;
  std::vector<LayerAnalysis> layers;
  std::int64_t total_macs = 0;  // at the nominal input shape
  double macs_per_second = 0.0;
  double estimated_power_mw = 0.0;
  Budget budget;
  bool budget_ok = true;

  const OutputAnalysis& output(const std::string& id) const;
};

AnalysisReport analyze(const GraphSpec& g, double frame_rate_hz, const Budget& budget = {});
AnalysisReport analyze(const GraphSpec& g, const Budget& budget = {});

struct LayerPortInfo {
  std::string id;
  std::int64_t weight_count = 0;
  std::int64_t zero_weights = 0;
  double sparsity = 0.0;
  std::optional<QuantParams> weight_quant;
  QuantParams out_quant;
};

struct PortReport {
  std::vector<LayerPortInfo> layers;
  QuantParams input_quant;
  double prune_threshold = 0.0;
  AnalysisReport analysis;
  double estimated_power_mw = 0.0;
  bool budget_ok = true;
};

struct PortResult {
  GraphSpec graph;
  PortReport report;
};

struct PortOptions {
  /// Representative inputs for activation ranges; seeded noise when empty.
  std::vector<Tensor> calibration;
  std::uint64_t seed = 0;
};

/// Folds batchnorms, prunes |w| < threshold, quantizes weights and
/// activations per tensor. Always returns; check report.budget_ok.
PortResult port_model_unchecked(const GraphSpec& g, const Budget& budget, double prune_threshold,
                                double frame_rate_hz, const PortOptions& options = {});

/// As above but throws BudgetExceeded when the estimate exceeds the budget.
PortResult port_model(const GraphSpec& g, const Budget& budget, double prune_threshold, double frame_rate_hz,
                      const PortOptions& options = {});

/// Asymmetric int8 parameters covering [lo, hi] and zero.
QuantParams range_quant(double lo, double hi);

Json to_json(const IndexInterval& iv);
Json to_json(const Budget& b);
Json to_json(const AnalysisReport& r);
Json to_json(const PortReport& r);

}  // namespace david
