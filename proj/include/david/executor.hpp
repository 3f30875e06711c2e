// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "david/graph.hpp"
#include "david/tensor.hpp"

namespace david {

/// High-water mark of live activation elements held by an executor.
struct ActivationMeter {
  std::int64_t live = 0;
  std::int64_t peak = 0;

  void add(std::int64_t n) {
    live += n;
    if (live > peak) peak = live;
  }
  void release(std::int64_t n) { live -= n; }
};

using OutputMap = std::map<std::string, Tensor>;
using ColumnRange = std::pair<std::int64_t, std::int64_t>;  // [begin, end)

/// Runs the whole graph on one input. Float inputs to a quantized graph are
/// quantized with the graph's input parameters first. Deterministic: the
/// same input always yields bit-identical outputs.
OutputMap graph_forward(const GraphSpec& g, const Tensor& input, ActivationMeter* meter = nullptr);

/// Computes the requested output column ranges of a time-axis graph from a
/// window of its input. `window` holds input columns starting at global
/// index `window_offset` of an input whose full length is `total_length`;
/// padding is applied only at the true edges, so the result equals the
/// matching slice of graph_forward on the full input.
OutputMap forward_window(const GraphSpec& g, const Tensor& window, std::int64_t window_offset,
                         std::int64_t total_length, const std::map<std::string, ColumnRange>& ranges,
                         ActivationMeter* meter = nullptr);

namespace detail {
struct CompiledGraph;
struct StreamLayerState;
}  // namespace detail

/// Incremental executor for time-axis graphs. Each push computes every output
/// column whose inputs are all available and drops columns no consumer will
/// read again; finish() applies the right-edge padding and flushes the rest.
/// Concatenating everything returned equals graph_forward on the whole input.
/// Single owner; not safe for concurrent mutation.
class StreamingExecutor {
 public:
  explicit StreamingExecutor(const GraphSpec& g);
  ~StreamingExecutor();
  StreamingExecutor(StreamingExecutor&&) noexcept;
  StreamingExecutor& operator=(StreamingExecutor&&) noexcept;

  /// Appends input frames ([channels, n], n >= 0) and returns the newly
  /// emitted columns of each graph output.
  OutputMap push(const Tensor& frames);
  OutputMap finish();

  std::int64_t frames_pushed() const noexcept;
  std::int64_t buffered_input_frames() const noexcept;
  std::int64_t emitted(const std::string& output) const;
  std::int64_t peak_elements() const noexcept;
  bool finished() const noexcept;

 private:
  OutputMap advance();

  std::shared_ptr<const detail::CompiledGraph> graph_;
  std::unique_ptr<detail::StreamLayerState> state_;
};

}  // namespace david
