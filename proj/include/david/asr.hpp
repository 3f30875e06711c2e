// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "david/audio.hpp"
#include "david/dsp.hpp"
#include "david/executor.hpp"
#include "david/graph.hpp"
#include "david/serialize.hpp"

namespace david {

inline constexpr int kBlank = 0;
inline constexpr int kAsrVocabSize = 29;

/// [BLANK, 'a'..'z', ' ', '\''], BLANK rendered as "<blank>".
const std::vector<std::string>& asr_vocabulary();

/// Symbol ids for lowercase text over the ASR vocabulary (InvalidCharacter otherwise).
std::vector<int> asr_symbols(const std::string& text);

struct ConvStage {
  std::int64_t kernel = 3;
  std::int64_t channels = 64;
  std::int64_t stride = 1;
  std::int64_t dilation = 1;
  /// Negative means "auto": total padding dilation * (kernel - 1), split
  /// with the larger half in the past.
  std::int64_t pad_left = -1;
  std::int64_t pad_right = -1;
};

struct MSBlockSpec {
  std::vector<std::vector<ConvStage>> paths;
  bool residual = true;
  /// Width of the 1x1 projection after concatenation; 0 keeps the block input width.
  std::int64_t projection_channels = 0;
};

enum class FrontEnd { LogMel, MuLawConv };

struct SpeechNetConfig {
  FrontEnd front_end = FrontEnd::LogMel;
  FeatureConfig features;
  /// Learned conv stack over mu-law midpoints (MuLawConv only).
  std::vector<ConvStage> learned_front;
  std::vector<MSBlockSpec> blocks;
  int head_classes = kAsrVocabSize;
  bool batchnorm = true;
  int sample_rate_hz = 16000;

  std::int64_t input_channels() const;
  double input_rate_hz() const;
};

/// Reference layout: six blocks of kernel-3/7/12 paths with two stages each,
/// padded so the analyzer reports 133 frames of context and 52 of lookahead.
SpeechNetConfig reference_speechnet1_config(std::int64_t channels = 64);
/// Same blocks behind a learned conv front-end of total stride 400.
SpeechNetConfig reference_speechnet2_config(std::int64_t channels = 64);

/// Expands the config into a graph with seeded random weights. Output id
/// "posteriors" is [29, T]. Warnings (e.g. fewer than three paths) are
/// appended to `warnings` when given.
GraphSpec build_speechnet(const SpeechNetConfig& cfg, std::uint64_t seed = 0,
                          std::vector<std::string>* warnings = nullptr);

inline constexpr const char* kPosteriors = "posteriors";

struct AsrModel {
  std::string name;
  FrontEnd front_end = FrontEnd::LogMel;
  FeatureConfig features;
  int sample_rate_hz = 16000;
  GraphSpec graph;
};

Json to_json(const AsrModel& m);
AsrModel asr_model_from_json(const Json& j);

AsrModel make_asr_model(const SpeechNetConfig& cfg, std::uint64_t seed, std::string name);

/// Reference-layout model with hand-set weights that transcribes tone-coded
/// audio (see tone_audio): symbol k is a pure tone at the center of mel band
/// 4 + 2(k - 1).
AsrModel tone_asr_model();
double tone_frequency_hz(int symbol);
/// Each character becomes a 100 ms tone followed by 100 ms of silence.
AudioBuffer tone_audio(const std::string& text, double lead_silence_s = 0.2, double amplitude = 0.5);

/// Graph input for a model: normalized log-mel frames or mu-law midpoints.
Tensor asr_input(const AsrModel& m, const AudioBuffer& audio);
Tensor mulaw_midpoints(const AudioBuffer& audio);

/// Streaming state: feeds input frames and emits posterior rows [n, 29] as
/// soon as their dependency interval has arrived.
class AsrStream {
 public:
  explicit AsrStream(const GraphSpec& g);

  Tensor step(const Tensor& frames);
  Tensor finish();

  std::int64_t emitted() const;
  std::int64_t buffered_frames() const { return exec_.buffered_input_frames(); }
  std::int64_t receptive_field() const { return receptive_field_; }
  std::int64_t lookahead() const { return lookahead_; }

 private:
  StreamingExecutor exec_;
  std::int64_t receptive_field_ = 0;
  std::int64_t lookahead_ = 0;
};

Tensor stream_step(AsrStream& state, const Tensor& frames);

/// Whole-utterance posteriors [T, 29].
Tensor offline_posteriors(const GraphSpec& g, const Tensor& input);

std::vector<int> ctc_greedy_ids(const Tensor& posteriors);
std::string ctc_greedy_decode(const Tensor& posteriors, const std::vector<std::string>& vocab);
std::string ctc_greedy_decode(const Tensor& posteriors);

/// Total probability of `target` (blank = 0) under per-frame log-probabilities [T, V].
double ctc_forward_score(const Tensor& log_probs, const std::vector<int>& target);

struct Transcript {
  std::string text;
  Tensor posteriors;  // [T, 29]
  /// Output frame after which the transcript first contained each prefix length.
  std::vector<std::int64_t> char_frames;
};

/// Streams the utterance in chunks of `chunk_frames` (0 = all at once).
Transcript transcribe(const AsrModel& m, const AudioBuffer& audio, std::int64_t chunk_frames = 0);

}  // namespace david
