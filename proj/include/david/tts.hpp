// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "david/asr.hpp"
#include "david/audio.hpp"
#include "david/executor.hpp"
#include "david/graph.hpp"
#include "david/serialize.hpp"

namespace david {

inline constexpr int kPad = 0;
inline constexpr int kTextVocabSize = 29;

/// [PAD, 'a'..'z', ' ', '\''].
const std::vector<std::string>& text_vocabulary();

/// Lowercases ASCII letters; InvalidCharacter for anything outside the
/// vocabulary, EmptyInput for "".
std::vector<int> text_to_ids(const std::string& text);

struct VocoderStage {
  std::int64_t upsample = 1;
  std::int64_t channels = 8;
  std::int64_t kernel = 3;
};

struct TTSConfig {
  std::vector<ConvStage> encoder{{5, 32}, {5, 32}};
  /// Ends in a single channel: the per-character duration in frames.
  std::vector<ConvStage> duration_predictor{{3, 16}, {3, 1}};
  std::vector<ConvStage> decoder{{5, 32}, {5, 64}};
  std::int64_t vocoder_pre_channels = 32;
  std::vector<VocoderStage> vocoder{{5, 16}, {5, 8}, {4, 8}, {4, 4}};
  std::int64_t chunk_frames = 8;
  std::int64_t dur_min = 1;
  double duration_bias = 3.0;
  int mel_bands = 64;
  int sample_rate_hz = 16000;
  int hop_samples = 400;

  void validate() const;
};

inline constexpr const char* kEncoderOut = "enc";
inline constexpr const char* kDurationOut = "dur";
inline constexpr const char* kMelOut = "mel";
inline constexpr const char* kWaveOut = "wave";

struct TtsModel {
  std::string name;
  TTSConfig cfg;
  GraphSpec encoder;  // one-hot [29, N] -> "enc" [C, N], "dur" [1, N]
  GraphSpec decoder;  // [C, T] -> "mel" [mel_bands, T]
  GraphSpec vocoder;  // [mel_bands, T] -> "wave" [1, T * hop]
};

TtsModel make_tts_model(const TTSConfig& cfg, std::uint64_t seed, std::string name = "tts");
Json to_json(const TtsModel& m);
TtsModel tts_model_from_json(const Json& j);

Tensor one_hot(const std::vector<int>& ids, int vocab = kTextVocabSize);

/// Repeats column i of `encodings` durations[i] times.
Tensor length_regulate(const Tensor& encodings, const std::vector<std::int64_t>& durations);

struct Spectrogram {
  Tensor mel;  // [mel_bands, T]
  std::vector<std::int64_t> durations;
};

/// Durations are max(dur_min, round(predicted)) unless `durations_override` is given.
Spectrogram spectrogram_infer(const std::vector<int>& ids, const TtsModel& m,
                              const std::optional<std::vector<std::int64_t>>& durations_override = std::nullopt);

struct VocoderContext {
  std::int64_t past = 0;
  std::int64_t future = 0;
};

/// Mel frames of context the vocoder needs on each side of a chunk.
VocoderContext vocoder_context(const GraphSpec& vocoder);

/// Chunked synthesis over non-overlapping mel chunks; each chunk carries
/// context frames on both sides and emits only its own samples.
std::vector<float> vocoder_sliding(const Tensor& mel, const TtsModel& m, std::int64_t chunk_frames,
                                   ActivationMeter* meter = nullptr);
std::vector<float> vocoder_full(const Tensor& mel, const TtsModel& m, ActivationMeter* meter = nullptr);

struct Synthesis {
  AudioBuffer audio;
  std::vector<std::int64_t> durations;
  std::int64_t mel_frames = 0;
};

Synthesis synthesize(const std::string& text, const TtsModel& m,
                     const std::optional<std::vector<std::int64_t>>& durations_override = std::nullopt,
                     std::optional<std::int64_t> chunk_frames = std::nullopt);

}  // namespace david
