// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "david/audio.hpp"
#include "david/serialize.hpp"
#include "david/tensor.hpp"

namespace david {

struct NormStats {
  std::vector<float> mean;
  std::vector<float> std;
};

struct FeatureConfig {
  double win_ms = 50.0;
  double hop_ms = 25.0;
  int fft_size = 1024;
  int mel_bands = 64;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double floor_eps = 1e-10;
  /// Fixed per-band statistics; per-utterance statistics are used when absent.
  std::optional<NormStats> norm;

  int win_samples(int sample_rate_hz) const;
  int hop_samples(int sample_rate_hz) const;
  void validate(int sample_rate_hz) const;
};

/// HTK mel scale: 2595 log10(1 + f / 700).
double mel_scale(double f_hz);
double mel_to_hz(double mel);

/// Triangular filters on the HTK scale: [mel_bands][fft_size / 2 + 1].
std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg, int sample_rate_hz);
/// Center frequency (Hz) of every mel band.
std::vector<double> mel_band_centers(const FeatureConfig& cfg);

/// Periodic Hann window of the given length.
std::vector<double> hann_window(int n);

/// Log mel energies [mel_bands, T], T = 1 + floor((N - win) / hop) (0 when N < win).
Tensor logmel(const AudioBuffer& audio, const FeatureConfig& cfg);

NormStats compute_norm_stats(const Tensor& features, double std_floor = 1e-5);
Tensor normalize(const Tensor& features, const NormStats& stats);

/// logmel followed by normalization (fixed stats if configured, else per utterance).
Tensor features(const AudioBuffer& audio, const FeatureConfig& cfg);

int mulaw_encode(double x);
double mulaw_decode(int code);

Json to_json(const FeatureConfig& cfg);
FeatureConfig feature_config_from_json(const Json& j);

}  // namespace david
