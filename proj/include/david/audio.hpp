// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace david {

struct AudioBuffer {
  int sample_rate_hz = 16000;
  std::vector<float> samples;

  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// PCM 16-bit little-endian WAV. Multi-channel input is averaged to mono.
AudioBuffer read_wav(const std::string& path);
AudioBuffer parse_wav(const std::vector<unsigned char>& bytes);
void write_wav(const std::string& path, const AudioBuffer& audio);
std::vector<unsigned char> encode_wav(const AudioBuffer& audio);

}  // namespace david
