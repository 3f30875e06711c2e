// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/audio.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "david/error.hpp"
#include "david/tensor.hpp"

namespace david {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}
void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

AudioBuffer parse_wav(const std::vector<unsigned char>& b) {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    raise(ErrorKind::ParseError, "not a RIFF/WAVE file");
  }
  int channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t len = le32(b.data() + pos + 4);
    const unsigned char* body = b.data() + pos + 8;
    const std::size_t avail = std::min<std::size_t>(len, b.size() - pos - 8);
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (avail < 16) raise(ErrorKind::ParseError, "short fmt chunk");
      const std::uint16_t format = le16(body);
      channels = le16(body + 2);
      rate = le32(body + 4);
      bits = le16(body + 14);
      if ((format != 1 && format != 0xFFFE) || bits != 16) raise(ErrorKind::ParseError, "only PCM 16-bit WAV is supported");
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      data = body;
      data_len = avail;
    }
    pos += 8 + len + (len & 1);
  }
  if (channels <= 0 || rate == 0 || data == nullptr) raise(ErrorKind::ParseError, "WAV lacks fmt or data chunk");
  AudioBuffer a;
  a.sample_rate_hz = static_cast<int>(rate);
  const std::size_t frames = data_len / (2 * static_cast<std::size_t>(channels));
  a.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (int c = 0; c < channels; ++c) {
      acc += static_cast<std::int16_t>(le16(data + 2 * (i * channels + c))) / 32768.0;
    }
    a.samples[i] = static_cast<float>(acc / channels);
  }
  return a;
}

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoError, "cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

std::vector<unsigned char> encode_wav(const AudioBuffer& a) {
  std::vector<unsigned char> out;
  const auto data_len = static_cast<std::uint32_t>(a.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(a.sample_rate_hz));
  put32(out, static_cast<std::uint32_t>(a.sample_rate_hz) * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, data_len);
  for (float s : a.samples) {
    const double v = round_half_away(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  return out;
}

void write_wav(const std::string& path, const AudioBuffer& a) {
  const auto bytes = encode_wav(a);
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::IoError, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace david
