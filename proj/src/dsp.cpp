// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "david/error.hpp"

namespace david {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
class R2CPlan {
 public:
  explicit R2CPlan(int n) : n_(n) {
    std::lock_guard<std::mutex> lock(mutex());
    auto* in = fftw_alloc_real(static_cast<std::size_t>(n));
    auto* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    plan_ = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  ~R2CPlan() {
    std::lock_guard<std::mutex> lock(mutex());
    fftw_destroy_plan(plan_);
  }
  R2CPlan(const R2CPlan&) = delete;
  R2CPlan& operator=(const R2CPlan&) = delete;

  // Power spectrum |X_k|^2 for k in [0, n/2].
  void power(const std::vector<double>& frame, std::vector<double>& out) const {
    auto* in = fftw_alloc_real(static_cast<std::size_t>(n_));
    auto* spec = fftw_alloc_complex(static_cast<std::size_t>(n_ / 2 + 1));
    std::copy(frame.begin(), frame.end(), in);
    std::fill(in + frame.size(), in + n_, 0.0);
    fftw_execute_dft_r2c(plan_, in, spec);
    out.resize(static_cast<std::size_t>(n_ / 2 + 1));
    for (int k = 0; k <= n_ / 2; ++k) out[static_cast<std::size_t>(k)] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    fftw_free(in);
    fftw_free(spec);
  }

  static std::mutex& mutex() {
    static std::mutex m;
    return m;
  }

 private:
  int n_;
  fftw_plan plan_;
};

const R2CPlan& plan_for(int n) {
  static std::mutex cache_mutex;
  static std::map<int, std::unique_ptr<R2CPlan>> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<R2CPlan>(n);
  return *slot;
}

}  // namespace

int FeatureConfig::win_samples(int sr) const { return static_cast<int>(std::lround(win_ms * sr / 1000.0)); }
int FeatureConfig::hop_samples(int sr) const { return static_cast<int>(std::lround(hop_ms * sr / 1000.0)); }

void FeatureConfig::validate(int sr) const {
  auto require = [](bool ok, const char* what) {
    if (!ok) raise(ErrorKind::ConfigError, what);
  };
  require(sr > 0, "sample rate must be positive");
  require(hop_ms > 0 && win_ms >= hop_ms, "need win_ms >= hop_ms > 0");
  require(hop_samples(sr) >= 1, "hop shorter than one sample");
  require(fft_size >= win_samples(sr), "fft_size shorter than the window");
  require(mel_bands >= 1, "mel_bands must be >= 1");
  require(fmin_hz >= 0 && fmin_hz < fmax_hz && fmax_hz <= sr / 2.0, "need 0 <= fmin < fmax <= sample_rate / 2");
  require(floor_eps > 0, "floor_eps must be positive");
  if (norm) {
    require(norm->mean.size() == static_cast<std::size_t>(mel_bands) && norm->std.size() == norm->mean.size(),
            "norm statistics must have one entry per mel band");
    for (float s : norm->std) require(s > 0, "norm std must be positive");
  }
}

double mel_scale(double f_hz) { return 2595.0 * std::log10(1.0 + f_hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_centers(const FeatureConfig& cfg) {
  const double lo = mel_scale(cfg.fmin_hz), hi = mel_scale(cfg.fmax_hz);
  std::vector<double> centers;
  for (int b = 1; b <= cfg.mel_bands; ++b) centers.push_back(mel_to_hz(lo + (hi - lo) * b / (cfg.mel_bands + 1)));
  return centers;
}

std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg, int sr) {
  cfg.validate(sr);
  const double lo = mel_scale(cfg.fmin_hz), hi = mel_scale(cfg.fmax_hz);
  std::vector<double> edges;
  for (int b = 0; b < cfg.mel_bands + 2; ++b) edges.push_back(mel_to_hz(lo + (hi - lo) * b / (cfg.mel_bands + 1)));
  edges.front() = cfg.fmin_hz;
  edges.back() = cfg.fmax_hz;
  const int bins = cfg.fft_size / 2 + 1;
  std::vector<std::vector<double>> fb(static_cast<std::size_t>(cfg.mel_bands), std::vector<double>(static_cast<std::size_t>(bins), 0.0));
  for (int b = 0; b < cfg.mel_bands; ++b) {
    const double l = edges[b], c = edges[b + 1], r = edges[b + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sr / cfg.fft_size;
      const double w = std::min((f - l) / (c - l), (r - f) / (r - c));
      fb[b][k] = std::max(0.0, w);
    }
  }
  return fb;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

Tensor logmel(const AudioBuffer& audio, const FeatureConfig& cfg) {
  const int sr = audio.sample_rate_hz;
  cfg.validate(sr);
  const int win = cfg.win_samples(sr), hop = cfg.hop_samples(sr);
  const auto n = static_cast<std::int64_t>(audio.samples.size());
  const std::int64_t frames = n < win ? 0 : 1 + (n - win) / hop;
  const auto fb = mel_filterbank(cfg, sr);
  const auto window = hann_window(win);
  const R2CPlan& plan = plan_for(cfg.fft_size);
  const auto bands = static_cast<std::size_t>(cfg.mel_bands);
  std::vector<float> out(bands * static_cast<std::size_t>(frames));
  std::vector<double> frame(static_cast<std::size_t>(win)), power;
  const double log_floor = std::log(cfg.floor_eps);
  for (std::int64_t t = 0; t < frames; ++t) {
    for (int i = 0; i < win; ++i) frame[i] = audio.samples[static_cast<std::size_t>(t * hop + i)] * window[i];
    plan.power(frame, power);
    for (std::size_t b = 0; b < bands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) e += fb[b][k] * power[k];
      out[b * static_cast<std::size_t>(frames) + static_cast<std::size_t>(t)] =
          static_cast<float>(e > cfg.floor_eps ? std::log(e) : log_floor);
    }
  }
  return Tensor::from_floats({cfg.mel_bands, frames}, std::move(out));
}

NormStats compute_norm_stats(const Tensor& x, double std_floor) {
  const Tensor f = dequantize(x);
  NormStats s;
  const std::int64_t bands = f.dim(0), t = f.dim(1);
  for (std::int64_t b = 0; b < bands; ++b) {
    double sum = 0, sq = 0;
    for (std::int64_t j = 0; j < t; ++j) sum += f.floats()[b * t + j];
    const double mean = t ? sum / t : 0.0;
    for (std::int64_t j = 0; j < t; ++j) {
      const double d = f.floats()[b * t + j] - mean;
      sq += d * d;
    }
    s.mean.push_back(static_cast<float>(mean));
    s.std.push_back(static_cast<float>(std::max(t ? std::sqrt(sq / t) : 1.0, std_floor)));
  }
  return s;
}

Tensor normalize(const Tensor& x, const NormStats& stats) {
  const Tensor f = dequantize(x);
  if (f.rank() != 2 || stats.mean.size() != static_cast<std::size_t>(f.dim(0)) || stats.std.size() != stats.mean.size()) {
    raise(ErrorKind::ShapeMismatch, "norm statistics do not match the feature bands");
  }
  const std::int64_t t = f.dim(1);
  std::vector<float> out(f.floats().begin(), f.floats().end());
  for (std::size_t b = 0; b < stats.mean.size(); ++b) {
    if (!(stats.std[b] > 0)) raise(ErrorKind::ConfigError, "norm std must be positive");
    for (std::int64_t j = 0; j < t; ++j) {
      auto& v = out[b * static_cast<std::size_t>(t) + static_cast<std::size_t>(j)];
      v = static_cast<float>((static_cast<double>(v) - stats.mean[b]) / stats.std[b]);
    }
  }
  return Tensor::from_floats(f.shape(), std::move(out));
}

Tensor features(const AudioBuffer& audio, const FeatureConfig& cfg) {
  const Tensor lm = logmel(audio, cfg);
  return normalize(lm, cfg.norm ? *cfg.norm : compute_norm_stats(lm));
}

int mulaw_encode(double x) {
  x = std::clamp(x, -1.0, 1.0);
  const double f = std::copysign(std::log1p(255.0 * std::abs(x)) / std::log(256.0), x);
  return static_cast<int>(std::clamp(round_half_away((f + 1.0) * 127.5), 0.0, 255.0));
}

double mulaw_decode(int code) {
  const double f = std::clamp(code, 0, 255) / 127.5 - 1.0;
  return std::copysign((std::pow(256.0, std::abs(f)) - 1.0) / 255.0, f);
}

Json to_json(const FeatureConfig& c) {
  Json j{{"win_ms", c.win_ms},       {"hop_ms", c.hop_ms},    {"fft_size", c.fft_size},
         {"mel_bands", c.mel_bands}, {"fmin_hz", c.fmin_hz}, {"fmax_hz", c.fmax_hz},
         {"floor_eps", c.floor_eps}};
  if (c.norm) j["norm"] = Json{{"mean", c.norm->mean}, {"std", c.norm->std}};
  return j;
}

FeatureConfig feature_config_from_json(const Json& j) {
  FeatureConfig c;
  c.win_ms = j.value("win_ms", c.win_ms);
  c.hop_ms = j.value("hop_ms", c.hop_ms);
  c.fft_size = j.value("fft_size", c.fft_size);
  c.mel_bands = j.value("mel_bands", c.mel_bands);
  c.fmin_hz = j.value("fmin_hz", c.fmin_hz);
  c.fmax_hz = j.value("fmax_hz", c.fmax_hz);
  c.floor_eps = j.value("floor_eps", c.floor_eps);
  if (j.contains("norm") && !j["norm"].is_null()) {
    c.norm = NormStats{j["norm"].at("mean").get<std::vector<float>>(), j["norm"].at("std").get<std::vector<float>>()};
  }
  return c;
}

}  // namespace david
