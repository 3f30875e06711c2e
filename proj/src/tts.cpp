// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/tts.hpp"

#include <algorithm>
#include <numeric>

#include "builder.hpp"
#include "david/analyzer.hpp"
#include "david/error.hpp"

namespace david {

const std::vector<std::string>& text_vocabulary() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> s{"<pad>"};
    for (char c = 'a'; c <= 'z'; ++c) s.emplace_back(1, c);
    s.emplace_back(" ");
    s.emplace_back("'");
    return s;
  }();
  return v;
}

std::vector<int> text_to_ids(const std::string& text) {
  if (text.empty()) raise(ErrorKind::EmptyInput, "empty text");
  // Same symbol order as the ASR vocabulary, with PAD in place of BLANK.
  return asr_symbols(text);
}

void TTSConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) raise(ErrorKind::ConfigError, what);
  };
  require(!encoder.empty() && !decoder.empty() && !duration_predictor.empty(), "conv stacks must be non-empty");
  require(duration_predictor.back().channels == 1, "duration predictor must end in one channel");
  require(decoder.back().channels == mel_bands, "decoder must end in mel_bands channels");
  require(chunk_frames >= 1 && dur_min >= 0, "chunk_frames >= 1 and dur_min >= 0");
  require(sample_rate_hz > 0 && hop_samples > 0, "sample rate and hop must be positive");
  std::int64_t product = 1;
  for (const auto& st : vocoder) {
    require(st.upsample >= 1 && st.channels >= 1 && st.kernel >= 1, "invalid vocoder stage");
    product *= st.upsample;
  }
  require(product == hop_samples, "vocoder upsample factors must multiply to hop_samples (" +
                                      std::to_string(product) + " vs " + std::to_string(hop_samples) + ")");
  for (const auto& stack : {encoder, duration_predictor, decoder}) {
    for (const auto& st : stack) require(st.stride == 1, "TTS conv stages must have stride 1");
  }
}

namespace {

GraphSpec start_graph(std::int64_t channels, double rate) {
  GraphSpec g;
  g.input.shape = {channels, 16};
  g.input.time_axis = 1;
  g.input.frame_rate_hz = rate;
  return g;
}

// conv stack with relu between stages and a linear last stage
std::string stack(detail::Builder& b, const std::string& prefix, std::string cur, std::int64_t width,
                  const std::vector<ConvStage>& stages, bool relu_last) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string id = prefix + std::to_string(i);
    if (i + 1 < stages.size() || relu_last) {
      cur = b.stage(id, cur, width, stages[i]);
    } else {
      cur = b.conv(id + ".conv", cur, width, stages[i]);
    }
    width = stages[i].channels;
  }
  return cur;
}

void rename_last(GraphSpec& g, const std::string& id) {
  const std::string old = g.layers.back().id;
  g.layers.back().id = id;
  for (auto& l : g.layers) std::replace(l.inputs.begin(), l.inputs.end(), old, id);
}

}  // namespace

TtsModel make_tts_model(const TTSConfig& cfg, std::uint64_t seed, std::string name) {
  cfg.validate();
  TtsModel m;
  m.name = std::move(name);
  m.cfg = cfg;
  const double frame_rate = static_cast<double>(cfg.sample_rate_hz) / cfg.hop_samples;

  {
    detail::Builder b;
    b.rng.seed(seed);
    b.batchnorm = false;
    b.g = start_graph(kTextVocabSize, frame_rate);
    stack(b, "enc", kGraphInput, kTextVocabSize, cfg.encoder, true);
    rename_last(b.g, kEncoderOut);
    stack(b, "dur", kEncoderOut, cfg.encoder.back().channels, cfg.duration_predictor, false);
    for (auto& v : b.g.layers.back().bias) v = static_cast<float>(cfg.duration_bias);
    rename_last(b.g, kDurationOut);
    b.g.outputs = {kEncoderOut, kDurationOut};
    m.encoder = std::move(b.g);
    m.encoder.validate();
  }
  {
    detail::Builder b;
    b.rng.seed(seed + 1);
    b.batchnorm = false;
    b.g = start_graph(cfg.encoder.back().channels, frame_rate);
    stack(b, "dec", kGraphInput, cfg.encoder.back().channels, cfg.decoder, false);
    rename_last(b.g, kMelOut);
    b.g.outputs = {kMelOut};
    m.decoder = std::move(b.g);
    m.decoder.validate();
  }
  {
    detail::Builder b;
    b.rng.seed(seed + 2);
    b.batchnorm = false;
    b.g = start_graph(cfg.mel_bands, frame_rate);
    std::string cur = b.stage("pre", kGraphInput, cfg.mel_bands, ConvStage{7, cfg.vocoder_pre_channels});
    std::int64_t width = cfg.vocoder_pre_channels;
    for (std::size_t i = 0; i < cfg.vocoder.size(); ++i) {
      const auto& st = cfg.vocoder[i];
      const std::string p = "v" + std::to_string(i);
      if (st.upsample > 1) {
        LayerSpec up;
        up.id = p + ".up";
        up.kind = LayerKind::NearestUpsample;
        up.inputs = {cur};
        up.factor = st.upsample;
        b.g.layers.push_back(std::move(up));
        cur = p + ".up";
      }
      cur = b.stage(p + ".in", cur, width, ConvStage{st.kernel, st.channels});
      const std::string r1 = b.stage(p + ".r1", cur, st.channels, ConvStage{st.kernel, st.channels});
      const std::string r2 = b.conv(p + ".r2.conv", r1, st.channels, ConvStage{st.kernel, st.channels});
      b.simple(p + ".res", LayerKind::ResidualAdd, {cur, r2});
      cur = p + ".res";
      width = st.channels;
    }
    b.conv(kWaveOut, cur, width, ConvStage{7, 1});
    // keep untrained output roughly inside [-1, 1]
    auto& w = b.g.layers.back().weights;
    std::vector<float> scaled(w.floats().begin(), w.floats().end());
    for (auto& v : scaled) v *= 0.25f;
    w = Tensor::from_floats(w.shape(), std::move(scaled));
    b.g.outputs = {kWaveOut};
    m.vocoder = std::move(b.g);
    m.vocoder.validate();
  }
  return m;
}

namespace {

Json stages_json(const std::vector<ConvStage>& v) {
  Json a = Json::array();
  for (const auto& s : v) {
    a.push_back({{"kernel", s.kernel}, {"channels", s.channels}, {"stride", s.stride}, {"dilation", s.dilation},
                 {"pad_left", s.pad_left}, {"pad_right", s.pad_right}});
  }
  return a;
}

std::vector<ConvStage> stages_from(const Json& a) {
  std::vector<ConvStage> v;
  for (const auto& j : a) {
    ConvStage s;
    s.kernel = j.at("kernel").get<std::int64_t>();
    s.channels = j.at("channels").get<std::int64_t>();
    s.stride = j.value("stride", std::int64_t{1});
    s.dilation = j.value("dilation", std::int64_t{1});
    s.pad_left = j.value("pad_left", std::int64_t{-1});
    s.pad_right = j.value("pad_right", std::int64_t{-1});
    v.push_back(s);
  }
  return v;
}

}  // namespace

Json to_json(const TtsModel& m) {
  const TTSConfig& c = m.cfg;
  Json voc = Json::array();
  for (const auto& s : c.vocoder) voc.push_back({{"upsample", s.upsample}, {"channels", s.channels}, {"kernel", s.kernel}});
  Json cfg{{"encoder", stages_json(c.encoder)},
           {"duration_predictor", stages_json(c.duration_predictor)},
           {"decoder", stages_json(c.decoder)},
           {"vocoder_pre_channels", c.vocoder_pre_channels},
           {"vocoder", voc},
           {"chunk_frames", c.chunk_frames},
           {"dur_min", c.dur_min},
           {"duration_bias", c.duration_bias},
           {"mel_bands", c.mel_bands},
           {"sample_rate_hz", c.sample_rate_hz},
           {"hop_samples", c.hop_samples}};
  return Json{{"kind", "tts"},
              {"name", m.name},
              {"config", cfg},
              {"encoder", graph_to_json(m.encoder)},
              {"decoder", graph_to_json(m.decoder)},
              {"vocoder", graph_to_json(m.vocoder)}};
}

TtsModel tts_model_from_json(const Json& j) {
  if (j.value("kind", "") != "tts") raise(ErrorKind::ParseError, "not a TTS model bundle");
  TtsModel m;
  m.name = j.value("name", "");
  const Json& c = j.at("config");
  m.cfg.encoder = stages_from(c.at("encoder"));
  m.cfg.duration_predictor = stages_from(c.at("duration_predictor"));
  m.cfg.decoder = stages_from(c.at("decoder"));
  m.cfg.vocoder_pre_channels = c.value("vocoder_pre_channels", m.cfg.vocoder_pre_channels);
  m.cfg.vocoder.clear();
  for (const auto& s : c.at("vocoder")) {
    m.cfg.vocoder.push_back({s.at("upsample").get<std::int64_t>(), s.at("channels").get<std::int64_t>(),
                             s.value("kernel", std::int64_t{3})});
  }
  m.cfg.chunk_frames = c.value("chunk_frames", m.cfg.chunk_frames);
  m.cfg.dur_min = c.value("dur_min", m.cfg.dur_min);
  m.cfg.duration_bias = c.value("duration_bias", m.cfg.duration_bias);
  m.cfg.mel_bands = c.value("mel_bands", m.cfg.mel_bands);
  m.cfg.sample_rate_hz = c.value("sample_rate_hz", m.cfg.sample_rate_hz);
  m.cfg.hop_samples = c.value("hop_samples", m.cfg.hop_samples);
  m.cfg.validate();
  m.encoder = graph_from_json(j.at("encoder"));
  m.decoder = graph_from_json(j.at("decoder"));
  m.vocoder = graph_from_json(j.at("vocoder"));
  return m;
}

Tensor one_hot(const std::vector<int>& ids, int vocab) {
  const auto n = static_cast<std::int64_t>(ids.size());
  std::vector<float> v(static_cast<std::size_t>(vocab * n), 0.0f);
  for (std::int64_t i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= vocab) raise(ErrorKind::InvalidCharacter, "symbol id out of range");
    v[static_cast<std::size_t>(id * n + i)] = 1.0f;
  }
  return Tensor::from_floats({vocab, n}, std::move(v));
}

Tensor length_regulate(const Tensor& encodings, const std::vector<std::int64_t>& durations) {
  const Tensor e = dequantize(encodings);
  if (e.rank() != 2 || e.dim(1) != static_cast<std::int64_t>(durations.size())) {
    raise(ErrorKind::ShapeMismatch, "need one duration per encoded character");
  }
  std::int64_t total = 0;
  for (auto d : durations) {
    if (d < 0) raise(ErrorKind::ShapeMismatch, "durations must be non-negative");
    total += d;
  }
  if (total == 0) raise(ErrorKind::EmptyOutput, "all durations are zero");
  const std::int64_t c = e.dim(0), n = e.dim(1);
  std::vector<float> out(static_cast<std::size_t>(c * total));
  std::int64_t col = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t r = 0; r < durations[static_cast<std::size_t>(i)]; ++r, ++col) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        out[static_cast<std::size_t>(ch * total + col)] = e.floats()[static_cast<std::size_t>(ch * n + i)];
      }
    }
  }
  return Tensor::from_floats({c, total}, std::move(out));
}

Spectrogram spectrogram_infer(const std::vector<int>& ids, const TtsModel& m,
                              const std::optional<std::vector<std::int64_t>>& durations_override) {
  if (ids.empty()) raise(ErrorKind::EmptyInput, "no characters to synthesize");
  const auto enc = graph_forward(m.encoder, one_hot(ids));
  Spectrogram s;
  if (durations_override) {
    if (durations_override->size() != ids.size()) raise(ErrorKind::ShapeMismatch, "durations override length");
    s.durations = *durations_override;
  } else {
    const Tensor pred = dequantize(enc.at(kDurationOut));
    for (float p : pred.floats()) {
      s.durations.push_back(std::max<std::int64_t>(m.cfg.dur_min, static_cast<std::int64_t>(round_half_away(p))));
    }
  }
  const Tensor frames = length_regulate(enc.at(kEncoderOut), s.durations);
  s.mel = dequantize(graph_forward(m.decoder, frames).at(kMelOut));
  return s;
}

VocoderContext vocoder_context(const GraphSpec& vocoder) {
  const auto a = analyze(vocoder).output(kWaveOut);
  return {a.past_frames, a.lookahead_frames};
}

std::vector<float> vocoder_full(const Tensor& mel, const TtsModel& m, ActivationMeter* meter) {
  const Tensor w = dequantize(graph_forward(m.vocoder, mel, meter).at(kWaveOut));
  return {w.floats().begin(), w.floats().end()};
}

std::vector<float> vocoder_sliding(const Tensor& mel, const TtsModel& m, std::int64_t chunk_frames,
                                   ActivationMeter* meter) {
  if (mel.rank() != 2 || mel.dim(0) != m.cfg.mel_bands) raise(ErrorKind::ShapeMismatch, "mel must be [mel_bands, T]");
  if (chunk_frames < 1) raise(ErrorKind::ConfigError, "chunk_frames must be >= 1");
  const std::int64_t t = mel.dim(1), bands = mel.dim(0), hop = m.cfg.hop_samples;
  if (t < 1) raise(ErrorKind::ShapeMismatch, "empty mel");
  const VocoderContext ctx = vocoder_context(m.vocoder);
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(t * hop));
  for (std::int64_t c0 = 0; c0 < t; c0 += chunk_frames) {
    const std::int64_t c1 = std::min(t, c0 + chunk_frames);
    const std::int64_t w0 = std::max<std::int64_t>(0, c0 - ctx.past);
    const std::int64_t w1 = std::min(t, c1 + ctx.future);
    std::vector<float> win(static_cast<std::size_t>(bands * (w1 - w0)));
    for (std::int64_t b = 0; b < bands; ++b)
      for (std::int64_t j = w0; j < w1; ++j) win[static_cast<std::size_t>(b * (w1 - w0) + j - w0)] = static_cast<float>(mel.value(b, j));
    const auto res = forward_window(m.vocoder, Tensor::from_floats({bands, w1 - w0}, std::move(win)), w0, t,
                                    {{kWaveOut, {c0 * hop, c1 * hop}}}, meter);
    const Tensor w = dequantize(res.at(kWaveOut));
    out.insert(out.end(), w.floats().begin(), w.floats().end());
  }
  return out;
}

Synthesis synthesize(const std::string& text, const TtsModel& m,
                     const std::optional<std::vector<std::int64_t>>& durations_override,
                     std::optional<std::int64_t> chunk_frames) {
  const auto ids = text_to_ids(text);
  Spectrogram s = spectrogram_infer(ids, m, durations_override);
  Synthesis out;
  out.durations = s.durations;
  out.mel_frames = s.mel.dim(1);
  out.audio.sample_rate_hz = m.cfg.sample_rate_hz;
  out.audio.samples = vocoder_sliding(s.mel, m, chunk_frames.value_or(m.cfg.chunk_frames));
  return out;
}

}  // namespace david
