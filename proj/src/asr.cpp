// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/asr.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "david/analyzer.hpp"
#include "builder.hpp"
#include "david/error.hpp"

namespace david {

const std::vector<std::string>& asr_vocabulary() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> s{"<blank>"};
    for (char c = 'a'; c <= 'z'; ++c) s.emplace_back(1, c);
    s.emplace_back(" ");
    s.emplace_back("'");
    return s;
  }();
  return v;
}

std::vector<int> asr_symbols(const std::string& text) {
  std::vector<int> ids;
  for (char raw : text) {
    const char c = (raw >= 'A' && raw <= 'Z') ? static_cast<char>(raw - 'A' + 'a') : raw;
    if (c >= 'a' && c <= 'z') {
      ids.push_back(c - 'a' + 1);
    } else if (c == ' ') {
      ids.push_back(27);
    } else if (c == '\'') {
      ids.push_back(28);
    } else {
      raise(ErrorKind::InvalidCharacter, std::string("character '") + raw + "' is outside the vocabulary");
    }
  }
  return ids;
}

std::int64_t SpeechNetConfig::input_channels() const {
  return front_end == FrontEnd::LogMel ? features.mel_bands : 1;
}

double SpeechNetConfig::input_rate_hz() const {
  return front_end == FrontEnd::LogMel ? 1000.0 / features.hop_ms : static_cast<double>(sample_rate_hz);
}

namespace {

std::vector<MSBlockSpec> reference_blocks(std::int64_t channels) {
  // Kernel-12 convs dominate both edges of every block: 8 of them pad 7/4 and
  // 4 pad 6/5, so the stack sees 80 past and 52 future frames.
  std::vector<MSBlockSpec> blocks;
  for (int b = 0; b < 6; ++b) {
    MSBlockSpec blk;
    blk.residual = b > 0;
    blk.projection_channels = channels;
    const std::int64_t left12 = b < 2 ? 6 : 7;
    blk.paths.push_back({{3, channels, 1, 1, 1, 1}, {3, channels, 1, 1, 1, 1}});
    blk.paths.push_back({{7, channels, 1, 1, 3, 3}, {7, channels, 1, 1, 3, 3}});
    blk.paths.push_back({{12, channels, 1, 1, left12, 11 - left12}, {12, channels, 1, 1, left12, 11 - left12}});
    blocks.push_back(std::move(blk));
  }
  return blocks;
}

void check_config(const SpeechNetConfig& cfg, std::vector<std::string>* warnings) {
  auto fail = [](const std::string& what) { raise(ErrorKind::ConfigError, what); };
  if (cfg.head_classes != kAsrVocabSize) fail("head must produce 29 classes");
  if (cfg.blocks.empty()) fail("SpeechNet needs at least one MSBlock");
  if (cfg.blocks.front().residual) fail("the first MSBlock must not be residual");
  if (cfg.front_end == FrontEnd::MuLawConv && cfg.learned_front.empty()) fail("mu-law front-end needs conv stages");
  if (cfg.front_end == FrontEnd::LogMel) cfg.features.validate(cfg.sample_rate_hz);
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    const std::string where = "block " + std::to_string(b) + ": ";
    if (blk.paths.empty()) fail(where + "needs at least one path");
    std::set<std::int64_t> kernels;
    for (const auto& p : blk.paths) {
      if (p.size() < 2) fail(where + "every path needs two or more conv stages");
      if (!kernels.insert(p.front().kernel).second) fail(where + "path kernel sizes must differ");
      for (const auto& st : p) {
        if (st.kernel < 1 || st.channels < 1 || st.stride < 1 || st.dilation < 1) fail(where + "invalid conv stage");
        if (st.kernel != p.front().kernel) fail(where + "stages within a path share one kernel size");
      }
    }
    if (blk.paths.size() < 3 && warnings) {
      warnings->push_back(where + std::to_string(blk.paths.size()) + " path(s); the reference block uses three");
    }
  }
}

}  // namespace

SpeechNetConfig reference_speechnet1_config(std::int64_t channels) {
  SpeechNetConfig cfg;
  cfg.blocks = reference_blocks(channels);
  return cfg;
}

SpeechNetConfig reference_speechnet2_config(std::int64_t channels) {
  SpeechNetConfig cfg;
  cfg.front_end = FrontEnd::MuLawConv;
  cfg.learned_front = {{20, 32, 10, 1, 10, 0}, {16, 48, 8, 1, 8, 0}, {10, channels, 5, 1, 5, 0}};
  cfg.blocks = reference_blocks(channels);
  return cfg;
}

GraphSpec build_speechnet(const SpeechNetConfig& cfg, std::uint64_t seed, std::vector<std::string>* warnings) {
  check_config(cfg, warnings);
  detail::Builder bld;
  bld.rng.seed(seed);
  bld.batchnorm = cfg.batchnorm;
  GraphSpec& g = bld.g;
  g.input.time_axis = 1;
  g.input.frame_rate_hz = cfg.input_rate_hz();
  g.input.shape = {cfg.input_channels(), cfg.front_end == FrontEnd::LogMel ? 200 : 32000};

  std::string cur = kGraphInput;
  std::int64_t width = cfg.input_channels();
  for (std::size_t i = 0; i < cfg.learned_front.size() && cfg.front_end == FrontEnd::MuLawConv; ++i) {
    cur = bld.stage("fe" + std::to_string(i), cur, width, cfg.learned_front[i]);
    width = cfg.learned_front[i].channels;
  }
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const auto& blk = cfg.blocks[b];
    const std::string pre = "b" + std::to_string(b);
    std::vector<std::string> ends;
    std::int64_t cat_width = 0;
    for (std::size_t p = 0; p < blk.paths.size(); ++p) {
      std::string x = cur;
      std::int64_t ci = width;
      for (std::size_t s = 0; s < blk.paths[p].size(); ++s) {
        x = bld.stage(pre + ".p" + std::to_string(p) + ".s" + std::to_string(s), x, ci, blk.paths[p][s]);
        ci = blk.paths[p][s].channels;
      }
      ends.push_back(x);
      cat_width += ci;
    }
    std::string merged = ends.front();
    if (ends.size() > 1) {
      bld.simple(pre + ".cat", LayerKind::ConcatChannels, ends);
      merged = pre + ".cat";
    }
    const std::int64_t proj_width = blk.projection_channels > 0 ? blk.projection_channels : width;
    if (blk.residual && proj_width != width) {
      raise(ErrorKind::ConfigError, pre + ": residual block projection must keep the input width");
    }
    merged = bld.conv(pre + ".proj", merged, cat_width, ConvStage{1, proj_width, 1, 1, 0, 0});
    if (blk.residual) {
      bld.simple(pre + ".res", LayerKind::ResidualAdd, {cur, merged});
      merged = pre + ".res";
    }
    cur = merged;
    width = proj_width;
  }
  LayerSpec head;
  head.id = "head";
  head.kind = LayerKind::Dense;
  head.inputs = {cur};
  head.in_channels = width;
  head.out_channels = cfg.head_classes;
  const double a = std::sqrt(6.0 / static_cast<double>(width));
  std::vector<float> w(static_cast<std::size_t>(width * cfg.head_classes));
  for (auto& v : w) v = bld.uniform(-a, a);
  head.weights = Tensor::from_floats({cfg.head_classes, width}, std::move(w));
  head.bias.assign(static_cast<std::size_t>(cfg.head_classes), 0.0f);
  g.layers.push_back(std::move(head));
  bld.simple(kPosteriors, LayerKind::Softmax, {"head"});
  g.outputs = {kPosteriors};
  g.validate();
  return std::move(bld.g);
}

Json to_json(const AsrModel& m) {
  return Json{{"kind", "asr"},
              {"name", m.name},
              {"front_end", m.front_end == FrontEnd::LogMel ? "logmel" : "mulaw_conv"},
              {"sample_rate_hz", m.sample_rate_hz},
              {"features", to_json(m.features)},
              {"graph", graph_to_json(m.graph)}};
}

AsrModel asr_model_from_json(const Json& j) {
  if (j.value("kind", "") != "asr") raise(ErrorKind::ParseError, "not an ASR model bundle");
  AsrModel m;
  m.name = j.value("name", "");
  const std::string fe = j.value("front_end", "logmel");
  if (fe == "logmel") {
    m.front_end = FrontEnd::LogMel;
  } else if (fe == "mulaw_conv") {
    m.front_end = FrontEnd::MuLawConv;
  } else {
    raise(ErrorKind::ParseError, "unknown front end '" + fe + "'");
  }
  m.sample_rate_hz = j.value("sample_rate_hz", 16000);
  m.features = feature_config_from_json(j.value("features", Json::object()));
  m.graph = graph_from_json(j.at("graph"));
  if (m.graph.layer(kPosteriors).kind != LayerKind::Softmax) {
    raise(ErrorKind::ParseError, "ASR graph must end in a softmax named 'posteriors'");
  }
  return m;
}

AsrModel make_asr_model(const SpeechNetConfig& cfg, std::uint64_t seed, std::string name) {
  AsrModel m;
  m.name = std::move(name);
  m.front_end = cfg.front_end;
  m.features = cfg.features;
  m.sample_rate_hz = cfg.sample_rate_hz;
  m.graph = build_speechnet(cfg, seed);
  return m;
}

namespace {

constexpr int kToneBase = 4;
constexpr std::int64_t kToneWidth = 28;
constexpr float kToneBlankBias = 2.5f;

std::int64_t tone_band(int symbol) { return kToneBase + 2 * (symbol - 1); }

// Copies input channel `src_of(co)` to output channel co at the tap that
// aligns output frame o with input frame o.
void set_delta(LayerSpec& l, const std::function<std::int64_t(std::int64_t)>& src_of, float gain) {
  std::vector<float> w(static_cast<std::size_t>(l.out_channels * l.in_channels * l.kernel), 0.0f);
  const std::int64_t tap = l.pad_left / l.dilation;
  for (std::int64_t co = 0; co < l.out_channels; ++co) {
    w[static_cast<std::size_t>((co * l.in_channels + src_of(co)) * l.kernel + tap)] = gain;
  }
  l.weights = Tensor::from_floats(l.weights.shape(), std::move(w));
  std::fill(l.bias.begin(), l.bias.end(), 0.0f);
}

}  // namespace

double tone_frequency_hz(int symbol) {
  if (symbol < 1 || symbol >= kAsrVocabSize) raise(ErrorKind::InvalidCharacter, "tone symbol out of range");
  return mel_band_centers(FeatureConfig{})[static_cast<std::size_t>(tone_band(symbol))];
}

AudioBuffer tone_audio(const std::string& text, double lead_silence_s, double amplitude) {
  AudioBuffer a;
  const int sr = a.sample_rate_hz;
  const auto tone_len = static_cast<std::size_t>(sr / 10);
  a.samples.assign(static_cast<std::size_t>(lead_silence_s * sr), 0.0f);
  for (int s : asr_symbols(text)) {
    const double f = tone_frequency_hz(s);
    for (std::size_t i = 0; i < tone_len; ++i) {
      a.samples.push_back(static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / sr)));
    }
    a.samples.insert(a.samples.end(), tone_len, 0.0f);
  }
  return a;
}

AsrModel tone_asr_model() {
  SpeechNetConfig cfg = reference_speechnet1_config(kToneWidth);
  cfg.features.norm = NormStats{std::vector<float>(64, -8.0f), std::vector<float>(64, 4.0f)};
  GraphSpec g = build_speechnet(cfg, 0);
  for (auto& l : g.layers) {
    if (l.kind == LayerKind::BatchNorm) {
      std::fill(l.gamma.begin(), l.gamma.end(), 1.0f);
      std::fill(l.beta.begin(), l.beta.end(), 0.0f);
      std::fill(l.mean.begin(), l.mean.end(), 0.0f);
      std::fill(l.var.begin(), l.var.end(), 1.0f);
      l.eps = 0.0;
    } else if (l.kind == LayerKind::Conv1d && l.id.ends_with(".proj")) {
      std::vector<float> w(static_cast<std::size_t>(l.out_channels * l.in_channels), 0.0f);
      const std::int64_t paths = l.in_channels / l.out_channels;
      for (std::int64_t co = 0; co < l.out_channels; ++co) {
        for (std::int64_t p = 0; p < paths; ++p) {
          w[static_cast<std::size_t>(co * l.in_channels + p * l.out_channels + co)] = 1.0f / static_cast<float>(paths);
        }
      }
      l.weights = Tensor::from_floats(l.weights.shape(), std::move(w));
      std::fill(l.bias.begin(), l.bias.end(), 0.0f);
    } else if (l.kind == LayerKind::Conv1d) {
      const bool first = l.inputs.front() == kGraphInput;
      set_delta(l, [first](std::int64_t co) { return first ? tone_band(static_cast<int>(co) + 1) : co; }, 1.0f);
    }
  }
  // Residual blocks double the signal; undo that in the head.
  std::int64_t residual = 0;
  for (const auto& l : g.layers) residual += l.kind == LayerKind::ResidualAdd;
  LayerSpec& head = g.layer("head");
  std::vector<float> w(static_cast<std::size_t>(head.out_channels * head.in_channels), 0.0f);
  const float gain = 1.0f / static_cast<float>(std::int64_t{1} << residual);
  for (std::int64_t c = 0; c < head.in_channels; ++c) w[static_cast<std::size_t>((c + 1) * head.in_channels + c)] = gain;
  head.weights = Tensor::from_floats(head.weights.shape(), std::move(w));
  std::fill(head.bias.begin(), head.bias.end(), 0.0f);
  head.bias[kBlank] = kToneBlankBias;
  g.validate();

  AsrModel m;
  m.name = "speechnet1-tone";
  m.front_end = FrontEnd::LogMel;
  m.features = cfg.features;
  m.graph = std::move(g);
  return m;
}

Tensor mulaw_midpoints(const AudioBuffer& audio) {
  std::vector<float> v;
  v.reserve(audio.samples.size());
  for (float s : audio.samples) v.push_back(static_cast<float>(mulaw_decode(mulaw_encode(s))));
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::from_floats({1, n}, std::move(v));
}

Tensor asr_input(const AsrModel& m, const AudioBuffer& audio) {
  if (audio.sample_rate_hz != m.sample_rate_hz) {
    raise(ErrorKind::ConfigError, "audio sample rate " + std::to_string(audio.sample_rate_hz) + " Hz, model expects " +
                                      std::to_string(m.sample_rate_hz) + " Hz");
  }
  return m.front_end == FrontEnd::LogMel ? features(audio, m.features) : mulaw_midpoints(audio);
}

namespace {

Tensor transpose_rows(const Tensor& t) {
  const Tensor f = dequantize(t);
  const std::int64_t c = f.dim(0), n = f.dim(1);
  std::vector<float> out(static_cast<std::size_t>(c * n));
  for (std::int64_t i = 0; i < c; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[static_cast<std::size_t>(j * c + i)] = f.floats()[static_cast<std::size_t>(i * n + j)];
  return Tensor::from_floats({n, c}, std::move(out));
}

}  // namespace

AsrStream::AsrStream(const GraphSpec& g) : exec_(g) {
  const auto r = analyze(g).output(kPosteriors);
  receptive_field_ = r.receptive_field_frames;
  lookahead_ = r.lookahead_frames;
}

Tensor AsrStream::step(const Tensor& frames) { return transpose_rows(exec_.push(frames).at(kPosteriors)); }
Tensor AsrStream::finish() { return transpose_rows(exec_.finish().at(kPosteriors)); }
std::int64_t AsrStream::emitted() const { return exec_.emitted(kPosteriors); }

Tensor stream_step(AsrStream& state, const Tensor& frames) { return state.step(frames); }

Tensor offline_posteriors(const GraphSpec& g, const Tensor& input) {
  return transpose_rows(graph_forward(g, input).at(kPosteriors));
}

std::vector<int> ctc_greedy_ids(const Tensor& post) {
  const Tensor p = dequantize(post);
  std::vector<int> out;
  int prev = -1;
  const std::int64_t v = p.dim(1);
  for (std::int64_t t = 0; t < p.dim(0); ++t) {
    int best = 0;
    for (std::int64_t k = 1; k < v; ++k) {
      if (p.floats()[static_cast<std::size_t>(t * v + k)] > p.floats()[static_cast<std::size_t>(t * v + best)]) best = static_cast<int>(k);
    }
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::string ctc_greedy_decode(const Tensor& posteriors, const std::vector<std::string>& vocab) {
  if (posteriors.rank() != 2 || posteriors.dim(1) != static_cast<std::int64_t>(vocab.size())) {
    raise(ErrorKind::ShapeMismatch, "posteriors width differs from the vocabulary size");
  }
  std::string s;
  for (int id : ctc_greedy_ids(posteriors)) s += vocab[static_cast<std::size_t>(id)];
  return s;
}

std::string ctc_greedy_decode(const Tensor& posteriors) { return ctc_greedy_decode(posteriors, asr_vocabulary()); }

double ctc_forward_score(const Tensor& log_probs, const std::vector<int>& target) {
  const Tensor lp = dequantize(log_probs);
  if (lp.rank() != 2 || lp.dim(0) < 1) raise(ErrorKind::ShapeMismatch, "log_probs must be [T >= 1, V]");
  const std::int64_t t_n = lp.dim(0), v = lp.dim(1);
  for (int s : target) {
    if (s <= kBlank || s >= v) raise(ErrorKind::InvalidCharacter, "target symbol outside the non-blank vocabulary");
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  auto lse = [](double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  };
  auto at = [&](std::int64_t t, int k) { return static_cast<double>(lp.floats()[static_cast<std::size_t>(t * v + k)]); };
  // Extended label sequence: blank, l1, blank, l2, ..., blank.
  const std::size_t s_n = 2 * target.size() + 1;
  auto label = [&](std::size_t s) { return s % 2 == 0 ? kBlank : target[s / 2]; };
  std::vector<double> alpha(s_n, kNegInf), next(s_n);
  alpha[0] = at(0, kBlank);
  if (s_n > 1) alpha[1] = at(0, label(1));
  for (std::int64_t t = 1; t < t_n; ++t) {
    for (std::size_t s = 0; s < s_n; ++s) {
      double a = alpha[s];
      if (s >= 1) a = lse(a, alpha[s - 1]);
      if (s >= 2 && label(s) != kBlank && label(s) != label(s - 2)) a = lse(a, alpha[s - 2]);
      next[s] = a == kNegInf ? kNegInf : a + at(t, label(s));
    }
    alpha.swap(next);
  }
  double total = alpha[s_n - 1];
  if (s_n > 1) total = lse(total, alpha[s_n - 2]);
  return total == kNegInf ? 0.0 : std::exp(total);
}

Transcript transcribe(const AsrModel& m, const AudioBuffer& audio, std::int64_t chunk_frames) {
  const Tensor x = asr_input(m, audio);
  const std::int64_t c = x.dim(0), n = x.dim(1);
  AsrStream stream(m.graph);
  std::vector<float> rows;
  auto take = [&](const Tensor& p) { rows.insert(rows.end(), p.floats().begin(), p.floats().end()); };
  const std::int64_t step = chunk_frames > 0 ? chunk_frames : std::max<std::int64_t>(n, 1);
  for (std::int64_t pos = 0; pos < n; pos += step) {
    const std::int64_t len = std::min(step, n - pos);
    std::vector<float> chunk(static_cast<std::size_t>(c * len));
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t j = 0; j < len; ++j) chunk[static_cast<std::size_t>(ch * len + j)] = x.floats()[static_cast<std::size_t>(ch * n + pos + j)];
    take(stream.step(Tensor::from_floats({c, len}, std::move(chunk))));
  }
  take(stream.finish());
  Transcript tr;
  const auto frames = static_cast<std::int64_t>(rows.size() / kAsrVocabSize);
  tr.posteriors = Tensor::from_floats({frames, kAsrVocabSize}, std::move(rows));
  // Replay the greedy collapse frame by frame to timestamp each character.
  int prev = -1;
  const auto& vocab = asr_vocabulary();
  for (std::int64_t t = 0; t < frames; ++t) {
    int best = 0;
    for (int k = 1; k < kAsrVocabSize; ++k) {
      if (tr.posteriors.floats()[static_cast<std::size_t>(t * kAsrVocabSize + k)] >
          tr.posteriors.floats()[static_cast<std::size_t>(t * kAsrVocabSize + best)]) {
        best = k;
      }
    }
    if (best != prev && best != kBlank) {
      tr.text += vocab[static_cast<std::size_t>(best)];
      tr.char_frames.push_back(t);
    }
    prev = best;
  }
  return tr;
}

}  // namespace david
