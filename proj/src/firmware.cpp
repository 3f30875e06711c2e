// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/firmware.hpp"

#include <cmath>
#include <random>

#include "david/error.hpp"

namespace david {

std::string to_string(FirmwareRole r) {
  switch (r) {
    case FirmwareRole::Vision: return "vision";
    case FirmwareRole::AudioAsr: return "audio_asr";
    case FirmwareRole::TtsSpeaker: return "tts_speaker";
  }
  return "?";
}

FirmwareRole firmware_role_from_string(const std::string& s) {
  if (s == "vision") return FirmwareRole::Vision;
  if (s == "audio_asr") return FirmwareRole::AudioAsr;
  if (s == "tts_speaker") return FirmwareRole::TtsSpeaker;
  raise(ErrorKind::ParseError, "unknown firmware role '" + s + "'");
}

namespace {

struct VisionBuilder {
  GraphSpec g;
  std::mt19937_64 rng;

  std::string conv(const std::string& id, const std::string& in, std::int64_t ci, std::int64_t co, std::int64_t k,
                   std::int64_t stride, bool relu) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::Conv2d;
    l.inputs = {in};
    l.in_channels = ci;
    l.out_channels = co;
    l.kernel = k;
    l.kernel_h = k;
    l.stride = stride;
    l.pad_left = l.pad_right = l.pad_top = l.pad_bottom = (k - 1) / 2;
    const double a = std::sqrt(6.0 / static_cast<double>(ci * k * k));
    std::uniform_real_distribution<double> u(-a, a);
    std::vector<float> w(static_cast<std::size_t>(co * ci * k * k));
    for (auto& v : w) v = static_cast<float>(u(rng));
    l.weights = Tensor::from_floats({co, ci, k, k}, std::move(w));
    std::uniform_real_distribution<double> b(-0.05, 0.05);
    for (std::int64_t c = 0; c < co; ++c) l.bias.push_back(static_cast<float>(b(rng)));
    g.layers.push_back(std::move(l));
    if (!relu) return id;
    LayerSpec r;
    r.id = id + ".relu";
    r.kind = LayerKind::Relu;
    r.inputs = {id};
    g.layers.push_back(std::move(r));
    return id + ".relu";
  }

  void softmax(const std::string& id, const std::string& in) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::Softmax;
    l.inputs = {in};
    g.layers.push_back(std::move(l));
  }

  std::string backbone(const std::string& p, const VisionConfig& cfg) {
    const std::int64_t c = cfg.channels;
    std::string cur = conv(p + ".stem", kGraphInput, 3, c, 3, 1, true);
    for (int i = 0; i < cfg.full_res_convs; ++i) cur = conv(p + ".f" + std::to_string(i), cur, c, c, 3, 1, true);
    cur = conv(p + ".down0", cur, c, 2 * c, 3, 2, true);
    for (int i = 0; i < cfg.half_res_convs; ++i) cur = conv(p + ".h" + std::to_string(i), cur, 2 * c, 2 * c, 3, 1, true);
    return conv(p + ".down1", cur, 2 * c, 2 * c, 3, 2, true);
  }
};

}  // namespace

GraphSpec vision_graph(const VisionConfig& cfg, std::uint64_t seed) {
  if (cfg.channels < 1 || cfg.height < 4 || cfg.width < 4 || cfg.fps <= 0 || cfg.exec_size < 4) {
    raise(ErrorKind::ConfigError, "invalid vision config");
  }
  VisionBuilder b;
  b.rng.seed(seed);
  b.g.input.shape = {3, cfg.height, cfg.width};
  b.g.input.frame_rate_hz = cfg.fps;
  const std::int64_t w = 2 * cfg.channels;
  namespace o = vision_out;

  const std::string face = b.backbone("face", cfg);
  b.conv(o::kFaceScore, face, w, 1, 1, 1, false);
  b.conv(o::kFaceBox, face, w, 4, 1, 1, false);
  b.conv(o::kLandmarks, face, w, 2 * cfg.landmarks, 1, 1, false);
  b.softmax(o::kExpression, b.conv("expression.logits", face, w, cfg.expression_classes, 1, 1, false));
  b.conv(o::kEmbedding, face, w, cfg.embedding_dim, 1, 1, false);

  const std::string hand = b.backbone("hand", cfg);
  b.conv(o::kHandScore, hand, w, 1, 1, 1, false);
  b.conv(o::kHandBox, hand, w, 4, 1, 1, false);
  b.softmax(o::kGesture, b.conv("gesture.logits", hand, w, cfg.gesture_classes, 1, 1, false));

  const std::string body = b.backbone("person", cfg);
  b.conv(o::kPersonScore, body, w, 1, 1, 1, false);
  b.conv(o::kPersonBox, body, w, 4, 1, 1, false);

  b.g.outputs = {o::kFaceScore, o::kFaceBox,  o::kLandmarks,   o::kExpression, o::kEmbedding,
                 o::kHandScore, o::kHandBox,  o::kGesture,     o::kPersonScore, o::kPersonBox};
  b.g.validate();
  return std::move(b.g);
}

Firmware make_vision_firmware(std::string name, const VisionConfig& cfg, std::uint64_t seed, const Budget& budget) {
  Firmware f;
  f.name = std::move(name);
  f.role = FirmwareRole::Vision;
  f.vision = cfg;
  f.graph = vision_graph(cfg, seed);
  f.analysis = analyze(f.graph, cfg.fps, budget);
  f.schema = default_registry();
  return f;
}

Firmware make_asr_firmware(std::string name, AsrModel model, const Budget& budget) {
  Firmware f;
  f.name = std::move(name);
  f.role = FirmwareRole::AudioAsr;
  f.graph = model.graph;
  f.analysis = analyze(f.graph, budget);
  f.schema = default_registry();
  f.asr = std::make_shared<const AsrModel>(std::move(model));
  return f;
}

Firmware make_tts_firmware(std::string name, TtsModel model, const Budget& budget) {
  Firmware f;
  f.name = std::move(name);
  f.role = FirmwareRole::TtsSpeaker;
  f.graph = model.vocoder;
  // encoder and decoder run once per utterance; the vocoder runs per output frame
  f.analysis = analyze(f.graph, budget);
  f.schema = default_registry();
  f.tts = std::make_shared<const TtsModel>(std::move(model));
  return f;
}

void FirmwareLibrary::add(const std::string& name, FirmwareRole role, Factory make) {
  entries_[name] = Entry{role, std::move(make), nullptr};
}

FirmwareRole FirmwareLibrary::role(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) raise(ErrorKind::ScriptError, "unknown firmware '" + name + "'");
  return it->second.role;
}

std::shared_ptr<const Firmware> FirmwareLibrary::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) raise(ErrorKind::ScriptError, "unknown firmware '" + name + "'");
  if (!it->second.built) it->second.built = std::make_shared<const Firmware>(it->second.make());
  return it->second.built;
}

std::vector<std::string> FirmwareLibrary::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : entries_) out.push_back(n);
  return out;
}

FirmwareLibrary default_firmware_library(std::uint64_t seed, const Budget& budget) {
  FirmwareLibrary lib;
  lib.add("vision_face", FirmwareRole::Vision,
          [=] { return make_vision_firmware("vision_face", VisionConfig{}, seed ^ 0x5649, budget); });
  lib.add("vision_gesture", FirmwareRole::Vision, [=] {
    VisionConfig cfg;
    cfg.gesture_classes = 12;
    return make_vision_firmware("vision_gesture", cfg, seed ^ 0x4745, budget);
  });
  lib.add("asr_tone", FirmwareRole::AudioAsr, [=] { return make_asr_firmware("asr_tone", tone_asr_model(), budget); });
  lib.add("asr_speechnet1", FirmwareRole::AudioAsr, [=] {
    return make_asr_firmware("asr_speechnet1", make_asr_model(reference_speechnet1_config(), seed ^ 0x4153, "speechnet1"),
                             budget);
  });
  lib.add("tts_default", FirmwareRole::TtsSpeaker,
          [=] { return make_tts_firmware("tts_default", make_tts_model(TTSConfig{}, seed ^ 0x5454, "tts_default"), budget); });
  return lib;
}

}  // namespace david
