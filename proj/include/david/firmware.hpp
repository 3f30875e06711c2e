// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "david/analyzer.hpp"
#include "david/asr.hpp"
#include "david/bus.hpp"
#include "david/graph.hpp"
#include "david/tts.hpp"

namespace david {

enum class FirmwareRole { Vision, AudioAsr, TtsSpeaker };
std::string to_string(FirmwareRole r);
FirmwareRole firmware_role_from_string(const std::string& s);

/// Three detector branches (face, hand, person) over one RGB frame. Each
/// branch runs `full_res_convs` 3x3 convs at input resolution, halves once,
/// runs `half_res_convs` more at twice the width, halves again and ends in
/// 1x1 heads on a coarse grid.
struct VisionConfig {
  std::int64_t height = 320;
  std::int64_t width = 320;
  double fps = 30.0;
  std::int64_t channels = 48;
  int full_res_convs = 7;
  int half_res_convs = 6;
  int expression_classes = 7;
  int gesture_classes = 5;
  int embedding_dim = 128;
  int landmarks = 5;
  /// Resolution actually executed in simulation; analysis uses height x width.
  std::int64_t exec_size = 16;
};

namespace vision_out {
inline constexpr const char* kFaceScore = "face.score";
inline constexpr const char* kFaceBox = "face.box";
inline constexpr const char* kLandmarks = "face.landmarks";
inline constexpr const char* kExpression = "expression";
inline constexpr const char* kEmbedding = "embedding";
inline constexpr const char* kHandScore = "hand.score";
inline constexpr const char* kHandBox = "hand.box";
inline constexpr const char* kGesture = "gesture";
inline constexpr const char* kPersonScore = "person.score";
inline constexpr const char* kPersonBox = "person.box";
}  // namespace vision_out

GraphSpec vision_graph(const VisionConfig& cfg, std::uint64_t seed);

struct Firmware {
  std::string name;
  FirmwareRole role = FirmwareRole::Vision;
  std::uint64_t size_bytes = 2'000'000;
  GraphSpec graph;
  AnalysisReport analysis;
  SchemaRegistry schema;
  std::shared_ptr<const AsrModel> asr;
  std::shared_ptr<const TtsModel> tts;
  VisionConfig vision;

  /// Node power while the model runs at its nominal rate.
  double active_power_mw() const { return analysis.estimated_power_mw; }
};

Firmware make_vision_firmware(std::string name, const VisionConfig& cfg, std::uint64_t seed, const Budget& budget = {});
Firmware make_asr_firmware(std::string name, AsrModel model, const Budget& budget = {});
Firmware make_tts_firmware(std::string name, TtsModel model, const Budget& budget = {});

/// Named firmware images; entries are built on first use.
class FirmwareLibrary {
 public:
  using Factory = std::function<Firmware()>;

  void add(const std::string& name, FirmwareRole role, Factory make);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  FirmwareRole role(const std::string& name) const;
  /// ScriptError for an unknown name.
  std::shared_ptr<const Firmware> get(const std::string& name);
  std::vector<std::string> names() const;

 private:
  struct Entry {
    FirmwareRole role;
    Factory make;
    std::shared_ptr<const Firmware> built;
  };
  std::map<std::string, Entry> entries_;
};

/// vision_face, vision_gesture (larger gesture head), asr_tone, asr_speechnet1,
/// tts_default. Random weights are drawn from `seed`.
FirmwareLibrary default_firmware_library(std::uint64_t seed, const Budget& budget = {});

}  // namespace david
