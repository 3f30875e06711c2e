// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "david/bus.hpp"
#include "david/firmware.hpp"
#include "david/serialize.hpp"

namespace david {

using SimTime = std::int64_t;  // microseconds

inline constexpr SimTime kUsPerSecond = 1'000'000;
SimTime seconds_to_us(double s);
double us_to_seconds(SimTime t);

/// Hours of runtime from an average draw. ZeroPower / ZeroCapacity.
double battery_life_hours(double average_power_mw, double battery_wh);

struct EnergyInterval {
  std::string device;
  std::string state;
  SimTime begin = 0;
  SimTime end = 0;
  double power_mw = 0.0;

  /// mW x us = nJ; reported in mJ.
  double energy_mj() const { return power_mw * static_cast<double>(end - begin) * 1e-6; }
};

/// Piecewise-constant power per device. Each device is in one state at a
/// time; `transition` closes the running interval at `t`.
class EnergyLedger {
 public:
  void transition(const std::string& device, SimTime t, const std::string& state, double power_mw);
  /// Independent interval (actuator activity), possibly overlapping others.
  void add(const std::string& device, const std::string& state, SimTime begin, SimTime end, double power_mw);
  /// Closes every running interval at `t`.
  void close(SimTime t);

  double energy_mj(const std::string& device) const;
  double total_mj() const;
  SimTime time_in_state(const std::string& device, const std::string& state) const;
  std::optional<std::string> state(const std::string& device) const;
  std::vector<std::string> devices() const;
  const std::vector<EnergyInterval>& intervals() const noexcept { return closed_; }

 private:
  struct Running {
    std::string state;
    SimTime since = 0;
    double power_mw = 0.0;
  };
  std::map<std::string, Running> running_;
  std::vector<EnergyInterval> closed_;
  std::map<std::string, double> totals_;
};

struct ActionSpec {
  std::string actuator;
  SimTime duration = 0;
  double power_mw = 0.0;
};

struct Embodiment {
  std::string name;
  std::map<std::string, ActionSpec> actions;

  static Embodiment teddy();
  static Embodiment rover();
  static Embodiment by_name(const std::string& name);
};

struct ActionLogEntry {
  std::string action;
  std::string actuator;
  SimTime requested = 0;
  SimTime start = 0;
  SimTime end = 0;
  double energy_mj = 0.0;
};

/// One FIFO queue per actuator.
class Actuators {
 public:
  explicit Actuators(Embodiment e) : body_(std::move(e)) {}
  /// UnsupportedAction when the embodiment lacks `action`.
  ActionLogEntry dispatch(const std::string& action, SimTime t);
  const Embodiment& embodiment() const noexcept { return body_; }

 private:
  Embodiment body_;
  std::map<std::string, SimTime> busy_until_;
};

struct DialogRule {
  std::string pattern;  // substring of the transcript; "*" matches anything
  std::string intent;
  std::string response;
  std::string action;   // optional
};

std::vector<DialogRule> default_dialog_policy();

struct PlatformConfig {
  double hub_sleep_mw = 0.5;
  double hub_active_mw = 50.0;
  double node_idle_mw = 2.0;
  double flash_bytes_per_s = 100e6;
  double battery_wh = 7.4;
  double idle_timeout_s = 30.0;
  std::string wake_word = "david";
  /// Extension: a person detection also wakes the hub.
  bool vision_wake = false;
  /// How long the vision node stays active after a visual event.
  double vision_session_s = 10.0;
  std::string embodiment = "teddy";
  std::vector<DialogRule> dialog = default_dialog_policy();
  std::string audio_firmware = "asr_tone";
  std::string vision_firmware = "vision_face";
  std::string tts_firmware = "tts_default";
  std::int64_t asr_chunk_frames = 8;
  Budget budget;
  std::uint64_t seed = 0;

  static PlatformConfig from_json(const Json& j);
  static PlatformConfig from_json(const Json& j, PlatformConfig base);
  Json to_json() const;
};

enum class StimulusKind { InjectAudio, VisualEvent, AppPairRequest, Reflash, InjectMessage, End };

struct Stimulus {
  SimTime t = 0;
  StimulusKind kind = StimulusKind::End;
  std::filesystem::path wav;       // inject_audio
  std::optional<std::string> text; // inject_audio rendered as tone audio
  std::string visual;              // face | gesture | person
  std::string node;                // reflash: audio | vision | tts
  std::string firmware;            // reflash
  Message message;                 // inject_message
  DeviceId src = 0;
  DeviceId dst = 0;
  std::optional<std::uint8_t> flags;
};

struct ScenarioScript {
  std::string name = "scenario";
  std::vector<Stimulus> stimuli;
  std::optional<Json> config;  // overrides applied on top of the platform config

  /// ScriptError on malformed input; relative wav paths resolve against `base_dir`.
  static ScenarioScript from_json(const Json& j, const std::filesystem::path& base_dir = {},
                                  const SchemaRegistry& reg = default_registry());
  Json to_json(const SchemaRegistry& reg = default_registry()) const;
};

/// One hour of play per day: utterances and visual events every 20 s from
/// 17:00 to 18:00, silence otherwise.
ScenarioScript duty_cycle_script(int days = 1);
ScenarioScript silent_script(double seconds = 3600.0);

struct LogEntry {
  SimTime t = 0;
  std::string device;
  std::string event;
  Json detail;
};

struct TranscriptEntry {
  SimTime t = 0;
  std::string text;
  bool wake = false;
};

struct ResponseEntry {
  SimTime t = 0;
  std::string intent;
  std::string text;
  std::int64_t samples = 0;
};

struct AuditEntry {
  SimTime t = 0;
  std::string msg_type;
  std::string src;
  std::string dst;
  std::string reason;
};

struct ErrorEntry {
  SimTime t = 0;
  std::string kind;
  std::string message;
};

struct ScenarioReport {
  std::string name;
  SimTime duration = 0;
  std::vector<LogEntry> log;
  std::vector<TranscriptEntry> transcripts;
  std::vector<ResponseEntry> responses;
  std::vector<ActionLogEntry> actions;
  std::map<std::string, double> energy_mj;
  double total_energy_mj = 0.0;
  double average_power_mw = 0.0;
  std::optional<double> battery_life_h;
  double hub_active_fraction = 0.0;
  std::vector<AuditEntry> audit;
  std::vector<ErrorEntry> errors;
  std::uint64_t bus_frames = 0;
  std::uint64_t bus_bytes = 0;
  std::uint64_t dropped_stimuli = 0;

  /// First log entry matching device and event, if any.
  const LogEntry* find(const std::string& device, const std::string& event) const;
  Json to_json() const;
};

/// The simulated toy: hub, three nodes, actuators, bus and energy ledger.
class Platform {
 public:
  Platform(PlatformConfig cfg, std::shared_ptr<FirmwareLibrary> lib);
  ~Platform();

  /// Starts flashing `node` ("audio", "vision", "tts"); returns the completion
  /// time. Busy while the node is already flashing.
  SimTime reflash(const std::string& node, const std::string& firmware, SimTime t);

  ScenarioReport run(const ScenarioScript& script);

  const PlatformConfig& config() const noexcept { return cfg_; }
  const Firmware& firmware(const std::string& node) const;
  bool flashing(const std::string& node) const;
  const PrivacyBus& bus() const noexcept;
  const EnergyLedger& ledger() const noexcept;

 private:
  struct State;
  PlatformConfig cfg_;
  std::shared_ptr<FirmwareLibrary> lib_;
  std::unique_ptr<State> s_;
};

/// Applies script config overrides, builds a platform and runs the script.
ScenarioReport run_scenario(const ScenarioScript& script, const PlatformConfig& cfg,
                            std::shared_ptr<FirmwareLibrary> lib);

}  // namespace david
