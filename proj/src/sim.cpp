// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/sim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "david/audio.hpp"
#include "david/error.hpp"
#include "david/executor.hpp"

namespace david {

SimTime seconds_to_us(double s) { return static_cast<SimTime>(std::llround(s * 1e6)); }
double us_to_seconds(SimTime t) { return static_cast<double>(t) * 1e-6; }

double battery_life_hours(double average_power_mw, double battery_wh) {
  if (!(battery_wh > 0)) raise(ErrorKind::ZeroCapacity, "battery capacity must be positive");
  if (!(average_power_mw > 0)) raise(ErrorKind::ZeroPower, "average power must be positive");
  return battery_wh * 1000.0 / average_power_mw;
}

void EnergyLedger::transition(const std::string& device, SimTime t, const std::string& state, double power_mw) {
  auto it = running_.find(device);
  if (it != running_.end()) {
    Running& r = it->second;
    if (t < r.since) raise(ErrorKind::ConfigError, "ledger transition for '" + device + "' goes back in time");
    if (t > r.since) add(device, r.state, r.since, t, r.power_mw);
    r = Running{state, t, power_mw};
  } else {
    running_.emplace(device, Running{state, t, power_mw});
  }
}

void EnergyLedger::add(const std::string& device, const std::string& state, SimTime begin, SimTime end, double power_mw) {
  if (end < begin) raise(ErrorKind::ConfigError, "interval ends before it begins");
  closed_.push_back({device, state, begin, end, power_mw});
  totals_[device] += closed_.back().energy_mj();
}

void EnergyLedger::close(SimTime t) {
  for (auto& [device, r] : running_) {
    if (t > r.since) add(device, r.state, r.since, t, r.power_mw);
    r.since = std::max(r.since, t);
  }
}

double EnergyLedger::energy_mj(const std::string& device) const {
  auto it = totals_.find(device);
  return it == totals_.end() ? 0.0 : it->second;
}

double EnergyLedger::total_mj() const {
  double s = 0.0;
  for (const auto& [_, e] : totals_) s += e;
  return s;
}

SimTime EnergyLedger::time_in_state(const std::string& device, const std::string& state) const {
  SimTime s = 0;
  for (const auto& iv : closed_)
    if (iv.device == device && iv.state == state) s += iv.end - iv.begin;
  return s;
}

std::optional<std::string> EnergyLedger::state(const std::string& device) const {
  auto it = running_.find(device);
  if (it == running_.end()) return std::nullopt;
  return it->second.state;
}

std::vector<std::string> EnergyLedger::devices() const {
  std::vector<std::string> out;
  for (const auto& [d, _] : running_) out.push_back(d);
  for (const auto& [d, _] : totals_)
    if (!running_.count(d)) out.push_back(d);
  std::sort(out.begin(), out.end());
  return out;
}

Embodiment Embodiment::teddy() {
  return {"teddy",
          {{"eyes_follow", {"eyes", 1'500'000, 30.0}},
           {"antennae_happy", {"antennae", 1'000'000, 40.0}},
           {"antennae_confused", {"antennae", 1'200'000, 40.0}},
           {"nod", {"head", 800'000, 60.0}}}};
}

Embodiment Embodiment::rover() {
  return {"rover",
          {{"rotate_180", {"wheels", 1'500'000, 400.0}},
           {"rotate_360", {"wheels", 3'000'000, 400.0}},
           {"eyes_follow", {"eyes", 1'500'000, 30.0}},
           {"antennae_happy", {"antennae", 1'000'000, 40.0}},
           {"antennae_confused", {"antennae", 1'200'000, 40.0}}}};
}

Embodiment Embodiment::by_name(const std::string& name) {
  if (name == "teddy") return teddy();
  if (name == "rover") return rover();
  raise(ErrorKind::ConfigError, "unknown embodiment '" + name + "'");
}

ActionLogEntry Actuators::dispatch(const std::string& action, SimTime t) {
  auto it = body_.actions.find(action);
  if (it == body_.actions.end()) {
    raise(ErrorKind::UnsupportedAction, "action '" + action + "' is not available on the " + body_.name);
  }
  const ActionSpec& a = it->second;
  SimTime& busy = busy_until_[a.actuator];
  ActionLogEntry e;
  e.action = action;
  e.actuator = a.actuator;
  e.requested = t;
  e.start = std::max(t, busy);
  e.end = e.start + a.duration;
  e.energy_mj = a.power_mw * static_cast<double>(a.duration) * 1e-6;
  busy = e.end;
  return e;
}

std::vector<DialogRule> default_dialog_policy() {
  return {{"hello", "greet", "hello friend", "antennae_happy"},
          {"hey", "greet", "hi there", "eyes_follow"},
          {"yes", "agree", "great", "nod"},
          {"spin", "spin", "watch me", "rotate_360"},
          {"*", "unknown", "say that again", "antennae_confused"}};
}

PlatformConfig PlatformConfig::from_json(const Json& j) { return from_json(j, PlatformConfig{}); }

PlatformConfig PlatformConfig::from_json(const Json& j, PlatformConfig c) {
  try {
    c.hub_sleep_mw = j.value("hub_sleep_mw", c.hub_sleep_mw);
    c.hub_active_mw = j.value("hub_active_mw", c.hub_active_mw);
    c.node_idle_mw = j.value("node_idle_mw", c.node_idle_mw);
    c.flash_bytes_per_s = j.value("flash_bytes_per_s", c.flash_bytes_per_s);
    c.battery_wh = j.value("battery_wh", c.battery_wh);
    c.idle_timeout_s = j.value("idle_timeout_s", c.idle_timeout_s);
    c.wake_word = j.value("wake_word", c.wake_word);
    c.vision_wake = j.value("vision_wake", c.vision_wake);
    c.vision_session_s = j.value("vision_session_s", c.vision_session_s);
    c.embodiment = j.value("embodiment", c.embodiment);
    c.audio_firmware = j.value("audio_firmware", c.audio_firmware);
    c.vision_firmware = j.value("vision_firmware", c.vision_firmware);
    c.tts_firmware = j.value("tts_firmware", c.tts_firmware);
    c.asr_chunk_frames = j.value("asr_chunk_frames", c.asr_chunk_frames);
    c.seed = j.value("seed", c.seed);
    if (j.contains("dialog")) {
      c.dialog.clear();
      for (const auto& r : j.at("dialog")) {
        c.dialog.push_back({r.at("pattern").get<std::string>(), r.value("intent", ""), r.at("response").get<std::string>(),
                            r.value("action", "")});
      }
    }
    if (j.contains("budget")) {
      const Json& b = j.at("budget");
      c.budget.tops_per_watt = b.value("tops_per_watt", c.budget.tops_per_watt);
      c.budget.power_budget_mw = b.value("power_budget_mw", c.budget.power_budget_mw);
      c.budget.ops_per_mac = b.value("ops_per_mac", c.budget.ops_per_mac);
      c.budget.idle_floor_mw = b.value("idle_floor_mw", c.budget.idle_floor_mw);
    }
  } catch (const Json::exception& e) {
    raise(ErrorKind::ScriptError, std::string("platform config: ") + e.what());
  }
  if (c.hub_sleep_mw < 0 || c.hub_active_mw < 0 || c.node_idle_mw < 0 || !(c.flash_bytes_per_s > 0) ||
      !(c.idle_timeout_s > 0) || c.vision_session_s < 0 || c.wake_word.empty()) {
    raise(ErrorKind::ScriptError, "platform config out of range");
  }
  Embodiment::by_name(c.embodiment);
  return c;
}

Json PlatformConfig::to_json() const {
  Json rules = Json::array();
  for (const auto& r : dialog) rules.push_back({{"pattern", r.pattern}, {"intent", r.intent}, {"response", r.response}, {"action", r.action}});
  return {{"hub_sleep_mw", hub_sleep_mw},
          {"hub_active_mw", hub_active_mw},
          {"node_idle_mw", node_idle_mw},
          {"flash_bytes_per_s", flash_bytes_per_s},
          {"battery_wh", battery_wh},
          {"idle_timeout_s", idle_timeout_s},
          {"wake_word", wake_word},
          {"vision_wake", vision_wake},
          {"vision_session_s", vision_session_s},
          {"embodiment", embodiment},
          {"dialog", rules},
          {"audio_firmware", audio_firmware},
          {"vision_firmware", vision_firmware},
          {"tts_firmware", tts_firmware},
          {"asr_chunk_frames", asr_chunk_frames},
          {"budget", david::to_json(budget)},
          {"seed", seed}};
}

namespace {

const std::map<std::string, DeviceId>& device_ids() {
  static const std::map<std::string, DeviceId> m{{"hub", device::kHub},   {"audio", device::kAudioNode},
                                                 {"vision", device::kVisionNode}, {"app", device::kApp},
                                                 {"actuators", device::kActuators}, {"tts", device::kTtsNode}};
  return m;
}

DeviceId device_from_json(const Json& j) {
  if (j.is_number_integer()) return static_cast<DeviceId>(j.get<int>());
  auto it = device_ids().find(j.get<std::string>());
  if (it == device_ids().end()) raise(ErrorKind::ScriptError, "unknown device '" + j.get<std::string>() + "'");
  return it->second;
}

std::uint8_t msg_type_from_json(const Json& j, const SchemaRegistry& reg) {
  if (j.is_number_integer()) return static_cast<std::uint8_t>(j.get<int>());
  const auto name = j.get<std::string>();
  for (const auto& [t, s] : reg.schemas())
    if (s.name == name) return t;
  raise(ErrorKind::ScriptError, "unknown message type '" + name + "'");
}

std::string msg_type_name(std::uint8_t t, const SchemaRegistry& reg) {
  const auto* s = reg.find(t);
  return s ? s->name : std::to_string(t);
}

FieldValue field_from_json(const Json& v, WireType w) {
  switch (w) {
    case WireType::U8:
    case WireType::U16:
    case WireType::I32: return v.get<std::int64_t>();
    case WireType::F32: return v.get<double>();
    case WireType::F32Array: return v.get<std::vector<float>>();
    case WireType::Bytes:
      if (v.is_string()) return base64_decode(v.get<std::string>());
      return v.get<Bytes>();
    case WireType::String: return v.get<std::string>();
  }
  return std::int64_t{0};
}

Json field_to_json(const FieldValue& v) {
  return std::visit(
      [](const auto& x) -> Json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Bytes>) {
          return base64_encode(x);
        } else {
          return x;
        }
      },
      v);
}

const char* kind_name(StimulusKind k) {
  switch (k) {
    case StimulusKind::InjectAudio: return "inject_audio";
    case StimulusKind::VisualEvent: return "visual_event";
    case StimulusKind::AppPairRequest: return "app_pair_request";
    case StimulusKind::Reflash: return "reflash";
    case StimulusKind::InjectMessage: return "inject_message";
    case StimulusKind::End: return "end";
  }
  return "?";
}

const std::vector<std::string>& visual_kinds() {
  static const std::vector<std::string> v{"face", "gesture", "person"};
  return v;
}

FirmwareRole role_for_node(const std::string& node) {
  if (node == "audio") return FirmwareRole::AudioAsr;
  if (node == "vision") return FirmwareRole::Vision;
  if (node == "tts") return FirmwareRole::TtsSpeaker;
  raise(ErrorKind::ScriptError, "unknown node '" + node + "' (expected audio, vision or tts)");
}

}  // namespace

ScenarioScript ScenarioScript::from_json(const Json& j, const std::filesystem::path& base_dir, const SchemaRegistry& reg) {
  ScenarioScript s;
  try {
    s.name = j.value("name", s.name);
    if (j.contains("config")) s.config = j.at("config");
    SimTime last = 0;
    bool ended = false;
    for (const auto& st : j.at("stimuli")) {
      Stimulus x;
      if (st.contains("t_us")) {
        x.t = st.at("t_us").get<SimTime>();
      } else {
        x.t = seconds_to_us(st.at("t").get<double>());
      }
      if (x.t < last) raise(ErrorKind::ScriptError, "stimulus times must be non-decreasing");
      if (ended) raise(ErrorKind::ScriptError, "stimuli after end");
      last = x.t;
      const auto type = st.at("type").get<std::string>();
      if (type == "inject_audio") {
        x.kind = StimulusKind::InjectAudio;
        if (st.contains("text")) {
          x.text = st.at("text").get<std::string>();
        } else {
          const std::filesystem::path p = st.at("wav").get<std::string>();
          x.wav = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
        }
      } else if (type == "visual_event") {
        x.kind = StimulusKind::VisualEvent;
        x.visual = st.at("kind").get<std::string>();
        if (std::find(visual_kinds().begin(), visual_kinds().end(), x.visual) == visual_kinds().end()) {
          raise(ErrorKind::ScriptError, "unknown visual event '" + x.visual + "'");
        }
      } else if (type == "app_pair_request") {
        x.kind = StimulusKind::AppPairRequest;
      } else if (type == "reflash") {
        x.kind = StimulusKind::Reflash;
        x.node = st.at("node").get<std::string>();
        x.firmware = st.at("firmware").get<std::string>();
        role_for_node(x.node);
      } else if (type == "inject_message") {
        x.kind = StimulusKind::InjectMessage;
        x.src = device_from_json(st.at("src"));
        x.dst = device_from_json(st.at("dst"));
        x.message.msg_type = msg_type_from_json(st.at("msg"), reg);
        if (st.contains("flags")) x.flags = static_cast<std::uint8_t>(st.at("flags").get<int>());
        if (const auto* schema = reg.find(x.message.msg_type); schema && st.contains("fields")) {
          for (const auto& [name, v] : st.at("fields").items()) {
            const auto* f = schema->field(name);
            if (!f) raise(ErrorKind::ScriptError, "field '" + name + "' is not in schema " + schema->name);
            x.message.fields[name] = field_from_json(v, f->wire);
          }
        }
      } else if (type == "end") {
        x.kind = StimulusKind::End;
        ended = true;
      } else {
        raise(ErrorKind::ScriptError, "unknown stimulus type '" + type + "'");
      }
      s.stimuli.push_back(std::move(x));
    }
  } catch (const Json::exception& e) {
    raise(ErrorKind::ScriptError, std::string("scenario script: ") + e.what());
  }
  return s;
}

Json ScenarioScript::to_json(const SchemaRegistry& reg) const {
  Json arr = Json::array();
  for (const auto& x : stimuli) {
    Json o{{"t_us", x.t}, {"type", kind_name(x.kind)}};
    switch (x.kind) {
      case StimulusKind::InjectAudio:
        if (x.text) {
          o["text"] = *x.text;
        } else {
          o["wav"] = x.wav.string();
        }
        break;
      case StimulusKind::VisualEvent: o["kind"] = x.visual; break;
      case StimulusKind::Reflash:
        o["node"] = x.node;
        o["firmware"] = x.firmware;
        break;
      case StimulusKind::InjectMessage: {
        o["src"] = device_name(x.src);
        o["dst"] = device_name(x.dst);
        o["msg"] = msg_type_name(x.message.msg_type, reg);
        if (x.flags) o["flags"] = *x.flags;
        Json f = Json::object();
        for (const auto& [k, v] : x.message.fields) f[k] = field_to_json(v);
        o["fields"] = f;
        break;
      }
      default: break;
    }
    arr.push_back(std::move(o));
  }
  Json j{{"name", name}, {"stimuli", arr}};
  if (config) j["config"] = *config;
  return j;
}

ScenarioScript duty_cycle_script(int days) {
  ScenarioScript s;
  s.name = "duty_cycle";
  const std::vector<std::string> utterances{"hello", "yes", "david look", "tell me more", "hey"};
  const std::vector<std::string> visuals{"face", "gesture", "person"};
  for (int d = 0; d < days; ++d) {
    const SimTime start = (static_cast<SimTime>(d) * 86'400 + 17 * 3'600) * kUsPerSecond;
    for (int k = 0; k < 180; ++k) {
      const SimTime t = start + static_cast<SimTime>(k) * 20 * kUsPerSecond;
      Stimulus a;
      a.t = t;
      a.kind = StimulusKind::InjectAudio;
      a.text = k == 0 ? std::string("hey david") : utterances[static_cast<std::size_t>(k) % utterances.size()];
      s.stimuli.push_back(a);
      Stimulus v;
      v.t = t + 10 * kUsPerSecond;
      v.kind = StimulusKind::VisualEvent;
      v.visual = visuals[static_cast<std::size_t>(k) % visuals.size()];
      s.stimuli.push_back(v);
    }
  }
  Stimulus e;
  e.t = static_cast<SimTime>(days) * 86'400 * kUsPerSecond;
  e.kind = StimulusKind::End;
  s.stimuli.push_back(e);
  return s;
}

ScenarioScript silent_script(double seconds) {
  ScenarioScript s;
  s.name = "silent";
  Stimulus e;
  e.t = seconds_to_us(seconds);
  e.kind = StimulusKind::End;
  s.stimuli.push_back(e);
  return s;
}

const LogEntry* ScenarioReport::find(const std::string& device, const std::string& event) const {
  for (const auto& e : log)
    if (e.device == device && e.event == event) return &e;
  return nullptr;
}

Json ScenarioReport::to_json() const {
  Json lg = Json::array();
  for (const auto& e : log) lg.push_back({{"t_us", e.t}, {"device", e.device}, {"event", e.event}, {"detail", e.detail}});
  Json tr = Json::array();
  for (const auto& e : transcripts) tr.push_back({{"t_us", e.t}, {"text", e.text}, {"wake", e.wake}});
  Json rs = Json::array();
  for (const auto& e : responses) rs.push_back({{"t_us", e.t}, {"intent", e.intent}, {"text", e.text}, {"samples", e.samples}});
  Json ac = Json::array();
  for (const auto& e : actions) {
    ac.push_back({{"action", e.action}, {"actuator", e.actuator}, {"requested_us", e.requested}, {"start_us", e.start},
                  {"end_us", e.end}, {"energy_mj", e.energy_mj}});
  }
  Json au = Json::array();
  for (const auto& e : audit) au.push_back({{"t_us", e.t}, {"msg", e.msg_type}, {"src", e.src}, {"dst", e.dst}, {"reason", e.reason}});
  Json er = Json::array();
  for (const auto& e : errors) er.push_back({{"t_us", e.t}, {"kind", e.kind}, {"message", e.message}});
  Json j{{"name", name},
         {"duration_us", duration},
         {"log", lg},
         {"transcripts", tr},
         {"responses", rs},
         {"actions", ac},
         {"energy_mj", energy_mj},
         {"total_energy_mj", total_energy_mj},
         {"average_power_mw", average_power_mw},
         {"battery_life_h", battery_life_h ? Json(*battery_life_h) : Json(nullptr)},
         {"hub_active_fraction", hub_active_fraction},
         {"privacy_audit", au},
         {"errors", er},
         {"bus", {{"frames", bus_frames}, {"bytes", bus_bytes}}},
         {"dropped_stimuli", dropped_stimuli}};
  return j;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

struct Event {
  SimTime t;
  std::size_t order;
  DeviceId device;
  std::uint64_t seq;
  std::function<void()> fire;
};

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const {
    if (a.t != b.t) return a.t > b.t;
    if (a.order != b.order) return a.order > b.order;
    if (a.device != b.device) return a.device > b.device;
    return a.seq > b.seq;
  }
};

struct NodeState {
  DeviceId id = 0;
  std::shared_ptr<const Firmware> fw;
  bool flashing = false;
  SimTime flash_until = 0;
  std::uint64_t generation = 0;
  SimTime busy_until = 0;
};

struct VisionResult {
  Json detail;
  std::int64_t gesture_classes = 0;
  std::int64_t expression = 0;
  std::int64_t gesture = 0;
  std::vector<float> face_box, hand_box, person_box, landmarks, embedding;
  Bytes frame;
};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

struct Platform::State {
  EnergyLedger ledger;
  PrivacyBus bus;
  Actuators actuators{Embodiment::teddy()};
  std::map<std::string, NodeState> nodes;
  std::priority_queue<Event, std::vector<Event>, EventAfter> queue;
  std::uint64_t seq = 0;
  std::size_t order = 0;
  SimTime now = 0;
  bool hub_active = false;
  std::uint64_t hub_generation = 0;
  std::map<std::string, VisionResult> vision_cache;
  ScenarioReport report;
};

Platform::Platform(PlatformConfig cfg, std::shared_ptr<FirmwareLibrary> lib)
    : cfg_(std::move(cfg)), lib_(std::move(lib)), s_(std::make_unique<State>()) {
  if (!lib_) raise(ErrorKind::ConfigError, "platform needs a firmware library");
  s_->actuators = Actuators(Embodiment::by_name(cfg_.embodiment));
  auto install = [&](const std::string& node, DeviceId id, const std::string& fw) {
    if (lib_->role(fw) != role_for_node(node)) {
      raise(ErrorKind::ScriptError, "firmware '" + fw + "' cannot run on the " + node + " node");
    }
    s_->nodes[node] = NodeState{id, lib_->get(fw)};
  };
  install("audio", device::kAudioNode, cfg_.audio_firmware);
  install("vision", device::kVisionNode, cfg_.vision_firmware);
  install("tts", device::kTtsNode, cfg_.tts_firmware);
  s_->ledger.transition("hub", 0, "sleep", cfg_.hub_sleep_mw);
  s_->ledger.transition("audio", 0, "listening", std::max(cfg_.node_idle_mw, s_->nodes["audio"].fw->active_power_mw()));
  s_->ledger.transition("vision", 0, "idle", cfg_.node_idle_mw);
  s_->ledger.transition("tts", 0, "idle", cfg_.node_idle_mw);
}

Platform::~Platform() = default;

const Firmware& Platform::firmware(const std::string& node) const {
  auto it = s_->nodes.find(node);
  if (it == s_->nodes.end()) raise(ErrorKind::ScriptError, "unknown node '" + node + "'");
  return *it->second.fw;
}

bool Platform::flashing(const std::string& node) const {
  auto it = s_->nodes.find(node);
  return it != s_->nodes.end() && it->second.flashing;
}

const PrivacyBus& Platform::bus() const noexcept { return s_->bus; }
const EnergyLedger& Platform::ledger() const noexcept { return s_->ledger; }

SimTime Platform::reflash(const std::string& node, const std::string& firmware, SimTime t) {
  State& s = *s_;
  role_for_node(node);
  NodeState& n = s.nodes.at(node);
  if (n.flashing) raise(ErrorKind::Busy, "node '" + node + "' is already flashing");
  if (lib_->role(firmware) != role_for_node(node)) {
    raise(ErrorKind::ConfigError, "firmware '" + firmware + "' cannot run on the " + node + " node");
  }
  auto fw = lib_->get(firmware);
  const double seconds = static_cast<double>(fw->size_bytes) / cfg_.flash_bytes_per_s;
  const SimTime done = t + seconds_to_us(seconds);
  n.flashing = true;
  n.flash_until = done;
  ++n.generation;
  s.ledger.transition(node, t, "flashing", cfg_.node_idle_mw);
  s.report.log.push_back({t, node, "flash_start", {{"firmware", firmware}, {"done_us", done}}});
  const std::size_t order = s.order;
  s.queue.push({done, order, n.id, s.seq++, [this, node, fw, done] {
                  State& st = *s_;
                  NodeState& nn = st.nodes.at(node);
                  nn.fw = fw;
                  nn.flashing = false;
                  nn.busy_until = done;
                  Json outs = Json::object();
                  for (const auto& o : fw->analysis.outputs) outs[o.id] = o.shape;
                  st.report.log.push_back({done, node, "flash_done", {{"firmware", fw->name}, {"outputs", outs}}});
                  if (node == "audio") {
                    st.ledger.transition(node, done, "listening", std::max(cfg_.node_idle_mw, fw->active_power_mw()));
                  } else {
                    st.ledger.transition(node, done, "idle", cfg_.node_idle_mw);
                  }
                }});
  return done;
}

ScenarioReport Platform::run(const ScenarioScript& script) {
  State& s = *s_;
  s.report = ScenarioReport{};
  s.report.name = script.name;
  const SchemaRegistry& reg = s.bus.registry();

  auto log = [&](SimTime t, const std::string& dev, const std::string& ev, Json detail = Json::object()) {
    s.report.log.push_back({t, dev, ev, std::move(detail)});
  };
  auto record_error = [&](SimTime t, const Error& e) {
    s.report.errors.push_back({t, std::string(to_string(e.kind())), e.what()});
    log(t, "platform", "error", {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}});
  };
  auto schedule = [&](SimTime t, DeviceId dev, std::function<void()> f) {
    s.queue.push({t, s.order, dev, s.seq++, std::move(f)});
  };

  // every boundary crossing goes through here
  auto send = [&](SimTime t, const Message& m, DeviceId src, DeviceId dst,
                  std::optional<std::uint8_t> flags = std::nullopt) -> std::optional<Message> {
    const std::size_t before = s.bus.denials().size();
    EgressDecision d;
    try {
      d = s.bus.send(m, src, dst, flags);
    } catch (const Error& e) {
      record_error(t, e);
      return std::nullopt;
    }
    for (std::size_t i = before; i < s.bus.denials().size(); ++i) {
      const Denial& den = s.bus.denials()[i];
      s.report.audit.push_back({t, msg_type_name(den.msg_type, reg), device_name(den.src), device_name(den.dst), den.reason});
      log(t, "bus", "deny", {{"msg", msg_type_name(den.msg_type, reg)}, {"src", device_name(den.src)},
                             {"dst", device_name(den.dst)}, {"reason", den.reason}});
    }
    if (!d.allowed) return std::nullopt;
    auto got = s.bus.drain(dst);
    if (got.empty()) return std::nullopt;
    return std::move(got.back().message);
  };

  std::function<void(SimTime)> hub_touch = [&](SimTime t) {
    const std::uint64_t gen = ++s.hub_generation;
    schedule(t + seconds_to_us(cfg_.idle_timeout_s), device::kHub, [&, gen, t] {
      if (gen != s.hub_generation || !s.hub_active) return;
      const SimTime at = t + seconds_to_us(cfg_.idle_timeout_s);
      s.hub_active = false;
      s.ledger.transition("hub", at, "sleep", cfg_.hub_sleep_mw);
      log(at, "hub", "sleep", {{"reason", "idle_timeout"}});
    });
  };

  auto hub_wake = [&](SimTime t, const std::string& reason) {
    if (!s.hub_active) {
      s.hub_active = true;
      s.ledger.transition("hub", t, "active", cfg_.hub_active_mw);
      log(t, "hub", "wake", {{"reason", reason}});
    }
    hub_touch(t);
  };

  auto speak = [&](SimTime t, const std::string& text, const std::string& intent) {
    NodeState& n = s.nodes.at("tts");
    auto delivered = send(t, Message{msg::kSpeak, {{"text", text}}}, device::kHub, device::kTtsNode);
    if (!delivered) return;
    if (n.flashing) {
      ++s.report.dropped_stimuli;
      log(t, "tts", "dropped", {{"reason", "flashing"}});
      return;
    }
    Synthesis syn;
    try {
      syn = synthesize(text, *n.fw->tts);
    } catch (const Error& e) {
      record_error(t, e);
      return;
    }
    const auto samples = static_cast<std::int64_t>(syn.audio.samples.size());
    const SimTime start = std::max(t, n.busy_until);
    const SimTime end = start + samples * kUsPerSecond / syn.audio.sample_rate_hz;
    n.busy_until = end;
    s.report.responses.push_back({t, intent, text, samples});
    log(t, "tts", "synthesized", {{"text", text}, {"samples", samples}, {"start_us", start}, {"end_us", end}});
    const double mw = std::max(cfg_.node_idle_mw, n.fw->active_power_mw());
    const std::uint64_t gen = n.generation;
    schedule(start, device::kTtsNode, [&, start, mw, gen] {
      if (s.nodes.at("tts").generation == gen && !s.nodes.at("tts").flashing) s.ledger.transition("tts", start, "active", mw);
    });
    schedule(end, device::kTtsNode, [&, end, gen] {
      NodeState& nn = s.nodes.at("tts");
      if (nn.generation == gen && !nn.flashing && nn.busy_until == end) s.ledger.transition("tts", end, "idle", cfg_.node_idle_mw);
      if (s.hub_active) hub_touch(end);
    });
  };

  auto act = [&](SimTime t, const std::string& action) {
    if (!send(t, Message{msg::kAction, {{"action", action}}}, device::kHub, device::kActuators)) return;
    try {
      ActionLogEntry e = s.actuators.dispatch(action, t);
      const ActionSpec& spec = s.actuators.embodiment().actions.at(action);
      s.ledger.add("actuators", action, e.start, e.end, spec.power_mw);
      log(t, "actuators", "action", {{"action", action}, {"start_us", e.start}, {"end_us", e.end}});
      s.report.actions.push_back(std::move(e));
    } catch (const Error& e) {
      record_error(t, e);
    }
  };

  auto dialog = [&](SimTime t, const std::string& text) {
    for (const auto& r : cfg_.dialog) {
      if (r.pattern == "*" || text.find(r.pattern) != std::string::npos) {
        log(t, "hub", "intent", {{"intent", r.intent}, {"text", text}});
        speak(t, r.response, r.intent);
        if (!r.action.empty()) act(t, r.action);
        return;
      }
    }
  };

  auto on_audio = [&](SimTime t, const Stimulus& st) {
    NodeState& n = s.nodes.at("audio");
    if (n.flashing) {
      ++s.report.dropped_stimuli;
      log(t, "audio", "dropped", {{"reason", "flashing"}});
      return;
    }
    const AsrModel& model = *n.fw->asr;
    AudioBuffer audio;
    Transcript tr;
    try {
      audio = st.text ? tone_audio(*st.text) : read_wav(st.wav);
      if (audio.sample_rate_hz != model.sample_rate_hz) {
        raise(ErrorKind::ConfigError, "audio is " + std::to_string(audio.sample_rate_hz) + " Hz, model expects " +
                                          std::to_string(model.sample_rate_hz));
      }
      tr = transcribe(model, audio, cfg_.asr_chunk_frames);
    } catch (const Error& e) {
      record_error(t, e);
      return;
    }
    const auto hop = static_cast<SimTime>(std::llround(1e6 / model.graph.input.frame_rate_hz));
    const auto frames = tr.posteriors.dim(0);
    const auto la = n.fw->analysis.output(kPosteriors).lookahead_frames;
    const SimTime done = t + frames * hop;
    log(t, "audio", "utterance", {{"frames", frames}, {"samples", audio.samples.size()}});
    const auto pos = tr.text.find(cfg_.wake_word);
    const bool wake = pos != std::string::npos;
    if (wake) {
      const std::size_t last = pos + cfg_.wake_word.size() - 1;
      const std::int64_t f = tr.char_frames.at(last);
      const SimTime at = t + std::min(f + la, frames) * hop;
      schedule(at, device::kAudioNode, [&, at] {
        if (send(at, Message{msg::kWake, {{"reason", std::string("wake_word")}}}, device::kAudioNode, device::kHub)) {
          hub_wake(at, "wake_word");
        }
      });
    }
    double conf = 0.0;
    for (std::int64_t r = 0; r < frames; ++r) {
      double best = 0.0;
      for (std::int64_t c = 0; c < kAsrVocabSize; ++c) best = std::max(best, tr.posteriors.value(r, c));
      conf += best;
    }
    if (frames > 0) conf /= static_cast<double>(frames);
    const std::string text = tr.text;
    schedule(done, device::kAudioNode, [&, done, text, conf, wake] {
      s.report.transcripts.push_back({done, text, wake});
      if (!send(done, Message{msg::kTranscript, {{"text", text}, {"confidence", conf}}}, device::kAudioNode, device::kHub)) {
        return;
      }
      if (!s.hub_active) {
        log(done, "hub", "ignored", {{"text", text}, {"reason", "asleep"}});
        return;
      }
      hub_touch(done);
      dialog(done, text);
    });
  };

  auto run_vision = [&](const Firmware& fw, const std::string& kind) -> const VisionResult& {
    const std::string key = fw.name + "/" + kind;
    auto it = s.vision_cache.find(key);
    if (it != s.vision_cache.end()) return it->second;
    const std::int64_t e = fw.vision.exec_size;
    std::mt19937_64 rng(cfg_.seed ^ fnv1a(kind));
    std::uniform_int_distribution<int> px(0, 255);
    VisionResult r;
    r.frame.resize(static_cast<std::size_t>(3 * e * e));
    std::vector<float> img(r.frame.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
      r.frame[i] = static_cast<std::uint8_t>(px(rng));
      img[i] = static_cast<float>(r.frame[i]) / 255.0f;
    }
    const GraphSpec g = fw.graph.with_input_shape({3, e, e});
    const auto out = graph_forward(g, Tensor::from_floats({3, e, e}, std::move(img)));
    auto best_cell = [&](const char* score) {
      const Tensor& t = out.at(score);
      std::size_t best = 0;
      for (std::size_t i = 1; i < t.floats().size(); ++i)
        if (t.floats()[i] > t.floats()[best]) best = i;
      return best;
    };
    auto at_cell = [&](const char* id, std::size_t cell, bool squash) {
      const Tensor& t = out.at(id);
      const std::size_t cells = static_cast<std::size_t>(t.dim(1) * t.dim(2));
      std::vector<float> v;
      for (std::int64_t c = 0; c < t.dim(0); ++c) {
        const float x = t.floats()[static_cast<std::size_t>(c) * cells + cell];
        v.push_back(squash ? static_cast<float>(logistic(x)) : x);
      }
      return v;
    };
    auto argmax = [](const std::vector<float>& v) {
      return static_cast<std::int64_t>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    namespace o = vision_out;
    const std::size_t fc = best_cell(o::kFaceScore), hc = best_cell(o::kHandScore), pc = best_cell(o::kPersonScore);
    r.face_box = at_cell(o::kFaceBox, fc, true);
    r.landmarks = at_cell(o::kLandmarks, fc, true);
    r.embedding = at_cell(o::kEmbedding, fc, false);
    r.expression = argmax(at_cell(o::kExpression, fc, false));
    r.hand_box = at_cell(o::kHandBox, hc, true);
    const auto gest = at_cell(o::kGesture, hc, false);
    r.gesture = argmax(gest);
    r.gesture_classes = static_cast<std::int64_t>(gest.size());
    r.person_box = at_cell(o::kPersonBox, pc, true);
    return s.vision_cache.emplace(key, std::move(r)).first->second;
  };

  auto on_visual = [&](SimTime t, const Stimulus& st) {
    NodeState& n = s.nodes.at("vision");
    if (n.flashing) {
      ++s.report.dropped_stimuli;
      log(t, "vision", "dropped", {{"reason", "flashing"}, {"kind", st.visual}});
      return;
    }
    const VisionResult* res = nullptr;
    try {
      res = &run_vision(*n.fw, st.visual);
    } catch (const Error& e) {
      record_error(t, e);
      return;
    }
    const double mw = std::max(cfg_.node_idle_mw, n.fw->active_power_mw());
    if (s.ledger.state("vision") != "active") s.ledger.transition("vision", t, "active", mw);
    const std::uint64_t gen = ++n.generation;
    const SimTime until = t + seconds_to_us(cfg_.vision_session_s);
    schedule(until, device::kVisionNode, [&, gen, until] {
      if (s.nodes.at("vision").generation == gen) s.ledger.transition("vision", until, "idle", cfg_.node_idle_mw);
    });

    Message det{msg::kDetections, {}};
    Json detail{{"kind", st.visual}};
    if (st.visual == "face") {
      det.fields = {{"class_id", std::int64_t{0}}, {"box", res->face_box}, {"expression", res->expression}, {"landmarks", res->landmarks}};
      detail["expression"] = res->expression;
      // the embedding is matched on the node and never leaves it
      send(t, Message{msg::kFaceEmbedding, {{"embedding", res->embedding}}}, device::kVisionNode, device::kVisionNode);
    } else if (st.visual == "gesture") {
      det.fields = {{"class_id", std::int64_t{1}}, {"box", res->hand_box}, {"gesture", res->gesture}};
      detail["gesture"] = res->gesture;
      detail["gesture_classes"] = res->gesture_classes;
    } else {
      det.fields = {{"class_id", std::int64_t{2}}, {"box", res->person_box}};
    }
    log(t, "vision", "detections", detail);
    if (send(t, det, device::kVisionNode, device::kHub)) {
      if (st.visual == "person" && cfg_.vision_wake) hub_wake(t, "person");
      if (s.hub_active) {
        hub_touch(t);
      } else {
        log(t, "hub", "ignored", {{"kind", st.visual}, {"reason", "asleep"}});
      }
    }
    if (s.bus.paired()) {
      send(t, Message{msg::kVideoChunk, {{"data", res->frame}}}, device::kVisionNode, device::kVisionNode);
      try {
        const Bytes chunk = s.bus.vision_end().stream_chunk(res->frame);
        if (send(t, Message{msg::kSecureStream, {{"chunk", chunk}}}, device::kVisionNode, device::kApp)) {
          log(t, "app", "video_chunk", {{"bytes", chunk.size()}});
        }
      } catch (const Error& e) {
        record_error(t, e);
      }
    }
  };

  auto on_pair = [&](SimTime t) {
    if (!send(t, Message{msg::kPairRequest, {{"app_id", std::int64_t{device::kApp}}}}, device::kApp, device::kHub)) return;
    const std::string material = "david-pair-" + std::to_string(cfg_.seed);
    try {
      s.bus.pair_app(Bytes(material.begin(), material.end()));
      log(t, "hub", "paired", {{"app", "app"}});
    } catch (const Error& e) {
      record_error(t, e);
    }
  };

  auto on_reflash = [&](SimTime t, const Stimulus& st) {
    const DeviceId id = device_ids().at(st.node);
    const auto* schema_node = reg.find(msg::kReflash);
    (void)schema_node;
    const std::int64_t size = lib_->contains(st.firmware) ? static_cast<std::int64_t>(lib_->get(st.firmware)->size_bytes) : 0;
    if (!send(t, Message{msg::kReflash, {{"node", std::int64_t{id}}, {"firmware", st.firmware}, {"size", size}}},
              device::kHub, id)) {
      return;
    }
    try {
      reflash(st.node, st.firmware, t);
    } catch (const Error& e) {
      record_error(t, e);
    }
  };

  // validate references before anything runs
  for (const auto& st : script.stimuli) {
    if (st.kind == StimulusKind::Reflash && lib_->role(st.firmware) != role_for_node(st.node)) {
      raise(ErrorKind::ScriptError, "firmware '" + st.firmware + "' cannot run on the " + st.node + " node");
    }
  }

  std::optional<SimTime> end;
  for (std::size_t i = 0; i < script.stimuli.size(); ++i) {
    const Stimulus& st = script.stimuli[i];
    if (st.kind == StimulusKind::End) {
      end = st.t;
      break;
    }
    s.queue.push({st.t, i, 0, s.seq++, [&, i] {
                    const Stimulus& x = script.stimuli[i];
                    switch (x.kind) {
                      case StimulusKind::InjectAudio: on_audio(x.t, x); break;
                      case StimulusKind::VisualEvent: on_visual(x.t, x); break;
                      case StimulusKind::AppPairRequest: on_pair(x.t); break;
                      case StimulusKind::Reflash: on_reflash(x.t, x); break;
                      case StimulusKind::InjectMessage: {
                        log(x.t, "script", "inject_message", {{"msg", msg_type_name(x.message.msg_type, reg)}});
                        send(x.t, x.message, x.src, x.dst, x.flags);
                        break;
                      }
                      case StimulusKind::End: break;
                    }
                  }});
  }

  SimTime last = 0;
  while (!s.queue.empty()) {
    Event ev = s.queue.top();
    if (end && ev.t > *end) break;
    s.queue.pop();
    s.now = ev.t;
    s.order = ev.order;
    last = std::max(last, ev.t);
    ev.fire();
  }
  while (!s.queue.empty()) s.queue.pop();
  const SimTime stop = end.value_or(last);
  s.ledger.close(stop);

  ScenarioReport& r = s.report;
  r.duration = stop;
  for (const auto& d : s.ledger.devices()) r.energy_mj[d] = s.ledger.energy_mj(d);
  r.total_energy_mj = s.ledger.total_mj();
  if (stop > 0) {
    r.average_power_mw = r.total_energy_mj / us_to_seconds(stop);
    r.hub_active_fraction = static_cast<double>(s.ledger.time_in_state("hub", "active")) / static_cast<double>(stop);
    if (r.average_power_mw > 0 && cfg_.battery_wh > 0) r.battery_life_h = battery_life_hours(r.average_power_mw, cfg_.battery_wh);
  }
  r.bus_frames = s.bus.frames_sent();
  r.bus_bytes = s.bus.bytes_sent();
  std::stable_sort(r.log.begin(), r.log.end(), [](const LogEntry& a, const LogEntry& b) { return a.t < b.t; });
  return r;
}

ScenarioReport run_scenario(const ScenarioScript& script, const PlatformConfig& cfg, std::shared_ptr<FirmwareLibrary> lib) {
  const PlatformConfig eff = script.config ? PlatformConfig::from_json(*script.config, cfg) : cfg;
  Platform p(eff, std::move(lib));
  return p.run(script);
}

}  // namespace david
