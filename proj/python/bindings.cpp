// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings. Structured values cross the boundary as JSON text; the
// david package wraps them with json.loads / json.dumps.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "david/analyzer.hpp"
#include "david/asr.hpp"
#include "david/bus.hpp"
#include "david/dsp.hpp"
#include "david/error.hpp"
#include "david/serialize.hpp"
#include "david/sim.hpp"
#include "david/tts.hpp"

namespace py = pybind11;
using namespace david;

namespace {

GraphSpec graph_of(const std::string& text) { return graph_from_json(Json::parse(text)); }

AudioBuffer audio_of(const std::vector<float>& samples, int rate) {
  AudioBuffer a;
  a.sample_rate_hz = rate;
  a.samples = samples;
  return a;
}

std::shared_ptr<FirmwareLibrary> default_library(std::uint64_t seed) {
  static std::map<std::uint64_t, std::shared_ptr<FirmwareLibrary>> cache;
  auto& lib = cache[seed];
  if (!lib) lib = std::make_shared<FirmwareLibrary>(default_firmware_library(seed));
  return lib;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "david-edge native core";

  // Module-lifetime reference; the translator raises instances carrying `kind`.
  static PyObject* error_type = py::exception<Error>(m, "DavidError").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error_type)(e.what());
      inst.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type, inst.ptr());
    }
  });

  m.def("analyze", [](const std::string& graph_json, double fps, double budget_mw, double tops_per_watt) {
    Budget b;
    b.power_budget_mw = budget_mw;
    b.tops_per_watt = tops_per_watt;
    const GraphSpec g = graph_of(graph_json);
    return to_json(fps > 0 ? analyze(g, fps, b) : analyze(g, b)).dump();
  }, py::arg("graph_json"), py::arg("fps") = 0.0, py::arg("budget_mw") = 50.0, py::arg("tops_per_watt") = 55.0);

  m.def("dependency_interval", [](const std::string& graph_json, const std::string& output, std::int64_t index,
                                  std::int64_t length) {
    const auto iv = dependency_interval(graph_of(graph_json), output, index, length);
    return std::make_pair(iv.lo, iv.hi);
  });
  m.def("impulse_probe", [](const std::string& graph_json, const std::string& output, std::int64_t index,
                            std::int64_t length) {
    const auto iv = impulse_probe(graph_of(graph_json), output, index, length);
    return std::make_pair(iv.lo, iv.hi);
  });

  m.def("estimate_power_mw", [](double macs_per_second, double tops_per_watt) {
    Budget b;
    b.tops_per_watt = tops_per_watt;
    return estimate_power(macs_per_second, b);
  }, py::arg("macs_per_second"), py::arg("tops_per_watt") = 55.0);

  m.def("reference_speechnet1_graph", [](std::int64_t channels, std::uint64_t seed) {
    return graph_to_json(build_speechnet(reference_speechnet1_config(channels), seed)).dump();
  }, py::arg("channels") = 64, py::arg("seed") = 0);

  m.def("asr_vocabulary", [] { return asr_vocabulary(); });
  m.def("tone_audio", [](const std::string& text) { return tone_audio(text).samples; });
  m.def("transcribe_tone", [](const std::vector<float>& samples, int rate, std::int64_t chunk) {
    static const AsrModel model = tone_asr_model();
    return transcribe(model, audio_of(samples, rate), chunk).text;
  }, py::arg("samples"), py::arg("sample_rate_hz") = 16000, py::arg("chunk_frames") = 0);

  m.def("ctc_forward_score", [](const std::vector<std::vector<double>>& log_probs, const std::vector<int>& target) {
    const auto t = static_cast<std::int64_t>(log_probs.size());
    const auto v = t == 0 ? 0 : static_cast<std::int64_t>(log_probs[0].size());
    std::vector<float> flat;
    for (const auto& row : log_probs) {
      if (static_cast<std::int64_t>(row.size()) != v) raise(ErrorKind::ShapeMismatch, "ragged log-prob rows");
      for (double x : row) flat.push_back(static_cast<float>(x));
    }
    return ctc_forward_score(Tensor::from_floats({t, v}, flat), target);
  });

  m.def("mulaw_encode", &mulaw_encode);
  m.def("mulaw_decode", &mulaw_decode);

  m.def("synthesize", [](const std::string& text, std::uint64_t seed, std::int64_t chunk) {
    static std::map<std::uint64_t, TtsModel> models;
    auto it = models.find(seed);
    if (it == models.end()) it = models.emplace(seed, make_tts_model(TTSConfig{}, seed, "tts_default")).first;
    std::optional<std::int64_t> c;
    if (chunk > 0) c = chunk;
    return synthesize(text, it->second, std::nullopt, c).audio.samples;
  }, py::arg("text"), py::arg("seed") = 0, py::arg("chunk_frames") = 0);

  m.def("crc16_ccitt", [](const py::bytes& data) {
    const std::string s = data;
    return crc16_ccitt({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  });
  m.def("default_registry", [] { return default_registry().to_json().dump(); });

  m.def("battery_life_hours", &battery_life_hours);
  m.def("run_scenario", [](const std::string& script_json, std::uint64_t seed) {
    PlatformConfig cfg;
    cfg.seed = seed;
    const ScenarioScript s = ScenarioScript::from_json(Json::parse(script_json));
    return run_scenario(s, cfg, default_library(seed)).to_json().dump();
  }, py::arg("script_json"), py::arg("seed") = 0);
  m.def("duty_cycle_script", [](int days) { return duty_cycle_script(days).to_json().dump(); }, py::arg("days") = 1);
  m.def("silent_script", [](double seconds) { return silent_script(seconds).to_json().dump(); },
        py::arg("seconds") = 3600.0);
}
