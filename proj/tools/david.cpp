// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: static analysis, porting, speech in and out,
// impulse probing and scenario runs.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "david/analyzer.hpp"
#include "david/asr.hpp"
#include "david/audio.hpp"
#include "david/error.hpp"
#include "david/firmware.hpp"
#include "david/serialize.hpp"
#include "david/sim.hpp"
#include "david/tts.hpp"

namespace fs = std::filesystem;
using namespace david;

namespace {

enum Exit { kOk = 0, kAudit = 1, kUsage = 2, kFailure = 3 };

std::uint64_t env_seed() {
  const char* s = std::getenv("DAVID_SEED");
  if (!s || !*s) return 0;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    raise(ErrorKind::ConfigError, std::string("DAVID_SEED must be an unsigned integer, got '") + s + "'");
  }
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

// A graph file, or the graph inside an asr/tts bundle.
GraphSpec load_graph(const std::string& path, const std::string& part) {
  const Json j = read_json_file(path);
  const std::string kind = j.value("kind", "");
  if (kind == "asr") return asr_model_from_json(j).graph;
  if (kind == "tts") {
    const TtsModel m = tts_model_from_json(j);
    if (part == "encoder") return m.encoder;
    if (part == "decoder") return m.decoder;
    return m.vocoder;
  }
  return graph_from_json(j);
}

AsrModel load_asr(const std::string& spec, std::uint64_t seed) {
  if (spec == "tone" || spec == "asr_tone") return tone_asr_model();
  if (spec == "speechnet1") return make_asr_model(reference_speechnet1_config(), seed, "speechnet1");
  if (spec == "speechnet2") return make_asr_model(reference_speechnet2_config(), seed, "speechnet2");
  return asr_model_from_json(read_json_file(spec));
}

TtsModel load_tts(const std::string& spec, std::uint64_t seed) {
  if (spec == "default" || spec == "tts_default") return make_tts_model(TTSConfig{}, seed, "tts_default");
  return tts_model_from_json(read_json_file(spec));
}

std::vector<std::int64_t> parse_durations(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      raise(ErrorKind::ConfigError, "bad duration '" + item + "'");
    }
  }
  return out;
}

Budget make_budget(double budget_mw, double tops_per_watt, double idle_mw) {
  Budget b;
  b.power_budget_mw = budget_mw;
  b.tops_per_watt = tops_per_watt;
  b.idle_floor_mw = idle_mw;
  return b;
}

ScenarioScript load_script(const std::string& spec) {
  if (spec == "duty_cycle") return duty_cycle_script();
  if (spec == "silent") return silent_script();
  const fs::path p(spec);
  return ScenarioScript::from_json(read_json_file(spec), p.parent_path());
}

int exit_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::ScriptError:
    case ErrorKind::ParseError:
    case ErrorKind::ConfigError:
    case ErrorKind::IoError: return kUsage;
    default: return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"david: edge-AI toy toolkit"};
  app.require_subcommand(1);

  double budget_mw = 50.0, tops_per_watt = 55.0, idle_mw = 0.0, fps = 0.0;
  std::string graph_path, part = "vocoder", report_out;

  auto* analyze_cmd = app.add_subcommand("analyze", "static analysis of a graph");
  analyze_cmd->add_option("graph", graph_path, "graph or model bundle JSON")->required();
  analyze_cmd->add_option("--fps", fps, "frame rate override");
  analyze_cmd->add_option("--budget-mw", budget_mw);
  analyze_cmd->add_option("--tops-per-watt", tops_per_watt);
  analyze_cmd->add_option("--idle-mw", idle_mw);
  analyze_cmd->add_option("--part", part, "encoder | decoder | vocoder for tts bundles");

  double prune = 0.0;
  std::string port_out;
  bool allow_over = false;
  auto* port_cmd = app.add_subcommand("port", "fold, prune, quantize and budget-check a graph");
  port_cmd->add_option("graph", graph_path)->required();
  port_cmd->add_option("--budget-mw", budget_mw);
  port_cmd->add_option("--prune-threshold", prune);
  port_cmd->add_option("--tops-per-watt", tops_per_watt);
  port_cmd->add_option("--fps", fps);
  port_cmd->add_option("--out", port_out, "write the ported graph here");
  port_cmd->add_flag("--allow-over-budget", allow_over, "report instead of failing when over budget");
  port_cmd->add_option("--part", part);

  std::string wav_in, model = "tone";
  std::int64_t chunk_frames = 0;
  auto* asr_cmd = app.add_subcommand("asr", "transcribe a 16 kHz wav");
  asr_cmd->add_option("wav", wav_in)->required();
  asr_cmd->add_option("--model", model, "model JSON, or tone | speechnet1 | speechnet2");
  asr_cmd->add_option("--stream-chunk-frames", chunk_frames, "0 = whole utterance");

  std::string text, wav_out, durations;
  std::string tts_model = "default";
  std::int64_t tts_chunk = 0;
  auto* tts_cmd = app.add_subcommand("tts", "synthesize text to a wav");
  tts_cmd->add_option("--text", text)->required();
  tts_cmd->add_option("--model", tts_model, "model JSON or default");
  tts_cmd->add_option("--out", wav_out)->required();
  tts_cmd->add_option("--chunk-frames", tts_chunk, "vocoder chunk size (0 = model default)");
  tts_cmd->add_option("--durations-override", durations, "comma-separated frames per character");

  std::string script;
  auto* scen_cmd = app.add_subcommand("scenario", "run a scenario script");
  scen_cmd->add_option("script", script, "script JSON, or duty_cycle | silent")->required();
  scen_cmd->add_option("--report", report_out, "write the report here");

  std::int64_t out_index = 0, length = 0;
  std::string output_id;
  auto* probe_cmd = app.add_subcommand("probe", "compare analyzer and impulse probe for one output frame");
  probe_cmd->add_option("graph", graph_path)->required();
  probe_cmd->add_option("--output-index", out_index)->required();
  probe_cmd->add_option("--output", output_id, "output id (default: first)");
  probe_cmd->add_option("--length", length, "input frames (default: enough for the index)");
  probe_cmd->add_option("--part", part);

  std::string out_dir = ".";
  auto* export_cmd = app.add_subcommand("export-models", "write the built-in models, registry and scenarios");
  export_cmd->add_option("--out-dir", out_dir);

  std::string tone_text;
  auto* tone_cmd = app.add_subcommand("tone-wav", "render text as tone-coded audio for the tone model");
  tone_cmd->add_option("--text", tone_text)->required();
  tone_cmd->add_option("--out", wav_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const std::uint64_t seed = env_seed();

    if (*analyze_cmd) {
      const GraphSpec g = load_graph(graph_path, part);
      const Budget b = make_budget(budget_mw, tops_per_watt, idle_mw);
      print(to_json(fps > 0 ? analyze(g, fps, b) : analyze(g, b)));
      return kOk;
    }

    if (*port_cmd) {
      const GraphSpec g = load_graph(graph_path, part);
      const Budget b = make_budget(budget_mw, tops_per_watt, 0.0);
      PortOptions opt;
      opt.seed = seed;
      const double rate = fps > 0 ? fps : g.input.frame_rate_hz;
      const PortResult r = allow_over ? port_model_unchecked(g, b, prune, rate, opt) : port_model(g, b, prune, rate, opt);
      if (!port_out.empty()) write_json_file(port_out, graph_to_json(r.graph));
      print(to_json(r.report));
      return kOk;
    }

    if (*asr_cmd) {
      const AsrModel m = load_asr(model, seed);
      const Transcript t = transcribe(m, read_wav(wav_in), chunk_frames);
      print({{"text", t.text}, {"frames", t.posteriors.dim(0)}, {"char_frames", t.char_frames}, {"model", m.name}});
      return kOk;
    }

    if (*tts_cmd) {
      const TtsModel m = load_tts(tts_model, seed);
      std::optional<std::vector<std::int64_t>> ov;
      if (!durations.empty()) ov = parse_durations(durations);
      std::optional<std::int64_t> chunk;
      if (tts_chunk > 0) chunk = tts_chunk;
      const Synthesis s = synthesize(text, m, ov, chunk);
      write_wav(wav_out, s.audio);
      print({{"samples", s.audio.samples.size()},
             {"sample_rate_hz", s.audio.sample_rate_hz},
             {"durations", s.durations},
             {"mel_frames", s.mel_frames}});
      return kOk;
    }

    if (*scen_cmd) {
      PlatformConfig cfg;
      cfg.seed = seed;
      const ScenarioScript sc = load_script(script);
      auto lib = std::make_shared<FirmwareLibrary>(default_firmware_library(seed, cfg.budget));
      const ScenarioReport r = run_scenario(sc, cfg, lib);
      const Json j = r.to_json();
      if (!report_out.empty()) write_json_file(report_out, j);
      print({{"name", r.name},
             {"duration_us", r.duration},
             {"average_power_mw", r.average_power_mw},
             {"battery_life_h", j.at("battery_life_h")},
             {"hub_active_fraction", r.hub_active_fraction},
             {"transcripts", r.transcripts.size()},
             {"responses", r.responses.size()},
             {"audit", j.at("privacy_audit")},
             {"errors", j.at("errors")}});
      return r.audit.empty() ? kOk : kAudit;
    }

    if (*probe_cmd) {
      const GraphSpec g = load_graph(graph_path, part);
      const std::string id = output_id.empty() ? g.outputs.at(0) : output_id;
      const auto a = analyze(g);
      const auto& oa = a.output(id);
      const std::int64_t len = length > 0 ? length : (out_index + 1) * 64 + oa.receptive_field_frames;
      const IndexInterval dep = dependency_interval(g, id, out_index, len);
      const IndexInterval emp = impulse_probe(g, id, out_index, len);
      print({{"output", id},
             {"output_index", out_index},
             {"input_length", len},
             {"analyzer", to_json(dep)},
             {"probe", to_json(emp)},
             {"match", dep == emp}});
      return dep == emp ? kOk : kFailure;
    }

    if (*export_cmd) {
      fs::create_directories(out_dir);
      const fs::path d(out_dir);
      write_json_file((d / "speechnet1.json").string(), to_json(make_asr_model(reference_speechnet1_config(), seed, "speechnet1")));
      write_json_file((d / "speechnet2.json").string(), to_json(make_asr_model(reference_speechnet2_config(), seed, "speechnet2")));
      write_json_file((d / "asr_tone.json").string(), to_json(tone_asr_model()));
      write_json_file((d / "tts_default.json").string(), to_json(make_tts_model(TTSConfig{}, seed, "tts_default")));
      write_json_file((d / "vision_face.json").string(), graph_to_json(vision_graph(VisionConfig{}, seed)));
      write_json_file((d / "registry.json").string(), default_registry().to_json());
      write_json_file((d / "duty_cycle.json").string(), duty_cycle_script().to_json());
      write_json_file((d / "silent.json").string(), silent_script().to_json());
      print({{"out_dir", out_dir},
             {"files", {"speechnet1.json", "speechnet2.json", "asr_tone.json", "tts_default.json", "vision_face.json",
                        "registry.json", "duty_cycle.json", "silent.json"}}});
      return kOk;
    }

    if (*tone_cmd) {
      const AudioBuffer a = tone_audio(tone_text);
      write_wav(wav_out, a);
      print({{"samples", a.samples.size()}, {"duration_s", a.duration_seconds()}});
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "david: " << e.what() << "\n";
    return exit_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "david: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
