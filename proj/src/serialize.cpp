// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "david/error.hpp"

namespace david {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");

Json float_vector_json(const std::vector<float>& v) {
  return tensor_to_json(Tensor::from_floats({static_cast<std::int64_t>(v.size())}, v));
}

std::vector<float> float_vector_from(const Json& j) {
  const Tensor t = dequantize(tensor_from_json(j));
  auto f = t.floats();
  return {f.begin(), f.end()};
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? fallback : it->get<T>();
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::array<int, 256> rev{};
  rev.fill(-1);
  for (int k = 0; k < 64; ++k) rev[static_cast<unsigned char>(kAlphabet[k])] = k;
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=') break;
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int v = rev[static_cast<unsigned char>(ch)];
    if (v < 0) raise(ErrorKind::ParseError, "invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

Json quant_to_json(const QuantParams& qp) { return Json{{"scale", qp.scale}, {"zero_point", qp.zero_point}}; }

QuantParams quant_from_json(const Json& j) {
  QuantParams qp{j.at("scale").get<double>(), j.at("zero_point").get<int>()};
  qp.validate();
  return qp;
}

Json tensor_to_json(const Tensor& t) {
  Json j;
  j["dtype"] = to_string(t.dtype());
  j["shape"] = t.shape();
  if (t.is_quantized()) {
    auto c = t.codes();
    j["data"] = base64_encode({reinterpret_cast<const std::uint8_t*>(c.data()), c.size()});
    j["quant"] = quant_to_json(*t.quant());
  } else {
    auto f = t.floats();
    j["data"] = base64_encode({reinterpret_cast<const std::uint8_t*>(f.data()), f.size() * sizeof(float)});
  }
  return j;
}

Tensor tensor_from_json(const Json& j) {
  const Shape shape = j.at("shape").get<Shape>();
  const std::string dtype = j.value("dtype", "float32");
  const auto bytes = base64_decode(j.at("data").get<std::string>());
  if (dtype == "float32") {
    if (bytes.size() % sizeof(float) != 0) raise(ErrorKind::ParseError, "float32 payload length");
    std::vector<float> data(bytes.size() / sizeof(float));
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Tensor::from_floats(shape, std::move(data));
  }
  if (dtype == "int8-affine") {
    std::vector<std::int8_t> codes(bytes.size());
    std::memcpy(codes.data(), bytes.data(), bytes.size());
    return Tensor::from_codes(shape, std::move(codes), quant_from_json(j.at("quant")));
  }
  raise(ErrorKind::ParseError, "unknown dtype '" + dtype + "'");
}

Json layer_to_json(const LayerSpec& l) {
  Json j;
  j["id"] = l.id;
  j["kind"] = to_string(l.kind);
  j["inputs"] = l.inputs;
  Json params = Json::object();
  switch (l.kind) {
    case LayerKind::Conv2d:
      params["kernel_h"] = l.kernel_h;
      params["pad_top"] = l.pad_top;
      params["pad_bottom"] = l.pad_bottom;
      [[fallthrough]];
    case LayerKind::Conv1d:
      params["kernel"] = l.kernel;
      params["stride"] = l.stride;
      params["dilation"] = l.dilation;
      params["pad_left"] = l.pad_left;
      params["pad_right"] = l.pad_right;
      [[fallthrough]];
    case LayerKind::Dense:
      params["in_channels"] = l.in_channels;
      params["out_channels"] = l.out_channels;
      j["weights"] = tensor_to_json(l.weights);
      if (!l.bias.empty()) j["bias"] = float_vector_json(l.bias);
      break;
    case LayerKind::BatchNorm:
      params["eps"] = l.eps;
      j["gamma"] = float_vector_json(l.gamma);
      j["beta"] = float_vector_json(l.beta);
      j["mean"] = float_vector_json(l.mean);
      j["var"] = float_vector_json(l.var);
      break;
    case LayerKind::NearestUpsample:
      params["factor"] = l.factor;
      break;
    default:
      break;
  }
  j["params"] = params;
  if (l.out_quant) j["out_quant"] = quant_to_json(*l.out_quant);
  return j;
}

LayerSpec layer_from_json(const Json& j) {
  LayerSpec l;
  l.id = j.at("id").get<std::string>();
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  l.inputs = j.at("inputs").get<std::vector<std::string>>();
  const Json params = j.value("params", Json::object());
  l.in_channels = get_or<std::int64_t>(params, "in_channels", 0);
  l.out_channels = get_or<std::int64_t>(params, "out_channels", 0);
  l.kernel = get_or<std::int64_t>(params, "kernel", 1);
  l.kernel_h = get_or<std::int64_t>(params, "kernel_h", 1);
  l.stride = get_or<std::int64_t>(params, "stride", 1);
  l.dilation = get_or<std::int64_t>(params, "dilation", 1);
  l.pad_left = get_or<std::int64_t>(params, "pad_left", 0);
  l.pad_right = get_or<std::int64_t>(params, "pad_right", 0);
  l.pad_top = get_or<std::int64_t>(params, "pad_top", 0);
  l.pad_bottom = get_or<std::int64_t>(params, "pad_bottom", 0);
  l.factor = get_or<std::int64_t>(params, "factor", 1);
  l.eps = get_or<double>(params, "eps", 1e-5);
  if (j.contains("weights")) l.weights = tensor_from_json(j.at("weights"));
  if (j.contains("bias")) l.bias = float_vector_from(j.at("bias"));
  if (j.contains("gamma")) l.gamma = float_vector_from(j.at("gamma"));
  if (j.contains("beta")) l.beta = float_vector_from(j.at("beta"));
  if (j.contains("mean")) l.mean = float_vector_from(j.at("mean"));
  if (j.contains("var")) l.var = float_vector_from(j.at("var"));
  if (j.contains("out_quant") && !j.at("out_quant").is_null()) l.out_quant = quant_from_json(j.at("out_quant"));
  return l;
}

Json graph_to_json(const GraphSpec& g) {
  Json input;
  input["shape"] = g.input.shape;
  input["dtype"] = g.is_quantized() ? "int8-affine" : "float32";
  input["time_axis"] = g.input.time_axis ? Json(*g.input.time_axis) : Json(nullptr);
  input["frame_rate_hz"] = g.input.frame_rate_hz;
  if (g.input.quant) input["quant"] = quant_to_json(*g.input.quant);
  Json layers = Json::array();
  for (const auto& l : g.layers) layers.push_back(layer_to_json(l));
  return Json{{"input", input}, {"layers", layers}, {"outputs", g.outputs}};
}

GraphSpec graph_from_json(const Json& j) {
  GraphSpec g;
  try {
    const Json& in = j.at("input");
    g.input.shape = in.at("shape").get<Shape>();
    if (in.contains("time_axis") && !in.at("time_axis").is_null()) g.input.time_axis = in.at("time_axis").get<int>();
    g.input.frame_rate_hz = in.value("frame_rate_hz", 1.0);
    if (in.contains("quant") && !in.at("quant").is_null()) g.input.quant = quant_from_json(in.at("quant"));
    for (const auto& lj : j.at("layers")) g.layers.push_back(layer_from_json(lj));
    g.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::ParseError, std::string("graph JSON: ") + e.what());
  }
  g.validate();
  return g;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::IoError, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::ParseError, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::IoError, "cannot write '" + path + "'");
  out << text;
}

void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace david
