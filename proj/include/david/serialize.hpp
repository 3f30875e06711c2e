// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "david/graph.hpp"
#include "david/tensor.hpp"

namespace david {

using Json = nlohmann::json;

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

Json quant_to_json(const QuantParams& qp);
QuantParams quant_from_json(const Json& j);

/// {"dtype", "shape", "data": base64 little-endian float32 or int8, "quant"?}
Json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const Json& j);

Json layer_to_json(const LayerSpec& l);
LayerSpec layer_from_json(const Json& j);

/// {"input": {...}, "layers": [...], "outputs": [...]}
Json graph_to_json(const GraphSpec& g);
GraphSpec graph_from_json(const Json& j);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace david
