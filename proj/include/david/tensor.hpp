// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace david {

using Shape = std::vector<std::int64_t>;

enum class DType { Float32, Int8Affine };

std::string to_string(DType dtype);

/// Per-tensor affine int8 quantization: real = (code - zero_point) * scale.
struct QuantParams {
  double scale = 1.0;
  int zero_point = 0;

  void validate() const;
  bool operator==(const QuantParams&) const = default;
};

/// Ties round away from zero; used for every rounding step in the project.
double round_half_away(double x) noexcept;

std::int8_t quantize_value(double x, const QuantParams& qp) noexcept;
double dequantize_value(std::int8_t code, const QuantParams& qp) noexcept;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array, either float32 or int8 codes with QuantParams.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor from_floats(Shape shape, std::vector<float> data);
  static Tensor from_codes(Shape shape, std::vector<std::int8_t> codes, QuantParams qp);

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t numel() const noexcept;
  DType dtype() const noexcept { return dtype_; }
  bool is_quantized() const noexcept { return dtype_ == DType::Int8Affine; }
  const std::optional<QuantParams>& quant() const noexcept { return quant_; }

  std::span<const float> floats() const;
  std::span<float> mutable_floats();
  std::span<const std::int8_t> codes() const;

  /// Element (i, j) of a rank-2 tensor as a real number (dequantized if needed).
  double value(std::int64_t i, std::int64_t j) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  DType dtype_ = DType::Float32;
  std::vector<float> f32_;
  std::vector<std::int8_t> q8_;
  std::optional<QuantParams> quant_;
};

Tensor quantize(const Tensor& t, const QuantParams& qp);
Tensor dequantize(const Tensor& t);

/// Largest absolute elementwise difference between two same-shaped tensors,
/// comparing real values.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace david
