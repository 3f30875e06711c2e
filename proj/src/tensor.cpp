// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "david/error.hpp"

namespace david {

std::string to_string(DType dtype) { return dtype == DType::Float32 ? "float32" : "int8-affine"; }

void QuantParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    raise(ErrorKind::ConfigError, "quantization scale must be positive");
  }
  if (zero_point < -128 || zero_point > 127) {
    raise(ErrorKind::ConfigError, "zero_point outside [-128, 127]");
  }
}

double round_half_away(double x) noexcept { return std::round(x); }

std::int8_t quantize_value(double x, const QuantParams& qp) noexcept {
  const double code = round_half_away(x / qp.scale) + qp.zero_point;
  return static_cast<std::int8_t>(std::clamp(code, -128.0, 127.0));
}

double dequantize_value(std::int8_t code, const QuantParams& qp) noexcept {
  return (static_cast<int>(code) - qp.zero_point) * qp.scale;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) raise(ErrorKind::ShapeMismatch, "negative dimension in " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  t.f32_.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::from_floats(Shape shape, std::vector<float> data) {
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    raise(ErrorKind::ShapeMismatch, "data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.f32_ = std::move(data);
  return t;
}

Tensor Tensor::from_codes(Shape shape, std::vector<std::int8_t> codes, QuantParams qp) {
  qp.validate();
  if (static_cast<std::int64_t>(codes.size()) != shape_numel(shape)) {
    raise(ErrorKind::ShapeMismatch, "code count does not match shape " + shape_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::Int8Affine;
  t.q8_ = std::move(codes);
  t.quant_ = qp;
  return t;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) raise(ErrorKind::ShapeMismatch, "axis out of range");
  return shape_[axis];
}

std::int64_t Tensor::numel() const noexcept {
  return static_cast<std::int64_t>(is_quantized() ? q8_.size() : f32_.size());
}

std::span<const float> Tensor::floats() const {
  if (is_quantized()) raise(ErrorKind::ShapeMismatch, "tensor is int8-affine, not float32");
  return f32_;
}

std::span<float> Tensor::mutable_floats() {
  if (is_quantized()) raise(ErrorKind::ShapeMismatch, "tensor is int8-affine, not float32");
  return f32_;
}

std::span<const std::int8_t> Tensor::codes() const {
  if (!is_quantized()) raise(ErrorKind::ShapeMismatch, "tensor is float32, not int8-affine");
  return q8_;
}

double Tensor::value(std::int64_t i, std::int64_t j) const {
  if (rank() != 2) raise(ErrorKind::ShapeMismatch, "value(i, j) needs a rank-2 tensor");
  const auto idx = static_cast<std::size_t>(i * shape_[1] + j);
  return is_quantized() ? dequantize_value(q8_.at(idx), *quant_) : static_cast<double>(f32_.at(idx));
}

Tensor quantize(const Tensor& t, const QuantParams& qp) {
  qp.validate();
  auto src = t.floats();
  std::vector<std::int8_t> codes(src.size());
  std::transform(src.begin(), src.end(), codes.begin(),
                 [&](float x) { return quantize_value(x, qp); });
  return Tensor::from_codes(t.shape(), std::move(codes), qp);
}

Tensor dequantize(const Tensor& t) {
  if (!t.is_quantized()) return t;
  auto src = t.codes();
  std::vector<float> out(src.size());
  std::transform(src.begin(), src.end(), out.begin(), [&](std::int8_t c) {
    return static_cast<float>(dequantize_value(c, *t.quant()));
  });
  return Tensor::from_floats(t.shape(), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    raise(ErrorKind::ShapeMismatch, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const Tensor fa = dequantize(a);
  const Tensor fb = dequantize(b);
  double worst = 0.0;
  auto xa = fa.floats();
  auto xb = fb.floats();
  for (std::size_t i = 0; i < xa.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(xa[i]) - static_cast<double>(xb[i])));
  }
  return worst;
}

}  // namespace david
