#include "nenn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "nenn/error.hpp"

namespace nenn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_dims(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto dim : shape) {
    if (dim == 0) {
      throw ShapeError("tensor dimensions must be positive, got " +
                       shape_to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) +
                     " cannot hold " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::vector(std::vector<double> data) {
  Shape shape{data.size()};
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> data) {
  return vector(std::vector<double>(data));
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t cols = shape_.back();
  return std::span<double>(data_).subspan(r * cols, cols);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t cols = shape_.back();
  return std::span<const double>(data_).subspan(r * cols, cols);
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

QuantTensor::QuantTensor(Shape shape, std::vector<std::int8_t> codes,
                         double scale)
    : shape_(std::move(shape)), codes_(std::move(codes)), scale_(scale) {
  check_dims(shape_);
  if (shape_size(shape_) != codes_.size()) {
    throw ShapeError("quantized tensor of shape " + shape_to_string(shape_) +
                     " cannot hold " + std::to_string(codes_.size()) +
                     " codes");
  }
  if (!(scale_ > 0.0) || !std::isfinite(scale_)) {
    throw DataError("quantization scale must be positive and finite");
  }
  for (auto c : codes_) {
    if (c < kMinCode || c > kMaxCode) {
      throw DataError("INT4 code out of range: " + std::to_string(c));
    }
  }
}

QuantTensor quantize_sym(const Tensor& t, int bits) {
  if (bits != 4) {
    throw ConfigError("only 4-bit quantization is supported, got " +
                      std::to_string(bits));
  }
  if (!t.all_finite()) throw DataError("cannot quantize non-finite tensor");

  const double max_abs = t.max_abs();
  // Kept float32-representable so the scale survives the model file exactly.
  double scale = max_abs > 0.0 ? static_cast<float>(max_abs / QuantTensor::kMaxCode) : 1.0;
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = max_abs / QuantTensor::kMaxCode;
  std::vector<std::int8_t> codes(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double q = std::round(t[i] / scale);  // half away from zero
    codes[i] = static_cast<std::int8_t>(
        std::clamp(q, double{QuantTensor::kMinCode}, double{QuantTensor::kMaxCode}));
  }
  return QuantTensor(t.shape(), std::move(codes), scale);
}

Tensor dequantize(const QuantTensor& q) {
  std::vector<double> data(q.size());
  const auto codes = q.codes();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = codes[i] * q.scale();
  return Tensor(q.shape(), std::move(data));
}

}  // namespace nenn
