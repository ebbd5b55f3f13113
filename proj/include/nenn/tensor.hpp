#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nenn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major real tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::vector<double> data);
  static Tensor vector(std::initializer_list<double> data);
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row view of a rank-2 tensor.
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  double max_abs() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// 4-bit symmetric fixed-point tensor: value = code * scale.
class QuantTensor {
 public:
  static constexpr int kMinCode = -8;
  static constexpr int kMaxCode = 7;

  QuantTensor() = default;
  QuantTensor(Shape shape, std::vector<std::int8_t> codes, double scale);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return codes_.size(); }
  std::span<const std::int8_t> codes() const { return codes_; }
  double scale() const { return scale_; }

  friend bool operator==(const QuantTensor&, const QuantTensor&) = default;

 private:
  Shape shape_;
  std::vector<std::int8_t> codes_;
  double scale_ = 1.0;
};

// scale = max|t| / 7 rounded to float32 (1 for an all-zero tensor), codes rounded half away from
// zero and clamped to [-8, 7]. Only bits == 4 is supported.
QuantTensor quantize_sym(const Tensor& t, int bits = 4);
Tensor dequantize(const QuantTensor& q);

}  // namespace nenn
