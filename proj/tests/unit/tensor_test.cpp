#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nenn/error.hpp"
#include "nenn/rng.hpp"
#include "nenn/tensor.hpp"
#include "test_util.hpp"

namespace nenn {
namespace {

TEST(Tensor, ShapeAndValues) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
  t[4] = 2.5;
  EXPECT_EQ(t.row(1)[1], 2.5);
  EXPECT_EQ(shape_to_string(t.shape()), "[2x3]");
}

TEST(Tensor, RejectsDataOfWrongLength) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}).reshaped({3}), ShapeError);
}

TEST(Tensor, MaxAbsAndFinite) {
  auto t = Tensor::vector({1.0, -3.0, 2.0});
  EXPECT_EQ(t.max_abs(), 3.0);
  EXPECT_TRUE(t.all_finite());
  t[0] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Quantize, ScaleIsFloatRepresentable) {
  const auto q = quantize_sym(Tensor::vector({-1.4, 0.7}));
  EXPECT_EQ(q.scale(), static_cast<double>(static_cast<float>(1.4 / 7)));
}

TEST(Quantize, AllZeroUsesUnitScale) {
  const auto q = quantize_sym(Tensor({4}));
  EXPECT_EQ(q.scale(), 1.0);
  for (auto c : q.codes()) EXPECT_EQ(c, 0);
}

TEST(Quantize, MaxMapsToSeven) {
  const auto q = quantize_sym(Tensor::vector({-1.75, 0.875, 0.125, 0.0}));
  EXPECT_EQ(q.scale(), 0.25);
  EXPECT_EQ(q.codes()[0], -7);
  EXPECT_EQ(q.codes()[1], 4);  // 3.5 rounds away from zero
  EXPECT_EQ(q.codes()[2], 1);  // 0.5 rounds away from zero
  EXPECT_EQ(q.codes()[3], 0);
}

TEST(Quantize, RejectsOtherWidthsAndNonFinite) {
  EXPECT_THROW(quantize_sym(Tensor::vector({1.0}), 8), ConfigError);
  EXPECT_THROW(quantize_sym(Tensor::vector({INFINITY})), DataError);
}

TEST(Quantize, QuantTensorValidatesCodesAndScale) {
  EXPECT_THROW(QuantTensor({1}, {8}, 1.0), DataError);
  EXPECT_THROW(QuantTensor({1}, {1}, 0.0), DataError);
  EXPECT_THROW(QuantTensor({2}, {1}, 1.0), ShapeError);
}

TEST(QuantizeProperty, ErrorWithinHalfStepAndCodesInRange) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_int_distribution<std::size_t> len(1, 40);
    std::uniform_real_distribution<double> mag(1e-6, 1e3);
    const double m = mag(rng);
    const auto t = test::random_tensor({len(rng)}, rng, -m, m);
    const auto q = quantize_sym(t);
    const auto back = dequantize(q);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_GE(q.codes()[i], QuantTensor::kMinCode);
      EXPECT_LE(q.codes()[i], QuantTensor::kMaxCode);
      EXPECT_LE(std::abs(back[i] - t[i]), q.scale() / 2 * (1 + 1e-12));
    }
  }
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
  SeedStream a(9), b(9);
  EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(a.next(), SeedStream(9).next());
}

}  // namespace
}  // namespace nenn
