#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "nenn/projection.hpp"
#include "nenn/tensor.hpp"

namespace nenn {

// Low-rank, low-precision side path z~ = W~ P x + b~ attached to one layer.
// Quantized at construction and immutable afterwards.
class ApproxParams {
 public:
  ApproxParams(QuantTensor w_tilde, QuantTensor b_tilde,
               SparseTernaryProjection projection, std::size_t layer_id);

  const QuantTensor& w_tilde() const { return w_tilde_; }
  const QuantTensor& b_tilde() const { return b_tilde_; }
  const SparseTernaryProjection& projection() const { return projection_; }
  std::size_t layer_id() const { return layer_id_; }

  std::size_t n() const { return b_tilde_.size(); }
  std::size_t k() const { return projection_.k(); }
  std::size_t d() const { return projection_.d(); }

  // z~ for one input vector. `projected` is caller-provided scratch of length
  // k; on return it holds P x.
  void evaluate(std::span<const double> x, std::span<double> projected,
                std::span<double> out) const;

  // z~ given an already projected input P x.
  void evaluate_projected(std::span<const double> projected,
                          std::span<double> out) const;

  friend bool operator==(const ApproxParams& a, const ApproxParams& b) {
    return a.layer_id_ == b.layer_id_ && a.w_tilde_ == b.w_tilde_ &&
           a.b_tilde_ == b.b_tilde_ && a.projection_.k() == b.projection_.k() &&
           a.projection_.d() == b.projection_.d() &&
           a.projection_.s() == b.projection_.s() &&
           a.projection_.seed() == b.projection_.seed();
  }

 private:
  QuantTensor w_tilde_;
  QuantTensor b_tilde_;
  SparseTernaryProjection projection_;
  std::size_t layer_id_;
  std::vector<double> w_;  // dequantized, n x k
  std::vector<double> b_;  // dequantized, n
};

struct ClosedFormFit {};

// Momentum SGD on the MSE objective. The step size is divided by the mean
// squared norm of the augmented projected inputs [P x, 1].
struct SgdFit {
  std::size_t epochs = 50;
  double lr = 0.1;
  double momentum = 0.9;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
};

using FitMethod = std::variant<ClosedFormFit, SgdFit>;

struct FitReport {
  double mse_before_quant = 0.0;
  double mse_after_quant = 0.0;
  std::size_t rank = 0;         // closed form only
  bool rank_deficient = false;  // minimum-norm solution was used
  std::vector<double> epoch_mse;  // sgd only, pre-quantization, per epoch
};

struct ApproxFit {
  ApproxParams params;
  FitReport report;
  Tensor w_real;  // n x k before quantization
  Tensor b_real;  // n before quantization
};

// Fits W~, b~ minimising (1/B) sum |(W x + b) - (W~ P x + b~)|^2 over the
// rows of `calib` (B x d), then quantizes both to INT4.
ApproxFit fit_approx(const Tensor& weight, const Tensor& bias,
                     const Tensor& calib,
                     const SparseTernaryProjection& projection,
                     const FitMethod& method, std::size_t layer_id = 0);

Tensor approx_forward(const ApproxParams& p, const Tensor& x);

// Data-free approximation from the JL inner-product estimate:
// z~_j = <f(W_j), f(x)> + b_j with f(v) = P v / sqrt(k). Valid for any P, so it
// is what a freshly resampled projection uses.
ApproxParams sketch_params(const Tensor& weight, const Tensor& bias,
                           const SparseTernaryProjection& projection,
                           std::size_t layer_id = 0);

// (1/B) sum |z - z~|^2 over the rows of `inputs`.
double approx_mse(const Tensor& weight, const Tensor& bias,
                  const ApproxParams& p, const Tensor& inputs);

// (1/B) sum |z - mean(z)|^2, the MSE of the best constant predictor.
double output_variance(const Tensor& weight, const Tensor& bias,
                       const Tensor& inputs);

}  // namespace nenn
