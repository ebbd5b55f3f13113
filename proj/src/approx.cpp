#include "nenn/approx.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <random>

#include "nenn/error.hpp"

namespace nenn {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
  return {t.values().data(), static_cast<Eigen::Index>(t.shape()[0]),
          static_cast<Eigen::Index>(t.size() / t.shape()[0])};
}

void check_layer(const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw ShapeError("weight must be a n x d matrix");
  if (bias.size() != weight.shape()[0]) {
    throw ShapeError("bias length must equal the weight row count");
  }
}

// Exact outputs Z = X W^T + b for the rows of X.
RowMatrix layer_outputs(const Tensor& weight, const Tensor& bias,
                        const Tensor& inputs) {
  const auto w = as_matrix(weight);
  const auto x = as_matrix(inputs);
  RowMatrix z = x * w.transpose();
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(),
                                               static_cast<Eigen::Index>(bias.size()));
  z.rowwise() += b;
  return z;
}

// Rows [P x_i, 1].
RowMatrix augmented_projection(const SparseTernaryProjection& p,
                               const Tensor& inputs) {
  const std::size_t batch = inputs.shape()[0];
  RowMatrix a(batch, p.k() + 1);
  for (std::size_t i = 0; i < batch; ++i) {
    p.apply(inputs.row(i), std::span<double>(a.row(i).data(), p.k()));
    a(i, p.k()) = 1.0;
  }
  return a;
}

double mean_sq_residual(const RowMatrix& z, const RowMatrix& a,
                        const RowMatrix& theta) {
  return (z - a * theta).squaredNorm() / static_cast<double>(z.rows());
}

Tensor to_tensor(const RowMatrix& m, Shape shape) {
  return Tensor(std::move(shape),
                std::vector<double>(m.data(), m.data() + m.size()));
}

}  // namespace

ApproxParams::ApproxParams(QuantTensor w_tilde, QuantTensor b_tilde,
                           SparseTernaryProjection projection,
                           std::size_t layer_id)
    : w_tilde_(std::move(w_tilde)),
      b_tilde_(std::move(b_tilde)),
      projection_(std::move(projection)),
      layer_id_(layer_id) {
  if (w_tilde_.shape().size() != 2 || b_tilde_.shape().size() != 1) {
    throw ShapeError("approx params need n x k weights and length-n bias");
  }
  if (w_tilde_.shape()[1] != projection_.k()) {
    throw ShapeError("approx weight columns (" +
                     std::to_string(w_tilde_.shape()[1]) +
                     ") must equal projection k (" +
                     std::to_string(projection_.k()) + ")");
  }
  if (w_tilde_.shape()[0] != b_tilde_.size()) {
    throw ShapeError("approx weight rows must equal approx bias length");
  }
  w_ = dequantize(w_tilde_).data();
  b_ = dequantize(b_tilde_).data();
}

void ApproxParams::evaluate_projected(std::span<const double> projected,
                                      std::span<double> out) const {
  const std::size_t k = this->k();
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double* w = w_.data() + j * k;
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += w[c] * projected[c];
    out[j] = acc + b_[j];
  }
}

void ApproxParams::evaluate(std::span<const double> x,
                            std::span<double> projected,
                            std::span<double> out) const {
  if (out.size() != n()) throw ShapeError("approx output length mismatch");
  projection_.apply(x, projected);
  evaluate_projected(projected, out);
}

Tensor approx_forward(const ApproxParams& p, const Tensor& x) {
  if (x.size() != p.d()) {
    throw ShapeError("approx_forward: input length " + std::to_string(x.size()) +
                     " does not match d = " + std::to_string(p.d()));
  }
  std::vector<double> projected(p.k());
  Tensor out({p.n()});
  p.evaluate(x.values(), projected, out.values());
  return out;
}

ApproxFit fit_approx(const Tensor& weight, const Tensor& bias,
                     const Tensor& calib,
                     const SparseTernaryProjection& projection,
                     const FitMethod& method, std::size_t layer_id) {
  check_layer(weight, bias);
  const std::size_t n = weight.shape()[0];
  const std::size_t d = weight.shape()[1];
  if (projection.d() != d) {
    throw ShapeError("projection d (" + std::to_string(projection.d()) +
                     ") does not match layer input width " + std::to_string(d));
  }
  if (calib.rank() != 2 || calib.shape()[0] == 0) {
    throw DataError("calibration set is empty");
  }
  if (calib.shape()[1] != d) throw ShapeError("calibration vectors must have length d");
  if (!calib.all_finite()) throw DataError("calibration set contains non-finite values");

  const RowMatrix z = layer_outputs(weight, bias, calib);
  const RowMatrix a = augmented_projection(projection, calib);
  const std::size_t k = projection.k();
  const auto batch = static_cast<std::size_t>(a.rows());

  FitReport report;
  RowMatrix theta;  // (k + 1) x n

  if (std::holds_alternative<ClosedFormFit>(method)) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
    theta = cod.solve(z);
    report.rank = static_cast<std::size_t>(cod.rank());
    report.rank_deficient = report.rank < k + 1;
  } else {
    const auto& sgd = std::get<SgdFit>(method);
    if (sgd.epochs == 0 || sgd.batch == 0) {
      throw ConfigError("sgd fit needs epochs >= 1 and batch >= 1");
    }
    theta = RowMatrix::Zero(k + 1, n);
    RowMatrix velocity = RowMatrix::Zero(k + 1, n);
    const double mean_sq = a.squaredNorm() / static_cast<double>(batch);
    const double step = sgd.lr / std::max(mean_sq, 1e-12);

    std::vector<std::size_t> order(batch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 gen(sgd.seed);
    for (std::size_t epoch = 0; epoch < sgd.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), gen);
      for (std::size_t start = 0; start < batch; start += sgd.batch) {
        const std::size_t stop = std::min(batch, start + sgd.batch);
        RowMatrix grad = RowMatrix::Zero(k + 1, n);
        for (std::size_t i = start; i < stop; ++i) {
          const auto row = a.row(static_cast<Eigen::Index>(order[i]));
          const Eigen::RowVectorXd residual =
              row * theta - z.row(static_cast<Eigen::Index>(order[i]));
          grad.noalias() += row.transpose() * residual;
        }
        grad *= 2.0 / static_cast<double>(stop - start);
        velocity = sgd.momentum * velocity - step * grad;
        theta += velocity;
      }
      report.epoch_mse.push_back(mean_sq_residual(z, a, theta));
    }
  }
  report.mse_before_quant = mean_sq_residual(z, a, theta);

  Tensor w_real = to_tensor(theta.topRows(k).transpose(), {n, k});
  Tensor b_real = to_tensor(theta.row(k), {n});
  if (!w_real.all_finite() || !b_real.all_finite()) {
    throw NumericalError("approximation fit produced non-finite parameters");
  }
  ApproxParams params(quantize_sym(w_real), quantize_sym(b_real), projection,
                      layer_id);

  // Residual after quantization.
  const Tensor w_deq = dequantize(params.w_tilde());
  const Tensor b_deq = dequantize(params.b_tilde());
  RowMatrix theta_q(k + 1, n);
  theta_q.topRows(k) = as_matrix(w_deq).transpose();
  for (std::size_t j = 0; j < n; ++j) theta_q(k, j) = b_deq[j];
  report.mse_after_quant = mean_sq_residual(z, a, theta_q);

  return ApproxFit{std::move(params), std::move(report), std::move(w_real),
                   std::move(b_real)};
}

ApproxParams sketch_params(const Tensor& weight, const Tensor& bias,
                           const SparseTernaryProjection& projection,
                           std::size_t layer_id) {
  check_layer(weight, bias);
  const std::size_t n = weight.shape()[0];
  if (projection.d() != weight.shape()[1]) {
    throw ShapeError("sketch_params: projection d does not match weight width");
  }
  // With f(v) = P v / sqrt(k) and apply() = f, <f(W_j), f(x)> = f(W_j) . apply(x).
  Tensor w_tilde({n, projection.k()});
  for (std::size_t j = 0; j < n; ++j) projection.apply(weight.row(j), w_tilde.row(j));
  return ApproxParams(quantize_sym(w_tilde), quantize_sym(bias), projection,
                      layer_id);
}

double approx_mse(const Tensor& weight, const Tensor& bias,
                  const ApproxParams& p, const Tensor& inputs) {
  check_layer(weight, bias);
  if (inputs.rank() != 2 || inputs.shape()[1] != p.d()) {
    throw ShapeError("approx_mse: inputs must be B x d");
  }
  const RowMatrix z = layer_outputs(weight, bias, inputs);
  std::vector<double> projected(p.k());
  std::vector<double> approx(p.n());
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.shape()[0]; ++i) {
    p.evaluate(inputs.row(i), projected, approx);
    for (std::size_t j = 0; j < p.n(); ++j) {
      const double r = z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - approx[j];
      total += r * r;
    }
  }
  return total / static_cast<double>(inputs.shape()[0]);
}

double output_variance(const Tensor& weight, const Tensor& bias,
                       const Tensor& inputs) {
  check_layer(weight, bias);
  const RowMatrix z = layer_outputs(weight, bias, inputs);
  const Eigen::RowVectorXd mean = z.colwise().mean();
  return (z.rowwise() - mean).squaredNorm() / static_cast<double>(z.rows());
}

}  // namespace nenn
