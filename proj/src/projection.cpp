#include "nenn/projection.hpp"

#include <cmath>
#include <random>

#include "nenn/error.hpp"

namespace nenn {

SparseTernaryProjection SparseTernaryProjection::sample(std::size_t k,
                                                        std::size_t d,
                                                        std::size_t s,
                                                        std::uint64_t seed) {
  if (k == 0 || d == 0 || s == 0) {
    throw ConfigError("projection dimensions and sparsity must be positive");
  }
  SparseTernaryProjection p;
  p.k_ = k;
  p.d_ = d;
  p.s_ = s;
  p.seed_ = seed;
  p.scale_ = std::sqrt(static_cast<double>(s) / static_cast<double>(k));
  p.row_begin_.reserve(k + 1);
  p.cols_.reserve(k * d / s + 1);
  p.signs_.reserve(k * d / s + 1);

  // Position-wise draw: u in [0, 2s); 0 -> +1, 1 -> -1, otherwise zero.
  std::mt19937_64 gen(seed);
  const std::uint64_t buckets = 2 * s;
  for (std::size_t r = 0; r < k; ++r) {
    p.row_begin_.push_back(static_cast<std::uint32_t>(p.cols_.size()));
    for (std::size_t c = 0; c < d; ++c) {
      const std::uint64_t u = gen() % buckets;
      if (u < 2) {
        p.cols_.push_back(static_cast<std::uint32_t>(c));
        p.signs_.push_back(u == 0 ? 1 : -1);
      }
    }
  }
  p.row_begin_.push_back(static_cast<std::uint32_t>(p.cols_.size()));
  return p;
}

std::vector<ProjectionEntry> SparseTernaryProjection::entries() const {
  std::vector<ProjectionEntry> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < k_; ++r) {
    for (auto i = row_begin_[r]; i < row_begin_[r + 1]; ++i) {
      out.push_back({static_cast<std::uint32_t>(r), cols_[i], signs_[i]});
    }
  }
  return out;
}

void SparseTernaryProjection::apply(std::span<const double> x,
                                    std::span<double> y) const {
  if (x.size() != d_ || y.size() != k_) {
    throw ShapeError("projection expects input of length " +
                     std::to_string(d_) + " and output of length " +
                     std::to_string(k_));
  }
  for (std::size_t r = 0; r < k_; ++r) {
    double acc = 0.0;
    for (auto i = row_begin_[r]; i < row_begin_[r + 1]; ++i) {
      if (signs_[i] > 0) {
        acc += x[cols_[i]];
      } else {
        acc -= x[cols_[i]];
      }
    }
    y[r] = scale_ * acc;
  }
}

Tensor SparseTernaryProjection::dense() const {
  Tensor m({k_, d_});
  for (const auto& e : entries()) m[e.row * d_ + e.col] = e.sign * scale_;
  return m;
}

SparseTernaryProjection sample_projection(std::size_t k, std::size_t d,
                                          std::size_t s, std::uint64_t seed) {
  return SparseTernaryProjection::sample(k, d, s, seed);
}

Tensor project(const SparseTernaryProjection& p, const Tensor& x) {
  if (x.size() != p.d()) {
    throw ShapeError("project: input length " + std::to_string(x.size()) +
                     " does not match projection d = " + std::to_string(p.d()));
  }
  Tensor y({p.k()});
  p.apply(x.values(), y.values());
  return y;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

PreservationStats preservation_stats(const SparseTernaryProjection& p,
                                     const Tensor& points, double eps) {
  if (points.rank() != 2 || points.shape()[1] != p.d()) {
    throw ShapeError("preservation_stats: points must be n x d");
  }
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("eps must lie in (0, 1)");
  const std::size_t n = points.shape()[0];
  if (n < 2) throw ConfigError("preservation_stats needs at least 2 points");

  Tensor projected({n, p.k()});
  std::vector<double> sq_norm(n);
  std::size_t norm_ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.apply(points.row(i), projected.row(i));
    sq_norm[i] = dot(points.row(i), points.row(i));
    const double proj_sq = dot(projected.row(i), projected.row(i));
    if ((1.0 - eps) * sq_norm[i] <= proj_sq &&
        proj_sq <= (1.0 + eps) * sq_norm[i]) {
      ++norm_ok;
    }
  }

  PreservationStats stats;
  stats.points = n;
  std::size_t violations = 0;
  double rel_err_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double exact = dot(points.row(i), points.row(j));
      const double approx = dot(projected.row(i), projected.row(j));
      const double err = std::abs(approx - exact);
      const double mass = sq_norm[i] + sq_norm[j];
      if (err > 0.5 * eps * mass) ++violations;
      if (mass > 0.0) rel_err_sum += err / (0.5 * mass);
      ++stats.pairs;
    }
  }
  stats.norm_ok_fraction = static_cast<double>(norm_ok) / n;
  stats.ip_violation_fraction = static_cast<double>(violations) / stats.pairs;
  stats.ip_mean_abs_rel_err = rel_err_sum / stats.pairs;
  return stats;
}

PreservationStats preservation_stats(std::size_t k, std::size_t d,
                                     std::size_t s, std::size_t n_points,
                                     double eps, std::uint64_t seed) {
  if (k == 0) throw ConfigError("preservation_stats: k must be positive");
  if (n_points < 2) throw ConfigError("preservation_stats needs n_points >= 2");
  const auto p = sample_projection(k, d, s, seed);

  std::mt19937_64 gen(seed ^ 0x5bd1e995ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor points({n_points, d});
  for (auto& v : points.values()) v = normal(gen);
  return preservation_stats(p, points, eps);
}

}  // namespace nenn
