#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nenn/tensor.hpp"

namespace nenn {

struct ProjectionEntry {
  std::uint32_t row;
  std::uint32_t col;
  std::int8_t sign;  // +1 or -1

  friend bool operator==(const ProjectionEntry&, const ProjectionEntry&) = default;
};

// Sparse ternary k x d random projection. Entries are sign * sqrt(s) with
// probability 1/(2s) each and zero otherwise; the 1/sqrt(k) normalisation is
// folded into a single scalar scale() = sqrt(s/k) applied once per output.
//
// Only (k, d, s, seed) need to be persisted: the entries are regenerated
// deterministically from them.
class SparseTernaryProjection {
 public:
  static constexpr std::size_t kDefaultSparsity = 3;

  SparseTernaryProjection() = default;

  static SparseTernaryProjection sample(std::size_t k, std::size_t d,
                                        std::size_t s, std::uint64_t seed);

  std::size_t k() const { return k_; }
  std::size_t d() const { return d_; }
  std::size_t s() const { return s_; }
  std::uint64_t seed() const { return seed_; }
  double scale() const { return scale_; }
  std::size_t nnz() const { return cols_.size(); }

  // Stored entries in row-major order.
  std::vector<ProjectionEntry> entries() const;

  // y[r] = scale * sum over stored (r, c, sign) of sign * x[c]. Additions and
  // subtractions only, plus one multiply per output.
  void apply(std::span<const double> x, std::span<double> y) const;

  // Dense k x d matrix with values in {-scale, 0, +scale}.
  Tensor dense() const;

 private:
  std::size_t k_ = 0;
  std::size_t d_ = 0;
  std::size_t s_ = kDefaultSparsity;
  std::uint64_t seed_ = 0;
  double scale_ = 0.0;
  std::vector<std::uint32_t> row_begin_;
  std::vector<std::uint32_t> cols_;
  std::vector<std::int8_t> signs_;
};

SparseTernaryProjection sample_projection(std::size_t k, std::size_t d,
                                          std::size_t s, std::uint64_t seed);

Tensor project(const SparseTernaryProjection& p, const Tensor& x);

struct PreservationStats {
  double norm_ok_fraction = 0.0;
  double ip_violation_fraction = 0.0;
  // Mean of |<f(a), f(b)> - <a, b>| / ((|a|^2 + |b|^2) / 2) over pairs.
  double ip_mean_abs_rel_err = 0.0;
  std::size_t points = 0;
  std::size_t pairs = 0;
};

// Monte-Carlo check of the JL guarantees for one sampled projection over
// n_points standard-normal vectors in R^d:
//   norm:  (1-eps)|y|^2 <= |f(y)|^2 <= (1+eps)|y|^2
//   inner: |<f(a), f(b)> - <a, b>| <= (eps/2)(|a|^2 + |b|^2)  for all pairs
PreservationStats preservation_stats(std::size_t k, std::size_t d,
                                     std::size_t s, std::size_t n_points,
                                     double eps, std::uint64_t seed);

// Same statistics over caller-supplied points (rows of a n x d tensor).
PreservationStats preservation_stats(const SparseTernaryProjection& p,
                                     const Tensor& points, double eps);

}  // namespace nenn
