#include "nenn/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nenn/error.hpp"

namespace nenn {

std::size_t Mask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
}

Mask Mask::complement() const {
  Mask out{bits};
  for (auto& b : out.bits) b = b ? 0 : 1;
  return out;
}

double InjectionConfig::nominal_ratio() const {
  if (const auto* r = std::get_if<RatioMode>(&mode)) return r->ratio;
  const auto& s = std::get<StructuredMode>(mode);
  return static_cast<double>(s.group - s.keep) / static_cast<double>(s.group);
}

void InjectionConfig::validate() const {
  if (const auto* r = std::get_if<RatioMode>(&mode)) {
    if (!(r->ratio >= 0.0 && r->ratio <= 1.0)) {
      throw ConfigError("injection ratio must lie in [0, 1]");
    }
  } else {
    const auto& s = std::get<StructuredMode>(mode);
    if (s.keep < 1 || s.keep > s.group) {
      throw ConfigError("structured injection needs 1 <= N <= M");
    }
  }
}

std::size_t keep_count(double ratio, std::size_t n) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("ratio must lie in [0, 1]");
  const auto k = std::lround((1.0 - ratio) * static_cast<double>(n));
  return std::min<std::size_t>(static_cast<std::size_t>(std::max(0L, k)), n);
}

namespace {

// Writes `value` at the k best positions of scores[offset, offset + len).
void mark_top(std::span<const double> scores, std::size_t offset,
              std::size_t len, std::size_t k, RankBy rank_by,
              std::vector<std::size_t>& index, Mask& out,
              std::uint8_t value = 1) {
  if (k == 0) return;
  if (k >= len) {
    std::fill_n(out.bits.begin() + static_cast<std::ptrdiff_t>(offset), len, value);
    return;
  }
  auto key = [&](std::size_t i) {
    return rank_by == RankBy::value ? scores[i] : std::abs(scores[i]);
  };
  index.resize(len);
  std::iota(index.begin(), index.end(), offset);
  auto better = [&](std::size_t a, std::size_t b) {
    const double ka = key(a);
    const double kb = key(b);
    return ka > kb || (ka == kb && a < b);
  };
  std::nth_element(index.begin(), index.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   index.end(), better);
  for (std::size_t i = 0; i < k; ++i) out.bits[index[i]] = value;
}

std::size_t group_keep(std::size_t keep, std::size_t group, std::size_t g) {
  return g == group ? keep : (keep * g + group - 1) / group;
}

}  // namespace

Mask topk_mask(std::span<const double> scores, std::size_t k, RankBy rank_by) {
  if (k > scores.size()) {
    throw ConfigError("top-k: K = " + std::to_string(k) + " exceeds n = " +
                      std::to_string(scores.size()));
  }
  Mask out{std::vector<std::uint8_t>(scores.size(), 0)};
  std::vector<std::size_t> index;
  mark_top(scores, 0, scores.size(), k, rank_by, index, out);
  return out;
}

Mask topk_mask(const Tensor& z_tilde, std::size_t k, RankBy rank_by) {
  return topk_mask(z_tilde.values(), k, rank_by);
}

Mask nm_mask(std::span<const double> scores, std::size_t n, std::size_t m,
             RankBy rank_by) {
  if (n < 1 || n > m) {
    throw ConfigError("N:M mask needs 1 <= N <= M, got " + std::to_string(n) +
                      ":" + std::to_string(m));
  }
  Mask out{std::vector<std::uint8_t>(scores.size(), 0)};
  std::vector<std::size_t> index;
  for (std::size_t start = 0; start < scores.size(); start += m) {
    const std::size_t g = std::min(m, scores.size() - start);
    mark_top(scores, start, g, group_keep(n, m, g), rank_by, index, out);
  }
  return out;
}

Mask nm_mask(const Tensor& z_tilde, std::size_t n, std::size_t m,
             RankBy rank_by) {
  return nm_mask(z_tilde.values(), n, m, rank_by);
}

void mix_into(std::span<const double> z, std::span<const double> z_tilde,
              const Mask& m, std::span<double> out) {
  if (z.size() != z_tilde.size() || z.size() != m.size() ||
      out.size() != z.size()) {
    throw ShapeError("mix: z, z~ and mask lengths differ");
  }
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = m.bits[i] ? z[i] : z_tilde[i];
}

Tensor mix(const Tensor& z, const Tensor& z_tilde, const Mask& m) {
  if (z.shape() != z_tilde.shape()) throw ShapeError("mix: z and z~ shapes differ");
  Tensor out(z.shape());
  mix_into(z.values(), z_tilde.values(), m, out.values());
  return out;
}

Mask layer_mask(std::span<const double> z_tilde, std::size_t positions,
                std::size_t channels, const InjectionConfig& cfg) {
  const std::size_t n = positions * channels;
  if (z_tilde.size() != n) throw ShapeError("layer_mask: layout mismatch");

  Mask out{std::vector<std::uint8_t>(n, 0)};
  std::vector<std::size_t> index;
  if (const auto* ratio = std::get_if<RatioMode>(&cfg.mode)) {
    const std::size_t keep = keep_count(ratio->ratio, n);
    if (!cfg.invert) {
      mark_top(z_tilde, 0, n, keep, cfg.rank_by, index, out);
    } else {
      std::fill(out.bits.begin(), out.bits.end(), 1);
      mark_top(z_tilde, 0, n, n - keep, cfg.rank_by, index, out, 0);
    }
    return out;
  }

  const auto& s = std::get<StructuredMode>(cfg.mode);
  if (s.keep < 1 || s.keep > s.group) throw ConfigError("structured mode needs 1 <= N <= M");
  for (std::size_t pos = 0; pos < positions; ++pos) {
    const std::size_t base = pos * channels;
    for (std::size_t start = 0; start < channels; start += s.group) {
      const std::size_t g = std::min(s.group, channels - start);
      const std::size_t keep = group_keep(s.keep, s.group, g);
      if (!cfg.invert) {
        mark_top(z_tilde, base + start, g, keep, cfg.rank_by, index, out);
      } else {
        std::fill_n(out.bits.begin() + static_cast<std::ptrdiff_t>(base + start), g, 1);
        mark_top(z_tilde, base + start, g, g - keep, cfg.rank_by, index, out, 0);
      }
    }
  }
  return out;
}

}  // namespace nenn
