#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <variant>
#include <vector>

#include "nenn/tensor.hpp"

namespace nenn {

// Binary essentiality map: 1 = essential (kept precise), 0 = injected.
struct Mask {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const;
  Mask complement() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

enum class RankBy { value, magnitude };

// Keep round((1 - ratio) * n) essential outputs.
struct RatioMode {
  double ratio = 0.9;
};

// Keep `keep` essential outputs in every aligned group of `group` outputs.
// A trailing partial group of size g keeps ceil(keep * g / group).
struct StructuredMode {
  std::size_t keep = 1;
  std::size_t group = 8;
};

enum class ProjectionResample { fixed, per_forward };

struct InjectionConfig {
  std::variant<RatioMode, StructuredMode> mode = RatioMode{};
  // Inject into the top-ranked outputs instead of the bottom-ranked ones. The
  // injected fraction stays the same.
  bool invert = false;
  ProjectionResample resample = ProjectionResample::fixed;
  RankBy rank_by = RankBy::value;
  std::set<std::size_t> target_layers;

  // Fraction of outputs injected for a layer of width n, before rounding.
  double nominal_ratio() const;
  void validate() const;
};

std::size_t keep_count(double ratio, std::size_t n);

// Exactly k ones at the k largest scores; ties go to the lowest index.
Mask topk_mask(std::span<const double> scores, std::size_t k,
               RankBy rank_by = RankBy::value);
Mask topk_mask(const Tensor& z_tilde, std::size_t k,
               RankBy rank_by = RankBy::value);

// Per aligned group of m, ones at the n largest scores.
Mask nm_mask(std::span<const double> scores, std::size_t n, std::size_t m,
             RankBy rank_by = RankBy::value);
Mask nm_mask(const Tensor& z_tilde, std::size_t n, std::size_t m,
             RankBy rank_by = RankBy::value);

// z' = z * m + z~ * (1 - m), as an exact selection.
Tensor mix(const Tensor& z, const Tensor& z_tilde, const Mask& m);
void mix_into(std::span<const double> z, std::span<const double> z_tilde,
              const Mask& m, std::span<double> out);

// Mask for one layer output laid out as `positions` x `channels` (row-major).
// Ratio mode ranks over all positions * channels; structured mode groups along
// the channel axis at each position.
Mask layer_mask(std::span<const double> z_tilde, std::size_t positions,
                std::size_t channels, const InjectionConfig& cfg);

}  // namespace nenn
