#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "nenn/tensor.hpp"

namespace nenn {

// Labelled samples with values in [0, 1]. Images are [H, W, C].
struct Dataset {
  Shape sample_shape;
  std::size_t num_classes = 0;
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return inputs.size(); }
  void validate() const;
  // Samples [begin, begin + count), clipped to the end.
  Dataset slice(std::size_t begin, std::size_t count) const;
};

// Grayscale images of a soft bar whose orientation encodes the class
// (angle = class * pi / classes), at a random offset, on a random background,
// plus Gaussian pixel noise. Labels are balanced and shuffled.
struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t image_size = 16;
  std::size_t samples = 2000;
  double noise = 0.15;
  double contrast = 0.5;
  double bar_width = 1.5;
  std::uint64_t seed = 1;

  void validate() const;
};

Dataset make_synthetic(const SyntheticSpec& spec);

// IDX files as distributed with MNIST: big-endian magic 0x00000803 for u8
// images (N x H x W) and 0x00000801 for u8 labels. Pixels are scaled by 1/255.
// num_classes = 0 takes max(label) + 1.
Dataset load_idx(const std::filesystem::path& images,
                 const std::filesystem::path& labels,
                 std::size_t num_classes = 0);
// Single-channel datasets only; values are rounded to the nearest 1/255.
void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels);

}  // namespace nenn
