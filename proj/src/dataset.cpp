#include "nenn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "nenn/error.hpp"

namespace nenn {

void Dataset::validate() const {
  if (inputs.size() != labels.size()) throw DataError("input and label counts differ");
  if (num_classes == 0) throw DataError("dataset has no classes");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != sample_shape) {
      throw ShapeError("sample " + std::to_string(i) + " has shape " +
                       shape_to_string(inputs[i].shape()) + ", expected " +
                       shape_to_string(sample_shape));
    }
    if (labels[i] >= num_classes) throw DataError("label out of range at sample " + std::to_string(i));
    for (double v : inputs[i].values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw DataError("sample " + std::to_string(i) + " has a value outside [0, 1]");
      }
    }
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  Dataset out{sample_shape, num_classes, {}, {}};
  const auto b = std::min(begin, size());
  const auto e = std::min(size(), b + count);
  out.inputs.assign(inputs.begin() + b, inputs.begin() + e);
  out.labels.assign(labels.begin() + b, labels.begin() + e);
  return out;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (image_size < 4) throw ConfigError("synthetic image size must be at least 4");
  if (samples == 0) throw ConfigError("synthetic sample count must be positive");
  if (noise < 0.0 || contrast <= 0.0 || bar_width <= 0.0) {
    throw ConfigError("synthetic noise must be >= 0, contrast and bar width > 0");
  }
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> labels(spec.samples);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % spec.classes;
  std::shuffle(labels.begin(), labels.end(), rng);

  const auto size = spec.image_size;
  const double centre = (static_cast<double>(size) - 1.0) / 2.0;
  std::uniform_real_distribution<double> offset(-centre / 2.0, centre / 2.0);
  std::uniform_real_distribution<double> background(0.2, 0.4);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  std::normal_distribution<double> pixel_noise(0.0, 1.0);

  Dataset data{{size, size, 1}, spec.classes, {}, labels};
  data.inputs.reserve(spec.samples);
  for (std::size_t label : labels) {
    const double angle = std::numbers::pi * static_cast<double>(label) /
                         static_cast<double>(spec.classes) + jitter(rng);
    const double nx = -std::sin(angle), ny = std::cos(angle);
    const double o = offset(rng);
    const double bg = background(rng);
    Tensor img({size, size, 1});
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dist = (static_cast<double>(x) - centre) * nx +
                            (static_cast<double>(y) - centre) * ny - o;
        const double bar = std::exp(-dist * dist / (2.0 * spec.bar_width * spec.bar_width));
        const double v = bg + spec.contrast * bar + spec.noise * pixel_noise(rng);
        img[y * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    data.inputs.push_back(std::move(img));
  }
  return data;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated IDX header in " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::vector<unsigned char> read_bytes(std::istream& in, std::size_t n,
                                      const std::filesystem::path& path) {
  std::vector<unsigned char> buf(n);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
    throw DataError("truncated IDX payload in " + path.string());
  }
  return buf;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images,
                 const std::filesystem::path& labels, std::size_t num_classes) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw IoError("cannot open " + images.string());
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels.string());

  if (read_be32(img, images) != 0x00000803) throw DataError(images.string() + " is not an IDX u8 image file");
  if (read_be32(lab, labels) != 0x00000801) throw DataError(labels.string() + " is not an IDX u8 label file");
  const std::size_t n = read_be32(img, images);
  const std::size_t h = read_be32(img, images);
  const std::size_t w = read_be32(img, images);
  if (read_be32(lab, labels) != n) throw DataError("IDX image and label counts differ");
  if (n == 0 || h == 0 || w == 0) throw DataError("IDX file has an empty dimension");

  const auto pixels = read_bytes(img, n * h * w, images);
  const auto raw_labels = read_bytes(lab, n, labels);

  Dataset data{{h, w, 1}, num_classes, {}, {}};
  if (data.num_classes == 0) {
    data.num_classes = std::size_t{*std::max_element(raw_labels.begin(), raw_labels.end())} + 1;
  }
  data.inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({h, w, 1});
    for (std::size_t j = 0; j < h * w; ++j) t[j] = pixels[i * h * w + j] / 255.0;
    data.inputs.push_back(std::move(t));
    data.labels.push_back(raw_labels[i]);
  }
  data.validate();
  return data;
}

void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
  data.validate();
  if (data.sample_shape.size() != 3 || data.sample_shape[2] != 1) {
    throw ShapeError("IDX export needs single-channel [H, W, 1] samples");
  }
  if (data.num_classes > 256) throw DataError("IDX labels are limited to 256 classes");
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw IoError("cannot write IDX files");
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(data.sample_shape[0]));
  write_be32(img, static_cast<std::uint32_t>(data.sample_shape[1]));
  for (const auto& t : data.inputs) {
    for (double v : t.values()) img.put(static_cast<char>(std::lround(v * 255.0)));
  }
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (auto l : data.labels) lab.put(static_cast<char>(l));
  if (!img || !lab) throw IoError("failed writing IDX files");
}

}  // namespace nenn
