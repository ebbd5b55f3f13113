#include <gtest/gtest.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "nenn/error.hpp"
#include "nenn/harness.hpp"
#include "nenn/model_io.hpp"
#include "test_util.hpp"

namespace nenn {
namespace {

namespace fs = std::filesystem;

constexpr std::size_t kHeader = 4 + 2 + 8;

Model sample_model(std::uint64_t seed, bool approx) {
  std::mt19937_64 rng(seed);
  Model m = test::tiny_conv_net(rng, 6, 6, 2, 4, 3, 1, 1);
  round_to_float(m);
  if (approx) {
    for (std::size_t i : {0u, 3u}) {
      const auto& l = m.layer(i);
      const auto calib = test::random_tensor({64, l.in_features()}, rng, 0.0, 1.0);
      const auto p = sample_projection(l.in_features() / 3, l.in_features(), 3, seed + i);
      m.attach_approx(i, fit_approx(l.weight.reshaped({l.out_features(), l.in_features()}), l.bias,
                                    calib, p, ClosedFormFit{}, i)
                             .params);
    }
    m.layer(3).noise_sigma = 0.25;
  }
  return m;
}

// Rewrites the trailing CRC so that edits reach the parser.
void reseal(std::vector<std::uint8_t>& bytes) {
  const auto body = bytes.size() - 4;
  const std::uint32_t crc = static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(body)));
  for (int i = 0; i < 4; ++i) bytes[body + i] = static_cast<std::uint8_t>(crc >> (8 * i));
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("nenn_io_test_" + std::to_string(::getpid()) + "_" + name);
}

TEST(ModelIo, RoundTripIsExact) {
  for (bool approx : {false, true}) {
    const auto m = sample_model(3, approx);
    const auto bytes = serialize_model(m);
    const auto back = deserialize_model(bytes);
    EXPECT_EQ(back, m);
    EXPECT_EQ(serialize_model(back), bytes);
  }
}

TEST(ModelIo, SaveLoadSaveIsByteIdentical) {
  const auto m = sample_model(4, true);
  const auto a = temp_path("a.nenn"), b = temp_path("b.nenn");
  save_model(m, a);
  save_model(load_model(a), b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, sb);
  fs::remove(a);
  fs::remove(b);
}

TEST(ModelIo, LoadedModelPredictsIdentically) {
  const auto m = sample_model(5, true);
  const auto back = deserialize_model(serialize_model(m));
  InjectionConfig c;
  c.mode = RatioMode{0.5};
  c.target_layers = {0, 3};
  std::mt19937_64 rng(6);
  for (int i = 0; i < 5; ++i) {
    const auto x = test::random_tensor({6, 6, 2}, rng, 0.0, 1.0);
    EXPECT_EQ(forward(back, x, {&c, 9}), forward(m, x, {&c, 9}));
  }
}

TEST(ModelIo, HeaderLayout) {
  const auto bytes = serialize_model(sample_model(1, false));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NENN");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), kModelFormatVersion);
  std::uint64_t payload = 0;
  for (int i = 0; i < 8; ++i) payload |= std::uint64_t{bytes[6 + i]} << (8 * i);
  EXPECT_EQ(payload + kHeader + 4, bytes.size());
}

TEST(ModelIo, CorruptedPayloadByteFailsChecksum) {
  const auto good = serialize_model(sample_model(2, true));
  for (std::size_t pos : {kHeader, kHeader + 17, good.size() / 2, good.size() - 5}) {
    auto bad = good;
    bad[pos] ^= 0x40;
    EXPECT_THROW(deserialize_model(bad), ChecksumError) << "byte " << pos;
  }
}

TEST(ModelIo, DistinctErrorsPerFailure) {
  const auto good = serialize_model(sample_model(2, false));

  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_model(magic), BadMagicError);

  auto version = good;
  version[4] = 2;
  reseal(version);
  EXPECT_THROW(deserialize_model(version), VersionMismatchError);

  for (std::size_t keep : {std::size_t{3}, kHeader, good.size() - 1}) {
    const std::vector<std::uint8_t> cut(good.begin(), good.begin() + keep);
    EXPECT_THROW(deserialize_model(cut), TruncatedFileError) << "kept " << keep;
  }

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_model(trailing), FormatError);
}

TEST(ModelIo, UnknownLayerTagIsUnsupported) {
  // Payload: u32 rank, rank x u32 dims, u32 classes, u32 layer count, then the
  // first layer's u8 tag.
  const auto m = sample_model(7, false);
  auto bytes = serialize_model(m);
  const std::size_t tag = kHeader + 4 + 4 * m.input_shape().size() + 4 + 4;
  ASSERT_EQ(bytes[tag], static_cast<std::uint8_t>(LayerKind::conv2d));
  bytes[tag] = 0x7f;
  reseal(bytes);
  const auto path = temp_path("unknown_tag.nenn");
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                              static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(load_model(path), UnsupportedLayerError);
  fs::remove(path);
}

TEST(ModelIo, MissingFileIsIoError) {
  EXPECT_THROW(load_model(temp_path("does_not_exist.nenn")), IoError);
}

}  // namespace
}  // namespace nenn
