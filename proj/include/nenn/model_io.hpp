#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nenn/model.hpp"

namespace nenn {

// NENN model file, all integers little-endian:
//
//   "NENN" | u16 version | u64 payload_bytes | payload | u32 crc32
//
// The CRC covers every byte before it. The payload holds the input shape, the
// class count and one tagged record per layer. Weights are f32; quantized
// approximation payloads are i8 codes plus an f32 scale; projections are
// stored as (k, d, s, seed) and regenerated on load.
inline constexpr std::uint16_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace nenn
