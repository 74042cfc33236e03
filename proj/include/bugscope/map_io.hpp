#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bugscope/attribution.hpp"

namespace bugscope {

// Attribution map file (little-endian):
//   "BSAM", u32 version (1), str method id, u64 target class, u8 signed,
//   u64 hyperparameter count, then (str key, str value) pairs, tensor values.
inline constexpr std::uint32_t kMapFormatVersion = 1;

std::vector<std::uint8_t> serialize_map(const AttributionMap& map);
AttributionMap deserialize_map(std::span<const std::uint8_t> bytes);
void save_map(const AttributionMap& map, const std::filesystem::path& path);
AttributionMap load_map(const std::filesystem::path& path);

}  // namespace bugscope
