#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bugscope/network.hpp"

namespace bugscope {

// Model file layout (all integers little-endian):
//   "BSNN"                      magic, 4 bytes
//   u32 version                 currently 1
//   u32 rank, u64 dims[rank]    input shape
//   u64 classes, u64 seed, u32 init scheme
//   u32 layer count, then per layer:
//     u32 kind   1 dense | 2 conv2d | 3 relu | 4 maxpool2d | 5 flatten | 6 sigmoid | 7 softmax
//     dense:     tensor weights, tensor bias
//     conv2d:    u64 stride, u64 padding, tensor kernels, tensor bias
//     maxpool2d: u64 window, u64 stride
//   u64 length, bytes           provenance as JSON
// A tensor is u32 rank, u64 dims[rank], then f64 values in row-major order.
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_network(const Network& net);
Network deserialize_network(std::span<const std::uint8_t> bytes);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace bugscope
