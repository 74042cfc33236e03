#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bugscope/metrics.hpp"

namespace bugscope {

enum class Palette { Grayscale, WhiteRed };

std::string to_string(Palette p);
Palette palette_from_string(const std::string& s);

// Unsigned values are used as is; signed maps use |v|. Values are clamped to
// [0, 1] and quantized as round(255 v).
// Grayscale: binary PGM "P5\n<W> <H>\n255\n" then one byte per pixel.
// WhiteRed:  binary PPM "P6\n<W> <H>\n255\n" then (255, 255 (1 - v), 255 (1 - v)).
std::vector<std::uint8_t> encode_heatmap(const NormalizedMap& map, Palette palette);
void export_heatmap(const NormalizedMap& map, const std::filesystem::path& path, Palette palette);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

// Reads a binary PGM (P5, maxval <= 255). Comment lines in the header are allowed.
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
GrayImage read_pgm(const std::filesystem::path& path);

// Pixels scaled back to [0, 1] as an H x W tensor.
Tensor pgm_to_map(const GrayImage& img);

}  // namespace bugscope
