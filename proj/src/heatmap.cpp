#include "bugscope/heatmap.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "bugscope/binio.hpp"
#include "bugscope/error.hpp"

namespace bugscope {

namespace {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

}  // namespace

std::string to_string(Palette p) { return p == Palette::WhiteRed ? "white-red" : "grayscale"; }

Palette palette_from_string(const std::string& s) {
  if (s == "grayscale" || s == "gray") return Palette::Grayscale;
  if (s == "white-red") return Palette::WhiteRed;
  throw ConfigError("unknown palette '" + s + "' (expected grayscale or white-red)");
}

std::vector<std::uint8_t> encode_heatmap(const NormalizedMap& map, Palette palette) {
  const Tensor& v = map.values;
  if (v.rank() != 2) throw ShapeError("heatmap: expected an H x W map, got " +
                                      shape_to_string(v.shape()));
  if (!v.all_finite()) throw NumericError("heatmap: map contains non-finite values");
  const std::size_t H = v.dim(0), W = v.dim(1);
  const std::string header = std::string(palette == Palette::Grayscale ? "P5" : "P6") + "\n" +
                             std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double x : v.data()) {
    const double a = map.mode == NormMode::Signed ? std::fabs(x) : x;
    if (palette == Palette::Grayscale) {
      out.push_back(quantize(a));
    } else {
      const std::uint8_t fade = quantize(1.0 - std::clamp(a, 0.0, 1.0));
      out.insert(out.end(), {255, fade, fade});
    }
  }
  return out;
}

void export_heatmap(const NormalizedMap& map, const std::filesystem::path& path, Palette palette) {
  write_file_bytes(path, encode_heatmap(map, palette));
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 9) throw FormatError(std::string("PGM: ") + what + " too large");
    }
    if (digits == 0) throw FormatError(std::string("PGM: missing ") + what);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw FormatError("PGM: bad magic (expected P5)");
  }
  pos = 2;
  GrayImage img;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval == 0 || maxval > 255) {
    throw FormatError("PGM: unsupported maxval " + std::to_string(maxval));
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("PGM: truncated header");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos != n) {
    throw FormatError("PGM: expected " + std::to_string(n) + " pixel bytes, got " +
                      std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  if (maxval != 255) {
    for (auto& p : img.pixels) {
      p = static_cast<std::uint8_t>(std::lround(255.0 * std::min<double>(p, maxval) / maxval));
    }
  }
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path)); }

Tensor pgm_to_map(const GrayImage& img) {
  Tensor t({img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

}  // namespace bugscope
