#include "bugscope/binio.hpp"

#include <fstream>
#include <iterator>
#include <limits>

namespace bugscope {

void ByteReader::need(std::size_t n) const {
  if (n > bytes_.size() - pos_) {
    const std::size_t want = n > std::numeric_limits<std::size_t>::max() - pos_
                                 ? std::numeric_limits<std::size_t>::max()
                                 : pos_ + n;
    throw FormatError("truncated " + what_ + ": expected at least " + std::to_string(want) +
                      " bytes, got " + std::to_string(bytes_.size()));
  }
}

Shape ByteReader::shape() {
  const std::uint32_t rank = u32();
  if (rank > 8) throw FormatError(what_ + ": implausible tensor rank " + std::to_string(rank));
  Shape s(rank);
  for (auto& d : s) d = u64();
  return s;
}

Tensor ByteReader::tensor() {
  Shape s = shape();
  std::size_t n = 1;
  for (auto d : s) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / 8 / d) {
      throw FormatError(what_ + ": implausible tensor shape " + shape_to_string(s));
    }
    n *= d;
  }
  need(n * 8);
  std::vector<double> values(n);
  for (auto& v : values) v = f64();
  return Tensor(std::move(s), std::move(values));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace bugscope
