#include "bugscope/map_io.hpp"

#include "bugscope/binio.hpp"
#include "bugscope/error.hpp"

namespace bugscope {

std::vector<std::uint8_t> serialize_map(const AttributionMap& map) {
  ByteWriter w;
  w.raw("BSAM");
  w.u32(kMapFormatVersion);
  w.str(method_id(map.method));
  w.u64(map.target_class);
  w.u8(map.signed_values ? 1 : 0);
  w.u64(map.hyperparameters.size());
  for (const auto& [k, v] : map.hyperparameters) {
    w.str(k);
    w.str(v);
  }
  w.tensor(map.values);
  return w.bytes();
}

AttributionMap deserialize_map(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "attribution map");
  if (r.raw(4) != "BSAM") throw FormatError("attribution map: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kMapFormatVersion) {
    throw FormatError("attribution map: unsupported version " + std::to_string(version));
  }
  AttributionMap map;
  map.method = method_from_id(r.str());
  map.target_class = r.u64();
  map.signed_values = r.u8() != 0;
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string k = r.str();
    map.hyperparameters[k] = r.str();
  }
  map.values = r.tensor();
  if (!r.at_end()) throw FormatError("attribution map: trailing bytes");
  return map;
}

void save_map(const AttributionMap& map, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_map(map));
}

AttributionMap load_map(const std::filesystem::path& path) {
  return deserialize_map(read_file_bytes(path));
}

}  // namespace bugscope
