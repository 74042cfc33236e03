#include "bugscope/provenance.hpp"

#include <json.hpp>

#include "bugscope/error.hpp"

namespace bugscope {

std::string provenance_to_json(const Provenance& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : p) {
    arr.push_back({{"op", e.op}, {"params", e.params}, {"indices", e.indices}});
  }
  return arr.dump();
}

Provenance provenance_from_json(const std::string& text) {
  Provenance p;
  try {
    for (const auto& item : nlohmann::json::parse(text)) {
      ProvenanceEntry e;
      e.op = item.at("op").get<std::string>();
      e.params = item.at("params").get<std::map<std::string, std::string>>();
      e.indices = item.at("indices").get<std::vector<std::size_t>>();
      p.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("malformed provenance record: ") + ex.what());
  }
  return p;
}

}  // namespace bugscope
