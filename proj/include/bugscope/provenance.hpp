#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace bugscope {

// One recorded mutation of a dataset or network, in application order.
struct ProvenanceEntry {
  std::string op;
  std::map<std::string, std::string> params;
  std::vector<std::size_t> indices;

  friend bool operator==(const ProvenanceEntry&, const ProvenanceEntry&) = default;
};

using Provenance = std::vector<ProvenanceEntry>;

std::string provenance_to_json(const Provenance& p);
Provenance provenance_from_json(const std::string& text);

}  // namespace bugscope
