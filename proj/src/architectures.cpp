#include "bugscope/architectures.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "bugscope/error.hpp"

namespace bugscope {

namespace {

const std::map<std::string, std::string>& named() {
  static const std::map<std::string, std::string> kNamed{
      {"mlp", ":64"},
      {"cnn-small", "8,P,16,P:32"},
      {"vgg-mini", "16,16,P,32,32,32,P,32,32,32,P:64"},
  };
  return kNamed;
}

std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string t;
  while (std::getline(ss, t, ',')) {
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::size_t width(const std::string& layout, const std::string& t) {
  std::size_t v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size() || v == 0) {
    throw ConfigError("architecture '" + layout + "': bad token '" + t + "'");
  }
  return v;
}

}  // namespace

std::vector<std::string> architecture_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : named()) out.push_back(k);
  return out;
}

std::string architecture_layout(const std::string& id) {
  const auto it = named().find(id);
  if (it != named().end()) return it->second;
  if (id.find(':') != std::string::npos) return id;
  throw ConfigError("unknown architecture '" + id + "'");
}

Network build_architecture(const std::string& id, const Shape& input_shape,
                           std::size_t num_classes, std::uint64_t seed) {
  const std::string layout = architecture_layout(id);
  if (input_shape.size() != 3) {
    throw ShapeError("architecture expects an H x W x C input, got " +
                     shape_to_string(input_shape));
  }
  const auto colon = layout.find(':');
  std::vector<Layer> layers;
  std::size_t h = input_shape[0], w = input_shape[1], c = input_shape[2];
  for (const auto& t : tokens(layout.substr(0, colon))) {
    if (t == "P") {
      if (h < 2 || w < 2) throw ConfigError("architecture '" + id + "': too many pools");
      layers.push_back(MaxPool2D{});
      h /= 2;
      w /= 2;
    } else {
      const std::size_t n = width(layout, t);
      layers.push_back(make_conv(3, c, n, 1, 1));
      layers.push_back(ReLU{});
      c = n;
    }
  }
  layers.push_back(Flatten{});
  std::size_t in = h * w * c;
  for (const auto& t : tokens(layout.substr(colon + 1))) {
    const std::size_t n = width(layout, t);
    layers.push_back(make_dense(in, n));
    layers.push_back(ReLU{});
    in = n;
  }
  layers.push_back(make_dense(in, num_classes));
  layers.push_back(Softmax{});
  Network net(input_shape, num_classes, std::move(layers), seed);
  net.mutable_provenance().push_back({"architecture", {{"id", id}, {"layout", layout}}, {}});
  return net;
}

}  // namespace bugscope
