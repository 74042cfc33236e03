#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bugscope/network.hpp"

namespace bugscope {

// Named layouts and the layout grammar they expand to:
//   "<blocks>:<hidden>" where blocks is a comma list of N (3x3 same-padded
//   conv with N filters, then ReLU) and P (2x2 max pool), and hidden is a
//   comma list of dense widths (each followed by ReLU). A dense layer to the
//   class count and a softmax head close every network.
//   mlp        ":64"
//   cnn-small  "8,P,16,P:32"
//   vgg-mini   "16,16,P,32,32,32,P,32,32,32,P:64"
std::vector<std::string> architecture_names();
std::string architecture_layout(const std::string& id);

Network build_architecture(const std::string& id, const Shape& input_shape,
                           std::size_t num_classes, std::uint64_t seed);

}  // namespace bugscope
