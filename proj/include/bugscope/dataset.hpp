#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bugscope/provenance.hpp"
#include "bugscope/tensor.hpp"

namespace bugscope {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ImageExample {
  Tensor image;        // H x W x C, values in [0, 1]
  std::size_t label = 0;
  Tensor object_mask;  // H x W, 1 = object pixel
  // The full background layer the object was drawn over. Removing the object
  // from `image` (filling mask pixels from here) gives the object-free input.
  std::optional<Tensor> background;
  std::optional<std::size_t> background_id;

  friend bool operator==(const ImageExample&, const ImageExample&) = default;
};

struct LabeledDataset {
  std::vector<ImageExample> examples;
  std::size_t num_classes = 0;
  Split split = Split::Train;
  std::string generator;
  std::uint64_t seed = 0;
  Provenance provenance;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  Shape input_shape() const;

  // Every example's image shape equals the first, every label is in range and
  // every mask matches the spatial dims.
  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

}  // namespace bugscope
