#include "bugscope/dataset.hpp"

#include "bugscope/error.hpp"

namespace bugscope {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

Shape LabeledDataset::input_shape() const {
  if (examples.empty()) throw ConfigError("dataset is empty");
  return examples.front().image.shape();
}

void LabeledDataset::validate() const {
  if (examples.empty()) return;
  const Shape shape = input_shape();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const std::string where = "example " + std::to_string(i);
    if (ex.image.shape() != shape) {
      throw ShapeError(where + ": image shape " + shape_to_string(ex.image.shape()) +
                       " differs from " + shape_to_string(shape));
    }
    if (ex.label >= num_classes) {
      throw ConfigError(where + ": label " + std::to_string(ex.label) + " >= class count " +
                        std::to_string(num_classes));
    }
    if (!ex.object_mask.empty() && ex.object_mask.shape() != Shape{shape[0], shape[1]}) {
      throw ShapeError(where + ": mask shape " + shape_to_string(ex.object_mask.shape()) +
                       " does not match image");
    }
    if (ex.background && ex.background->shape() != shape) {
      throw ShapeError(where + ": background shape does not match image");
    }
  }
}

}  // namespace bugscope
