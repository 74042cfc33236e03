#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bugscope/attribution.hpp"
#include "bugscope/bugs.hpp"
#include "bugscope/datagen.hpp"
#include "bugscope/train.hpp"

namespace bugscope {

// Plain-text config: "[section]" or "[section.label]" headers followed by
// "key = value" lines. '#' starts a comment, values may be double-quoted,
// lists are comma separated. Keys before the first header belong to a
// section with an empty name.
struct ConfigSection {
  std::string name;   // "bug" for "[bug.flip]"
  std::string label;  // "flip" for "[bug.flip]"
  std::vector<std::pair<std::string, std::string>> entries;
  std::size_t line = 0;

  const std::string* find(const std::string& key) const;
  std::string title() const { return label.empty() ? name : name + "." + label; }
};

struct ConfigDocument {
  std::vector<ConfigSection> sections;

  // First section with this name (no label), if any.
  const ConfigSection* section(const std::string& name) const;
  std::vector<const ConfigSection*> all(const std::string& name) const;
};

ConfigDocument parse_config(const std::string& text, const std::string& origin = "config");
ConfigDocument load_config(const std::filesystem::path& path);

struct DatasetSpec {
  std::string generator = "shapes";  // shapes | glyphs | idx
  std::size_t n_train = 600;
  std::size_t n_test = 200;
  std::size_t classes = 4;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  ShapeBackground background = ShapeBackground::Neutral;
  // idx only
  std::filesystem::path train_images, train_labels, test_images, test_labels;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

enum class MetricId { Ssim, Spearman, SpearmanAbs, NormDiff, SsimGt1, SsimGt2 };

std::string to_string(MetricId m);
MetricId metric_from_string(const std::string& s);

struct BatteryConfig {
  std::optional<std::uint64_t> seed;  // mandatory; kept optional to report it missing
  DatasetSpec dataset;
  std::optional<DatasetSpec> ood_dataset;
  std::string architecture = "cnn-small";
  TrainConfig train;
  std::vector<BugSpec> bugs;
  std::vector<MethodSpec> methods;
  std::vector<MetricId> metrics{MetricId::Ssim, MetricId::Spearman};
  std::size_t samples = 190;
  std::size_t heatmaps = 2;  // maps exported per (bug, method)
  bool cascade = false;      // also record cascading-randomization stage curves
  std::filesystem::path output_dir = "battery-out";

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Builds a battery config. Unknown sections or keys are rejected.
BatteryConfig battery_config_from(const ConfigDocument& doc);
BatteryConfig load_battery_config(const std::filesystem::path& path);

// Applies "key = value" style settings to a method spec (method, steps, ...).
void apply_method_setting(MethodSpec& spec, const std::string& key, const std::string& value);
void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
void apply_dataset_setting(DatasetSpec& spec, const std::string& key, const std::string& value);

// Materializes the train and test sets of a dataset spec. The seed fixes both.
std::pair<LabeledDataset, LabeledDataset> build_datasets(const DatasetSpec& spec,
                                                         std::uint64_t seed);

}  // namespace bugscope
