#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bugscope/attribution.hpp"
#include "bugscope/dataset.hpp"
#include "bugscope/network.hpp"
#include "bugscope/train.hpp"

namespace bugscope {

enum class BugCategory { Data, Model, TestTime };
enum class BugKind { Spurious, LabelFlip, Reinit, Frozen, Ood, PreprocessMismatch };

std::string to_string(BugCategory c);
std::string to_string(BugKind k);
BugCategory bug_category_from_string(const std::string& s);
BugKind bug_kind_from_string(const std::string& s);
BugCategory category_of(BugKind k);

// Recognized params per kind:
//   spurious            fraction (1), textures ("0,1,..." one id per class; default identity)
//   label_flip          fraction (0.1)
//   reinit              layers ("i,j,..."), or top (count of top parameterized layers)
//   frozen              layers ("i,j,...")
//   ood                 (none; uses the pipeline's ood dataset)
//   preprocess_mismatch transform (scale255 | channel_swap | mean_std)
struct BugSpec {
  std::string name;  // report label; defaults to the kind id
  BugCategory category = BugCategory::Data;
  BugKind kind = BugKind::Spurious;
  std::map<std::string, std::string> params;
  std::uint64_t seed = 0;

  // Throws ConfigError when kind and category disagree or a param is malformed.
  void validate() const;
  std::string label() const { return name.empty() ? to_string(kind) : name; }
  friend bool operator==(const BugSpec&, const BugSpec&) = default;
};

enum class PreprocessTransform { Identity, Scale255, ChannelSwap, MeanStd };

std::string to_string(PreprocessTransform t);
PreprocessTransform preprocess_from_string(const std::string& s);

// Applies a test-time transform to one H x W x C input.
Tensor apply_preprocess(PreprocessTransform t, const Tensor& x);

// The clean artifacts a bug list is applied to. Components are optional;
// a spec that needs a missing one is rejected.
struct Pipeline {
  std::optional<LabeledDataset> train_data;
  std::optional<LabeledDataset> test_data;
  std::optional<LabeledDataset> ood_data;  // replacement test set for ood bugs
  std::optional<Network> network;
  TrainConfig train_config;
};

struct ContaminatedPipeline {
  Pipeline base;
  std::optional<LabeledDataset> train_data;
  std::optional<LabeledDataset> test_data;
  std::optional<Network> network;
  TrainConfig train_config;
  PreprocessTransform test_transform = PreprocessTransform::Identity;
  std::vector<BugSpec> applied;

  // The test set after the test-time transform.
  LabeledDataset prepared_test_data() const;
};

ContaminatedPipeline clean_pipeline(const Pipeline& base);

// Applies one bug on top of whatever `current` already carries.
ContaminatedPipeline inject(const BugSpec& spec, const ContaminatedPipeline& current);
ContaminatedPipeline inject(std::span<const BugSpec> specs, const Pipeline& base);

// ---- cascading randomization ----------------------------------------------

struct CascadeStage {
  std::size_t stage = 0;
  std::vector<std::size_t> reinitialized;  // layer indices, top-down order
  std::vector<std::vector<AttributionMap>> maps;  // [input][method]
};

// Stage k re-initializes the top k parameterized layers (cumulatively, so
// each stage's set contains the previous one). Stage 0 is `net` itself.
// `classes[i]` is the class attributed for inputs[i] at every stage.
std::vector<CascadeStage> cascading_randomization(const Network& net,
                                                  std::span<const Tensor> inputs,
                                                  std::span<const std::size_t> classes,
                                                  std::span<const MethodSpec> methods,
                                                  std::uint64_t seed,
                                                  std::span<const Tensor> egrad_baselines = {});

// ---- out-of-domain pairing --------------------------------------------------

struct OodPairing {
  std::vector<std::vector<AttributionMap>> in_domain;                // [input][method]
  std::vector<std::vector<std::vector<AttributionMap>>> out_domain;  // [net][input][method]
};

// Inputs whose channel count differs from a net's input are adapted
// (grayscale replicated to three channels, three channels averaged to
// gray). Each net attributes its own predicted class. EGrad baselines are
// adapted the same way.
OodPairing ood_pairing(const Network& in_domain, std::span<const Network> out_domain,
                       std::span<const Tensor> inputs, std::span<const MethodSpec> methods,
                       std::span<const Tensor> egrad_baselines = {});

// Brings x to `target` shape by channel replication or averaging.
Tensor adapt_channels(const Tensor& x, const Shape& target);

}  // namespace bugscope
