#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bugscope/dataset.hpp"
#include "bugscope/network.hpp"

namespace bugscope {

enum class Optimizer { SGD, Adam };
enum class Loss { CrossEntropy, BinaryCrossEntropy };

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::set<std::size_t> frozen_layers;
  Loss loss = Loss::CrossEntropy;

  // Throws ConfigError; frozen indices are checked against `net`.
  void validate(const Network& net) const;
};

struct TrainReport {
  std::vector<double> epoch_losses;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
  std::optional<double> test_accuracy;
};

// Loss of one example computed from the logits (the output head is not used).
double example_loss(const Tensor& logits, std::size_t label, Loss loss);
// d loss / d logits.
Tensor loss_gradient(const Tensor& logits, std::size_t label, Loss loss);

// Mini-batch training in place. Batches are drawn from a permutation seeded by
// (cfg.seed, epoch); frozen layers are never written. The dataset provenance
// is appended to the network provenance.
TrainReport train(Network& net, const LabeledDataset& data, const TrainConfig& cfg,
                  const LabeledDataset* val = nullptr, const LabeledDataset* test = nullptr);

double accuracy(const Network& net, const LabeledDataset& data);

}  // namespace bugscope
