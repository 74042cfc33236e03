#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bugscope/provenance.hpp"
#include "bugscope/tensor.hpp"

namespace bugscope {

// weights: [out, in], bias: [out]. Input must be rank 1.
struct Dense {
  Tensor weights;
  Tensor bias;

  std::size_t in_features() const { return weights.dim(1); }
  std::size_t out_features() const { return weights.dim(0); }
  friend bool operator==(const Dense&, const Dense&) = default;
};

// kernels: [kh, kw, in_channels, out_channels], bias: [out_channels].
// Operates on H x W x C inputs with symmetric zero padding.
struct Conv2D {
  Tensor kernels;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t kernel_h() const { return kernels.dim(0); }
  std::size_t kernel_w() const { return kernels.dim(1); }
  std::size_t in_channels() const { return kernels.dim(2); }
  std::size_t out_channels() const { return kernels.dim(3); }
  friend bool operator==(const Conv2D&, const Conv2D&) = default;
};

struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};

struct MaxPool2D {
  std::size_t window = 2;
  std::size_t stride = 2;
  friend bool operator==(const MaxPool2D&, const MaxPool2D&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

// Elementwise logistic. As the last layer it is the sigmoid output head.
struct Sigmoid {
  friend bool operator==(const Sigmoid&, const Sigmoid&) = default;
};

// Only valid as the last layer (softmax output head).
struct Softmax {
  friend bool operator==(const Softmax&, const Softmax&) = default;
};

using Layer = std::variant<Dense, Conv2D, ReLU, MaxPool2D, Flatten, Sigmoid, Softmax>;

Dense make_dense(std::size_t in, std::size_t out);
Conv2D make_conv(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
                 std::size_t stride = 1, std::size_t padding = 0);

std::string layer_name(const Layer& layer);
bool is_parameterized(const Layer& layer);

enum class InitScheme : std::uint32_t { GlorotUniform = 1 };

// Redraws one parameterized layer: Glorot-uniform weights, zero bias.
void init_layer(Layer& layer, std::uint64_t seed);

class Network {
 public:
  Network() = default;
  // Validates that layer shapes compose and, when `initialize` is set, draws
  // every parameterized layer from the init scheme using `seed`.
  Network(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers,
          std::uint64_t seed, bool initialize = true,
          InitScheme scheme = InitScheme::GlorotUniform);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }
  InitScheme init_scheme() const { return scheme_; }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t depth() const { return layers_.size(); }

  // Output shape of each layer, in order. Throws ShapeError naming the first
  // layer that does not accept its input.
  std::vector<Shape> output_shapes() const;

  std::vector<std::size_t> parameterized_layers() const;

  // True when the last layer is a Sigmoid or Softmax head.
  bool has_output_head() const;
  // Number of layers up to and including the one producing logits.
  std::size_t logit_depth() const { return has_output_head() ? depth() - 1 : depth(); }

  const Provenance& provenance() const { return provenance_; }
  Provenance& mutable_provenance() { return provenance_; }

  friend bool operator==(const Network&, const Network&) = default;

 private:
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
  InitScheme scheme_ = InitScheme::GlorotUniform;
  Provenance provenance_;
};

// outputs[0] is the input, outputs[i + 1] the output of layer i.
struct ActivationTrace {
  std::vector<Tensor> outputs;
  std::size_t logit_index = 0;  // index into outputs holding the logits

  const Tensor& input() const { return outputs.front(); }
  const Tensor& logits() const { return outputs[logit_index]; }
  const Tensor& final_output() const { return outputs.back(); }
};

// Attribution target: the pre-head logit vector or the head's output.
enum class ScoreTarget { Logit, Probability };

ActivationTrace forward(const Network& net, const Tensor& x);

const Tensor& scores(const ActivationTrace& trace, ScoreTarget target);
std::size_t predict(const Network& net, const Tensor& x);

// How a backward pass treats ReLU units. Gradient is the chain rule;
// Deconvnet keeps only positive upstream signal; Guided also gates on the
// forward pre-activation.
enum class ReluRule { Gradient, Deconvnet, Guided };

struct LayerGrad {
  Tensor weights;
  Tensor bias;
};
using ParamGrads = std::vector<LayerGrad>;  // one slot per layer; empty for parameter-free

ParamGrads zero_param_grads(const Network& net);

// Propagates `upstream` (the derivative with respect to outputs[from_index])
// down to the input. Parameter gradients accumulate into `grads` when given.
Tensor backward_from(const Network& net, const ActivationTrace& trace,
                     std::size_t from_index, Tensor upstream, ReluRule rule,
                     ParamGrads* grads = nullptr);

// d score[class_index] / d input.
Tensor backward_gradient(const Network& net, const ActivationTrace& trace,
                         std::size_t class_index,
                         ScoreTarget target = ScoreTarget::Logit,
                         ReluRule rule = ReluRule::Gradient);

// Copy of `net` with the listed parameterized layers redrawn from the init
// scheme. Layer i uses derive_seed(seed, i), so reinitializing {k} and then
// {j} equals reinitializing {k, j} in one call.
Network reinit_layers(const Network& net, const std::vector<std::size_t>& layer_indices,
                      std::uint64_t seed);

}  // namespace bugscope
