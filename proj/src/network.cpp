#include "bugscope/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bugscope/error.hpp"
#include "bugscope/layer_ops.hpp"
#include "bugscope/rng.hpp"

namespace bugscope {

namespace detail {

// Flat input offset of the first maximum of window (oh, ow, ch).
std::size_t pool_argmax(const MaxPool2D& p, const Tensor& x, std::size_t oh, std::size_t ow,
                        std::size_t ch) {
  const std::size_t W = x.dim(1), C = x.dim(2);
  std::size_t best = ((oh * p.stride) * W + ow * p.stride) * C + ch;
  for (std::size_t r = 0; r < p.window; ++r) {
    for (std::size_t s = 0; s < p.window; ++s) {
      const std::size_t idx = ((oh * p.stride + r) * W + ow * p.stride + s) * C + ch;
      if (x[idx] > x[best]) best = idx;
    }
  }
  return best;
}

}  // namespace detail

namespace {

using detail::pool_argmax;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

std::string at_layer(std::size_t i, const Layer& l) {
  return "layer " + std::to_string(i) + " (" + layer_name(l) + ")";
}

Shape layer_output_shape(std::size_t index, const Layer& layer, const Shape& in,
                         bool is_last) {
  auto fail = [&](const std::string& why) -> Shape {
    throw ShapeError(at_layer(index, layer) + ": " + why + ", input shape " +
                     shape_to_string(in));
  };
  return std::visit(
      Overloaded{
          [&](const Dense& d) -> Shape {
            if (d.weights.rank() != 2 || d.bias.shape() != Shape{d.out_features()})
              return fail("malformed weights");
            if (in.size() != 1 || in[0] != d.in_features())
              return fail("expects rank-1 input of " + std::to_string(d.in_features()));
            return {d.out_features()};
          },
          [&](const Conv2D& c) -> Shape {
            if (c.kernels.rank() != 4 || c.bias.shape() != Shape{c.out_channels()} ||
                c.stride == 0)
              return fail("malformed kernels");
            if (in.size() != 3 || in[2] != c.in_channels())
              return fail("expects H x W x " + std::to_string(c.in_channels()));
            if (in[0] + 2 * c.padding < c.kernel_h() || in[1] + 2 * c.padding < c.kernel_w())
              return fail("kernel larger than padded input");
            return {conv_out(in[0], c.kernel_h(), c.stride, c.padding),
                    conv_out(in[1], c.kernel_w(), c.stride, c.padding), c.out_channels()};
          },
          [&](const MaxPool2D& p) -> Shape {
            if (in.size() != 3 || p.window == 0 || p.stride == 0 || in[0] < p.window ||
                in[1] < p.window)
              return fail("pool window does not fit");
            return {(in[0] - p.window) / p.stride + 1, (in[1] - p.window) / p.stride + 1,
                    in[2]};
          },
          [&](const Flatten&) -> Shape { return {shape_size(in)}; },
          [&](const Softmax&) -> Shape {
            if (!is_last || in.size() != 1) return fail("softmax must be the rank-1 last layer");
            return in;
          },
          [&](const auto&) -> Shape { return in; },
      },
      layer);
}

Tensor dense_forward(const Dense& d, const Tensor& x, bool with_bias = true) {
  const std::size_t out = d.out_features(), in = d.in_features();
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double acc = with_bias ? d.bias[o] : 0.0;
    const double* w = d.weights.data().data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
  return y;
}

Tensor conv_forward(const Conv2D& c, const Tensor& x, bool with_bias = true) {
  const std::size_t H = x.dim(0), W = x.dim(1), Ci = c.in_channels(), Co = c.out_channels();
  const std::size_t kh = c.kernel_h(), kw = c.kernel_w();
  const std::size_t Ho = conv_out(H, kh, c.stride, c.padding);
  const std::size_t Wo = conv_out(W, kw, c.stride, c.padding);
  Tensor y({Ho, Wo, Co});
  const double* K = c.kernels.data().data();
  for (std::size_t oh = 0; oh < Ho; ++oh) {
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      double* out = &y.at(oh, ow, 0);
      for (std::size_t co = 0; co < Co; ++co) out[co] = with_bias ? c.bias[co] : 0.0;
      for (std::size_t r = 0; r < kh; ++r) {
        const long ih = static_cast<long>(oh * c.stride + r) - static_cast<long>(c.padding);
        if (ih < 0 || ih >= static_cast<long>(H)) continue;
        for (std::size_t s = 0; s < kw; ++s) {
          const long iw = static_cast<long>(ow * c.stride + s) - static_cast<long>(c.padding);
          if (iw < 0 || iw >= static_cast<long>(W)) continue;
          const double* in = &x.at(ih, iw, 0);
          const double* k = K + ((r * kw + s) * Ci) * Co;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double v = in[ci];
            const double* kc = k + ci * Co;
            for (std::size_t co = 0; co < Co; ++co) out[co] += v * kc[co];
          }
        }
      }
    }
  }
  return y;
}

Tensor pool_forward(const MaxPool2D& p, const Tensor& x, const Shape& out_shape) {
  Tensor y(out_shape);
  for (std::size_t oh = 0; oh < out_shape[0]; ++oh)
    for (std::size_t ow = 0; ow < out_shape[1]; ++ow)
      for (std::size_t ch = 0; ch < out_shape[2]; ++ch)
        y.at(oh, ow, ch) = x[pool_argmax(p, x, oh, ow, ch)];
  return y;
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Tensor softmax(const Tensor& z) {
  Tensor p = z;
  const double m = z.max();
  double total = 0.0;
  for (double& v : p.data()) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : p.data()) v /= total;
  return p;
}

Tensor layer_forward(const Layer& layer, const Tensor& x, const Shape& out_shape) {
  return std::visit(
      Overloaded{
          [&](const Dense& d) { return dense_forward(d, x); },
          [&](const Conv2D& c) { return conv_forward(c, x); },
          [&](const ReLU&) {
            Tensor y = x;
            for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
            return y;
          },
          [&](const MaxPool2D& p) { return pool_forward(p, x, out_shape); },
          [&](const Flatten&) { return x.reshaped(out_shape); },
          [&](const Sigmoid&) {
            Tensor y = x;
            for (double& v : y.data()) v = sigmoid(v);
            return y;
          },
          [&](const Softmax&) { return softmax(x); },
      },
      layer);
}

Tensor layer_backward(const Layer& layer, const Tensor& in, const Tensor& out,
                      const Tensor& g, ReluRule rule, LayerGrad* grad) {
  return std::visit(
      Overloaded{
          [&](const Dense& d) {
            const std::size_t O = d.out_features(), I = d.in_features();
            Tensor gin(in.shape());
            const double* w = d.weights.data().data();
            for (std::size_t o = 0; o < O; ++o) {
              const double go = g[o];
              if (go == 0.0) continue;
              for (std::size_t i = 0; i < I; ++i) gin[i] += w[o * I + i] * go;
            }
            if (grad) {
              double* dw = grad->weights.data().data();
              for (std::size_t o = 0; o < O; ++o) {
                const double go = g[o];
                grad->bias[o] += go;
                if (go == 0.0) continue;
                for (std::size_t i = 0; i < I; ++i) dw[o * I + i] += go * in[i];
              }
            }
            return gin;
          },
          [&](const Conv2D& c) {
            const std::size_t H = in.dim(0), W = in.dim(1), Ci = c.in_channels();
            const std::size_t Co = c.out_channels(), kh = c.kernel_h(), kw = c.kernel_w();
            const std::size_t Ho = out.dim(0), Wo = out.dim(1);
            Tensor gin(in.shape());
            const double* K = c.kernels.data().data();
            double* dK = grad ? grad->weights.data().data() : nullptr;
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const double* go = &g.at(oh, ow, 0);
                if (grad)
                  for (std::size_t co = 0; co < Co; ++co) grad->bias[co] += go[co];
                for (std::size_t r = 0; r < kh; ++r) {
                  const long ih =
                      static_cast<long>(oh * c.stride + r) - static_cast<long>(c.padding);
                  if (ih < 0 || ih >= static_cast<long>(H)) continue;
                  for (std::size_t s = 0; s < kw; ++s) {
                    const long iw =
                        static_cast<long>(ow * c.stride + s) - static_cast<long>(c.padding);
                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                    double* gi = &gin.at(ih, iw, 0);
                    const double* xi = &in.at(ih, iw, 0);
                    const std::size_t base = ((r * kw + s) * Ci) * Co;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                      const double* kc = K + base + ci * Co;
                      double acc = 0.0;
                      for (std::size_t co = 0; co < Co; ++co) acc += kc[co] * go[co];
                      gi[ci] += acc;
                      if (dK) {
                        double* dk = dK + base + ci * Co;
                        const double v = xi[ci];
                        for (std::size_t co = 0; co < Co; ++co) dk[co] += v * go[co];
                      }
                    }
                  }
                }
              }
            }
            return gin;
          },
          [&](const ReLU&) {
            Tensor gin = g;
            for (std::size_t i = 0; i < gin.size(); ++i) {
              const bool forward_open = in[i] > 0.0;
              const bool signal_open = g[i] > 0.0;
              bool pass = forward_open;
              if (rule == ReluRule::Deconvnet) pass = signal_open;
              if (rule == ReluRule::Guided) pass = forward_open && signal_open;
              if (!pass) gin[i] = 0.0;
            }
            return gin;
          },
          [&](const MaxPool2D& p) {
            Tensor gin(in.shape());
            for (std::size_t oh = 0; oh < out.dim(0); ++oh)
              for (std::size_t ow = 0; ow < out.dim(1); ++ow)
                for (std::size_t ch = 0; ch < out.dim(2); ++ch)
                  gin[pool_argmax(p, in, oh, ow, ch)] += g.at(oh, ow, ch);
            return gin;
          },
          [&](const Flatten&) { return g.reshaped(in.shape()); },
          [&](const Sigmoid&) {
            Tensor gin = g;
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= out[i] * (1.0 - out[i]);
            return gin;
          },
          [&](const Softmax&) {
            double dot = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * out[i];
            Tensor gin = g;
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = out[i] * (g[i] - dot);
            return gin;
          },
      },
      layer);
}

}  // namespace

Dense make_dense(std::size_t in, std::size_t out) {
  return Dense{Tensor({out, in}), Tensor({out})};
}

Conv2D make_conv(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
                 std::size_t stride, std::size_t padding) {
  return Conv2D{Tensor({kernel, kernel, in_channels, out_channels}), Tensor({out_channels}),
                stride, padding};
}

std::string layer_name(const Layer& layer) {
  return std::visit(Overloaded{
                        [](const Dense&) { return "dense"; },
                        [](const Conv2D&) { return "conv2d"; },
                        [](const ReLU&) { return "relu"; },
                        [](const MaxPool2D&) { return "maxpool2d"; },
                        [](const Flatten&) { return "flatten"; },
                        [](const Sigmoid&) { return "sigmoid"; },
                        [](const Softmax&) { return "softmax"; },
                    },
                    layer);
}

bool is_parameterized(const Layer& layer) {
  return std::holds_alternative<Dense>(layer) || std::holds_alternative<Conv2D>(layer);
}

void init_layer(Layer& layer, std::uint64_t seed) {
  Rng rng(seed);
  auto fill = [&](Tensor& w, Tensor& b, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : w.data()) v = rng.uniform(-limit, limit);
    for (double& v : b.data()) v = 0.0;
  };
  if (auto* d = std::get_if<Dense>(&layer)) {
    fill(d->weights, d->bias, double(d->in_features()), double(d->out_features()));
  } else if (auto* c = std::get_if<Conv2D>(&layer)) {
    const double area = double(c->kernel_h() * c->kernel_w());
    fill(c->kernels, c->bias, area * c->in_channels(), area * c->out_channels());
  } else {
    throw ConfigError("cannot initialize parameter-free " + layer_name(layer) + " layer");
  }
}

Network::Network(Shape input_shape, std::size_t num_classes, std::vector<Layer> layers,
                 std::uint64_t seed, bool initialize, InitScheme scheme)
    : input_shape_(std::move(input_shape)),
      num_classes_(num_classes),
      layers_(std::move(layers)),
      seed_(seed),
      scheme_(scheme) {
  if (layers_.empty()) throw ConfigError("network has no layers");
  const auto shapes = output_shapes();
  const Shape& logit_shape = shapes[logit_depth() - 1];
  if (logit_shape.size() != 1 || logit_shape[0] != num_classes_) {
    throw ShapeError("network emits " + shape_to_string(logit_shape) + " logits for " +
                     std::to_string(num_classes_) + " classes");
  }
  if (initialize) {
    for (std::size_t i : parameterized_layers()) init_layer(layers_[i], derive_seed(seed_, i));
  }
}

std::vector<Shape> Network::output_shapes() const {
  std::vector<Shape> shapes;
  Shape cur = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = layer_output_shape(i, layers_[i], cur, i + 1 == layers_.size());
    shapes.push_back(cur);
  }
  return shapes;
}

std::vector<std::size_t> Network::parameterized_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (is_parameterized(layers_[i])) idx.push_back(i);
  return idx;
}

bool Network::has_output_head() const {
  return !layers_.empty() && (std::holds_alternative<Sigmoid>(layers_.back()) ||
                              std::holds_alternative<Softmax>(layers_.back()));
}

ActivationTrace forward(const Network& net, const Tensor& x) {
  if (x.shape() != net.input_shape()) {
    throw ShapeError("layer 0: input shape " + shape_to_string(x.shape()) +
                     " does not match network input " + shape_to_string(net.input_shape()));
  }
  if (!x.all_finite()) throw NumericError("forward: input contains non-finite values");
  ActivationTrace trace;
  trace.outputs.reserve(net.depth() + 1);
  trace.outputs.push_back(x);
  const auto shapes = net.output_shapes();
  for (std::size_t i = 0; i < net.depth(); ++i) {
    trace.outputs.push_back(layer_forward(net.layer(i), trace.outputs.back(), shapes[i]));
  }
  trace.logit_index = net.logit_depth();
  if (!trace.final_output().all_finite() || !trace.logits().all_finite()) {
    throw NumericError("forward pass produced non-finite values");
  }
  return trace;
}

const Tensor& scores(const ActivationTrace& trace, ScoreTarget target) {
  return target == ScoreTarget::Logit ? trace.logits() : trace.final_output();
}

std::size_t predict(const Network& net, const Tensor& x) {
  const ActivationTrace trace = forward(net, x);
  const Tensor& z = trace.logits();
  return static_cast<std::size_t>(
      std::distance(z.data().begin(), std::max_element(z.data().begin(), z.data().end())));
}

ParamGrads zero_param_grads(const Network& net) {
  ParamGrads grads(net.depth());
  for (std::size_t i = 0; i < net.depth(); ++i) {
    if (const auto* d = std::get_if<Dense>(&net.layer(i))) {
      grads[i] = {Tensor(d->weights.shape()), Tensor(d->bias.shape())};
    } else if (const auto* c = std::get_if<Conv2D>(&net.layer(i))) {
      grads[i] = {Tensor(c->kernels.shape()), Tensor(c->bias.shape())};
    }
  }
  return grads;
}

Tensor backward_from(const Network& net, const ActivationTrace& trace,
                     std::size_t from_index, Tensor upstream, ReluRule rule,
                     ParamGrads* grads) {
  if (trace.outputs.size() != net.depth() + 1) {
    throw ShapeError("activation trace has " + std::to_string(trace.outputs.size()) +
                     " entries, network expects " + std::to_string(net.depth() + 1));
  }
  if (from_index > net.depth()) throw ShapeError("backward start index out of range");
  if (upstream.shape() != trace.outputs[from_index].shape()) {
    throw ShapeError("upstream shape " + shape_to_string(upstream.shape()) +
                     " does not match layer output " +
                     shape_to_string(trace.outputs[from_index].shape()));
  }
  Tensor g = std::move(upstream);
  for (std::size_t i = from_index; i-- > 0;) {
    LayerGrad* slot = grads && is_parameterized(net.layer(i)) ? &(*grads)[i] : nullptr;
    g = layer_backward(net.layer(i), trace.outputs[i], trace.outputs[i + 1], g, rule, slot);
  }
  return g;
}

Tensor backward_gradient(const Network& net, const ActivationTrace& trace,
                         std::size_t class_index, ScoreTarget target, ReluRule rule) {
  const std::size_t from =
      target == ScoreTarget::Logit ? trace.logit_index : trace.outputs.size() - 1;
  const Tensor& s = trace.outputs.at(from);
  if (class_index >= s.size()) {
    throw ShapeError("class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(s.size()) + " scores");
  }
  Tensor seed(s.shape());
  seed[class_index] = 1.0;
  return backward_from(net, trace, from, std::move(seed), rule);
}

Network reinit_layers(const Network& net, const std::vector<std::size_t>& layer_indices,
                      std::uint64_t seed) {
  Network out = net;
  std::set<std::size_t> seen;
  for (std::size_t i : layer_indices) {
    if (i >= net.depth()) {
      throw ConfigError("reinit: layer index " + std::to_string(i) + " out of range");
    }
    if (!is_parameterized(net.layer(i))) {
      throw ConfigError("reinit: layer " + std::to_string(i) + " (" +
                        layer_name(net.layer(i)) + ") has no parameters");
    }
    if (!seen.insert(i).second) continue;
    init_layer(out.mutable_layers()[i], derive_seed(seed, i));
  }
  return out;
}

namespace detail {

Tensor linear_forward(const Layer& layer, const Tensor& x, bool with_bias) {
  if (const auto* d = std::get_if<Dense>(&layer)) return dense_forward(*d, x, with_bias);
  if (const auto* c = std::get_if<Conv2D>(&layer)) return conv_forward(*c, x, with_bias);
  throw ConfigError("linear_forward: " + layer_name(layer) + " is not a linear layer");
}

Tensor linear_backward_input(const Layer& layer, const Shape& input_shape, const Tensor& g) {
  if (!is_parameterized(layer)) {
    throw ConfigError("linear_backward_input: " + layer_name(layer) + " is not a linear layer");
  }
  const Tensor in(input_shape);
  return layer_backward(layer, in, g, g, ReluRule::Gradient, nullptr);
}

}  // namespace detail

}  // namespace bugscope
