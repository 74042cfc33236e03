#include <cmath>

#include "bugscope/attribution.hpp"
#include "bugscope/error.hpp"
#include "bugscope/layer_ops.hpp"

namespace bugscope {

namespace {

using detail::linear_backward_input;
using detail::linear_forward;

// Copy of a linear layer with weights mapped elementwise and bias dropped.
template <class F>
Layer map_weights(const Layer& layer, F f) {
  Layer out = layer;
  auto apply = [&](Tensor& w, Tensor& b) {
    for (double& v : w.data()) v = f(v);
    for (double& v : b.data()) v = 0.0;
  };
  if (auto* d = std::get_if<Dense>(&out)) apply(d->weights, d->bias);
  if (auto* c = std::get_if<Conv2D>(&out)) apply(c->kernels, c->bias);
  return out;
}

double pos(double v) { return v > 0.0 ? v : 0.0; }
double neg(double v) { return v < 0.0 ? v : 0.0; }

Tensor positive_part(const Tensor& t) {
  Tensor o = t;
  for (double& v : o.data()) v = pos(v);
  return o;
}

Tensor negative_part(const Tensor& t) {
  Tensor o = t;
  for (double& v : o.data()) v = neg(v);
  return o;
}

// z-rule family: R_in = a * W^T (R / stab(z)) with z the layer's own output.
Tensor relevance_z(const Layer& layer, const Tensor& a, const Tensor& z, const Tensor& r,
                   double epsilon, bool stabilize) {
  Tensor s(z.shape());
  for (std::size_t j = 0; j < z.size(); ++j) {
    double denom = z[j];
    if (stabilize) denom += epsilon * (denom >= 0.0 ? 1.0 : -1.0);
    if (denom == 0.0) {
      if (r[j] != 0.0) {
        throw NumericError("LRP: vanishing denominator at unit " + std::to_string(j) +
                           " carrying relevance " + std::to_string(r[j]));
      }
      continue;
    }
    s[j] = r[j] / denom;
  }
  return hadamard(a, linear_backward_input(layer, a.shape(), s));
}

// alpha-beta rule over positive and negative contributions z_ij = a_i w_ij.
Tensor relevance_alpha_beta(const Layer& layer, const Tensor& a, const Tensor& r, double alpha,
                            double beta) {
  const Layer wp = map_weights(layer, pos);
  const Layer wn = map_weights(layer, neg);
  const Tensor ap = positive_part(a);
  const Tensor an = negative_part(a);

  auto share = [&](const Layer& w1, const Layer& w2) {
    // Contributions a+ w1 + a- w2, normalized per output unit.
    const Tensor z = linear_forward(w1, ap, false) + linear_forward(w2, an, false);
    Tensor s(z.shape());
    for (std::size_t j = 0; j < z.size(); ++j) s[j] = z[j] != 0.0 ? r[j] / z[j] : 0.0;
    return hadamard(ap, linear_backward_input(w1, a.shape(), s)) +
           hadamard(an, linear_backward_input(w2, a.shape(), s));
  };

  Tensor out = share(wp, wn) * alpha;
  if (beta != 0.0) out -= share(wn, wp) * beta;
  return out;
}

// Flat rule: each output unit spreads its relevance uniformly over its inputs.
Tensor relevance_flat(const Layer& layer, const Tensor& a, const Tensor& r) {
  const Layer ones = map_weights(layer, [](double) { return 1.0; });
  const Tensor fan = linear_forward(ones, Tensor(a.shape(), 1.0), false);
  Tensor s(r.shape());
  for (std::size_t j = 0; j < r.size(); ++j) s[j] = fan[j] > 0.0 ? r[j] / fan[j] : 0.0;
  return linear_backward_input(ones, a.shape(), s);
}

}  // namespace

AttributionMap lrp(const Network& net, const Tensor& x, std::size_t class_index, LrpRule rule) {
  if (rule.kind == LrpRule::Kind::AlphaBeta && std::fabs(rule.alpha - rule.beta - 1.0) > 1e-12) {
    throw ConfigError("LRP alpha-beta requires alpha - beta = 1");
  }
  const ActivationTrace trace = forward(net, x);
  const Tensor& logits = trace.logits();
  if (class_index >= logits.size()) {
    throw ShapeError("class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  }
  const auto params = net.parameterized_layers();
  const std::size_t first_linear = params.empty() ? net.depth() : params.front();

  Tensor r(logits.shape());
  r[class_index] = logits[class_index];
  for (std::size_t i = trace.logit_index; i-- > 0;) {
    const Layer& layer = net.layer(i);
    const Tensor& a = trace.outputs[i];
    const Tensor& z = trace.outputs[i + 1];
    if (is_parameterized(layer)) {
      switch (rule.kind) {
        case LrpRule::Kind::Z: r = relevance_z(layer, a, z, r, 0.0, false); break;
        case LrpRule::Kind::Epsilon: r = relevance_z(layer, a, z, r, rule.epsilon, true); break;
        case LrpRule::Kind::AlphaBeta:
          r = relevance_alpha_beta(layer, a, r, rule.alpha, rule.beta);
          break;
        case LrpRule::Kind::CompositeFlat:
          if (i == first_linear) {
            r = relevance_flat(layer, a, r);
          } else if (std::holds_alternative<Conv2D>(layer)) {
            r = relevance_alpha_beta(layer, a, r, 1.0, 0.0);
          } else {
            r = relevance_z(layer, a, z, r, rule.epsilon, true);
          }
          break;
      }
    } else if (std::holds_alternative<ReLU>(layer)) {
      // relevance passes through unchanged
    } else if (const auto* p = std::get_if<MaxPool2D>(&layer)) {
      Tensor in(a.shape());
      for (std::size_t oh = 0; oh < z.dim(0); ++oh)
        for (std::size_t ow = 0; ow < z.dim(1); ++ow)
          for (std::size_t ch = 0; ch < z.dim(2); ++ch)
            in[detail::pool_argmax(*p, a, oh, ow, ch)] += r.at(oh, ow, ch);
      r = std::move(in);
    } else if (std::holds_alternative<Flatten>(layer)) {
      r = r.reshaped(a.shape());
    } else {
      throw ConfigError("LRP: no relevance rule for " + layer_name(layer) + " layer " +
                        std::to_string(i));
    }
  }

  const bool is_signed = rule.kind != LrpRule::Kind::AlphaBeta || rule.beta != 0.0;
  AttributionMap map;
  map.values = std::move(r);
  if (!map.values.all_finite()) throw NumericError("LRP produced non-finite relevance");
  switch (rule.kind) {
    case LrpRule::Kind::Z: map.method = Method::LrpZ; break;
    case LrpRule::Kind::Epsilon: map.method = Method::LrpEps; break;
    case LrpRule::Kind::AlphaBeta: map.method = Method::LrpAlphaBeta; break;
    case LrpRule::Kind::CompositeFlat: map.method = Method::LrpCompositeFlat; break;
  }
  map.target_class = class_index;
  map.signed_values = is_signed;
  return map;
}

}  // namespace bugscope
