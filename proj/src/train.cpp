#include "bugscope/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bugscope/error.hpp"
#include "bugscope/rng.hpp"

namespace bugscope {

namespace {

double log_sum_exp(const Tensor& z) {
  const double m = z.max();
  double total = 0.0;
  for (double v : z.data()) total += std::exp(v - m);
  return m + std::log(total);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double logistic(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct AdamState {
  std::vector<LayerGrad> m, v;
  std::size_t step = 0;
};

void apply_update(Network& net, const ParamGrads& grads, double scale, const TrainConfig& cfg,
                  AdamState& adam) {
  ++adam.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(adam.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(adam.step));
  auto update = [&](Tensor& param, const Tensor& grad, Tensor& m, Tensor& v) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i] * scale;
      if (cfg.optimizer == Optimizer::SGD) {
        param[i] -= cfg.learning_rate * g;
        continue;
      }
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mh = m[i] / bc1, vh = v[i] / bc2;
      param[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    }
  };
  auto& layers = net.mutable_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (cfg.frozen_layers.contains(i)) continue;
    if (auto* d = std::get_if<Dense>(&layers[i])) {
      update(d->weights, grads[i].weights, adam.m[i].weights, adam.v[i].weights);
      update(d->bias, grads[i].bias, adam.m[i].bias, adam.v[i].bias);
    } else if (auto* c = std::get_if<Conv2D>(&layers[i])) {
      update(c->kernels, grads[i].weights, adam.m[i].weights, adam.v[i].weights);
      update(c->bias, grads[i].bias, adam.m[i].bias, adam.v[i].bias);
    }
  }
}

}  // namespace

void TrainConfig::validate(const Network& net) const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  for (std::size_t i : frozen_layers) {
    if (i >= net.depth() || !is_parameterized(net.layer(i))) {
      throw ConfigError("frozen layer index " + std::to_string(i) +
                        " does not name a parameterized layer");
    }
  }
}

double example_loss(const Tensor& logits, std::size_t label, Loss loss) {
  if (loss == Loss::CrossEntropy) return log_sum_exp(logits) - logits[label];
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    total += softplus(logits[k]) - (k == label ? logits[k] : 0.0);
  }
  return total;
}

Tensor loss_gradient(const Tensor& logits, std::size_t label, Loss loss) {
  Tensor g(logits.shape());
  if (loss == Loss::CrossEntropy) {
    const double lse = log_sum_exp(logits);
    for (std::size_t k = 0; k < logits.size(); ++k) g[k] = std::exp(logits[k] - lse);
    g[label] -= 1.0;
  } else {
    for (std::size_t k = 0; k < logits.size(); ++k)
      g[k] = logistic(logits[k]) - (k == label ? 1.0 : 0.0);
  }
  return g;
}

double accuracy(const Network& net, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data.examples) correct += predict(net, ex.image) == ex.label;
  return double(correct) / double(data.size());
}

TrainReport train(Network& net, const LabeledDataset& data, const TrainConfig& cfg,
                  const LabeledDataset* val, const LabeledDataset* test) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  cfg.validate(net);
  for (const auto& ex : data.examples) {
    if (ex.label >= net.num_classes()) {
      throw ConfigError("label " + std::to_string(ex.label) + " out of range for " +
                        std::to_string(net.num_classes()) + " classes");
    }
  }

  AdamState adam{zero_param_grads(net), zero_param_grads(net)};
  TrainReport report;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      ParamGrads grads = zero_param_grads(net);
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = data.examples[order[b]];
        ActivationTrace trace;
        try {
          trace = forward(net, ex.image);
        } catch (const NumericError&) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                             " (activations overflowed)");
        }
        epoch_loss += example_loss(trace.logits(), ex.label, cfg.loss);
        backward_from(net, trace, trace.logit_index,
                      loss_gradient(trace.logits(), ex.label, cfg.loss), ReluRule::Gradient,
                      &grads);
      }
      apply_update(net, grads, 1.0 / double(end - start), cfg, adam);
    }
    epoch_loss /= double(data.size());
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
    }
    report.epoch_losses.push_back(epoch_loss);
  }

  for (const auto& e : data.provenance) net.mutable_provenance().push_back(e);
  net.mutable_provenance().push_back(
      {"train",
       {{"dataset", data.generator},
        {"seed", std::to_string(cfg.seed)},
        {"epochs", std::to_string(cfg.epochs)}},
       {cfg.frozen_layers.begin(), cfg.frozen_layers.end()}});

  report.train_accuracy = accuracy(net, data);
  if (val) report.val_accuracy = accuracy(net, *val);
  if (test) report.test_accuracy = accuracy(net, *test);
  return report;
}

}  // namespace bugscope
