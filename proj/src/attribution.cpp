#include "bugscope/attribution.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <utility>

#include "bugscope/error.hpp"
#include "bugscope/rng.hpp"

namespace bugscope {

namespace {

constexpr std::array<std::pair<Method, const char*>, 15> kMethodIds{{
    {Method::Grad, "grad"},
    {Method::SGrad, "sgrad"},
    {Method::SGradSQ, "sgradsq"},
    {Method::VGrad, "vgrad"},
    {Method::InputGrad, "inputgrad"},
    {Method::IntGrad, "intgrad"},
    {Method::EGrad, "egrad"},
    {Method::LIME, "lime"},
    {Method::KernelSHAP, "kernelshap"},
    {Method::GBP, "gbp"},
    {Method::DConvNet, "dconvnet"},
    {Method::LrpZ, "lrp-z"},
    {Method::LrpEps, "lrp-eps"},
    {Method::LrpAlphaBeta, "lrp-alphabeta"},
    {Method::LrpCompositeFlat, "lrp-compositeflat"},
}};

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

AttributionMap make_map(Tensor values, Method m, std::size_t cls, bool is_signed,
                        Hyperparameters hp = {}) {
  if (!values.all_finite()) {
    throw NumericError(method_id(m) + ": attribution contains non-finite values");
  }
  return AttributionMap{std::move(values), m, std::move(hp), cls, is_signed};
}

Tensor gradient_at(const Network& net, const Tensor& x, std::size_t cls, ScoreTarget target) {
  return backward_gradient(net, forward(net, x), cls, target);
}

bool has_negative(const Tensor& t) {
  for (double v : t.data())
    if (v < 0.0) return true;
  return false;
}

}  // namespace

std::string method_id(Method m) {
  for (const auto& [method, id] : kMethodIds)
    if (method == m) return id;
  return "unknown";
}

Method method_from_id(const std::string& id) {
  for (const auto& [method, name] : kMethodIds)
    if (id == name) return method;
  throw ConfigError("unknown attribution method '" + id + "'");
}

std::vector<Method> all_methods() {
  std::vector<Method> out;
  for (const auto& [method, id] : kMethodIds) out.push_back(method);
  return out;
}

void MethodSpec::validate() const {
  auto fail = [&](const std::string& why) { throw ConfigError(method_id(method) + ": " + why); };
  switch (method) {
    case Method::SGrad:
    case Method::SGradSQ:
    case Method::VGrad:
      if (noise_samples == 0) fail("noise sample count N must be >= 1");
      if (!(sigma_fraction >= 0.0)) fail("sigma_fraction must be >= 0");
      break;
    case Method::IntGrad:
    case Method::EGrad:
      if (steps == 0) fail("steps must be >= 1");
      if (method == Method::EGrad && baseline_count == 0) fail("baseline_count must be >= 1");
      break;
    case Method::LIME:
    case Method::KernelSHAP:
      if (grid_rows == 0 || grid_cols == 0) fail("segment grid must be non-empty");
      if (num_samples < grid_rows * grid_cols) fail("num_samples must be >= segment count");
      if (method == Method::LIME && !(kernel_width > 0.0)) fail("kernel_width must be > 0");
      if (method == Method::LIME && !(ridge_lambda >= 0.0)) fail("ridge_lambda must be >= 0");
      break;
    case Method::LrpEps:
    case Method::LrpCompositeFlat:
      if (!(epsilon >= 0.0)) fail("epsilon must be >= 0");
      break;
    case Method::LrpAlphaBeta:
      if (std::fabs(alpha - beta - 1.0) > 1e-12) fail("alpha - beta must equal 1");
      if (beta < 0.0) fail("beta must be >= 0");
      break;
    default: break;
  }
  if (target == ScoreTarget::Probability &&
      (method == Method::LrpZ || method == Method::LrpEps || method == Method::LrpAlphaBeta ||
       method == Method::LrpCompositeFlat)) {
    fail("relevance propagation starts from logits only");
  }
}

Hyperparameters MethodSpec::hyperparameters() const {
  Hyperparameters hp;
  hp["target"] = target == ScoreTarget::Logit ? "logit" : "probability";
  switch (method) {
    case Method::SGrad:
    case Method::SGradSQ:
    case Method::VGrad:
      hp["N"] = std::to_string(noise_samples);
      hp["sigma_fraction"] = num(sigma_fraction);
      hp["seed"] = std::to_string(seed);
      break;
    case Method::IntGrad:
      hp["steps"] = std::to_string(steps);
      hp["baseline_value"] = num(baseline_value);
      break;
    case Method::EGrad:
      hp["steps"] = std::to_string(steps);
      hp["baseline_count"] = std::to_string(baseline_count);
      break;
    case Method::LIME:
      hp["kernel_width"] = num(kernel_width);
      hp["ridge_lambda"] = num(ridge_lambda);
      [[fallthrough]];
    case Method::KernelSHAP:
      hp["grid"] = std::to_string(grid_rows) + "x" + std::to_string(grid_cols);
      hp["num_samples"] = std::to_string(num_samples);
      hp["seed"] = std::to_string(seed);
      break;
    case Method::LrpEps:
    case Method::LrpCompositeFlat: hp["epsilon"] = num(epsilon); break;
    case Method::LrpAlphaBeta:
      hp["alpha"] = num(alpha);
      hp["beta"] = num(beta);
      break;
    default: break;
  }
  return hp;
}

double class_score(const Network& net, const Tensor& x, std::size_t class_index,
                   ScoreTarget target) {
  const ActivationTrace trace = forward(net, x);
  const Tensor& s = scores(trace, target);
  if (class_index >= s.size()) {
    throw ShapeError("class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(s.size()) + " scores");
  }
  return s[class_index];
}

AttributionMap grad(const Network& net, const Tensor& x, std::size_t class_index,
                    ScoreTarget target) {
  return make_map(abs(gradient_at(net, x, class_index, target)), Method::Grad, class_index,
                  false);
}

AttributionMap smoothgrad_family(const Network& net, const Tensor& x, std::size_t class_index,
                                 SmoothVariant variant, std::size_t samples,
                                 double sigma_fraction, std::uint64_t seed, ScoreTarget target) {
  if (samples == 0) throw ConfigError("smoothgrad: N must be >= 1");
  if (!(sigma_fraction >= 0.0)) throw ConfigError("smoothgrad: sigma_fraction must be >= 0");
  const double sigma = sigma_fraction * (x.max() - x.min());
  Rng rng(seed);
  // Welford accumulation: identical samples leave the mean bit-exact and the
  // variance exactly zero.
  Tensor mean(x.shape());
  Tensor m2(x.shape());
  for (std::size_t k = 1; k <= samples; ++k) {
    Tensor noisy = x;
    for (double& v : noisy.data()) v += sigma * rng.normal();
    const Tensor g = gradient_at(net, noisy, class_index, target);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double delta = g[i] - mean[i];
      mean[i] += delta / double(k);
      m2[i] += delta * (g[i] - mean[i]);
    }
  }
  switch (variant) {
    case SmoothVariant::Mean:
      return make_map(std::move(mean), Method::SGrad, class_index, true);
    case SmoothVariant::Square:
      return make_map(hadamard(mean, mean), Method::SGradSQ, class_index, false);
    case SmoothVariant::Variance:
      m2 *= 1.0 / double(samples);
      return make_map(std::move(m2), Method::VGrad, class_index, false);
  }
  throw ConfigError("smoothgrad: unknown variant");
}

AttributionMap input_times_grad(const Network& net, const Tensor& x, std::size_t class_index,
                                ScoreTarget target, bool absolute) {
  Tensor g = gradient_at(net, x, class_index, target);
  if (absolute) g = abs(g);
  return make_map(hadamard(g, x), Method::InputGrad, class_index,
                  absolute ? has_negative(x) : true,
                  {{"absolute_gradient", absolute ? "true" : "false"}});
}

AttributionMap integrated_gradients(const Network& net, const Tensor& x, std::size_t class_index,
                                    const Tensor& baseline, std::size_t steps,
                                    ScoreTarget target) {
  if (steps == 0) throw ConfigError("integrated_gradients: steps must be >= 1");
  if (baseline.shape() != x.shape()) {
    throw ShapeError("integrated_gradients: baseline shape " + shape_to_string(baseline.shape()) +
                     " does not match input " + shape_to_string(x.shape()));
  }
  const Tensor delta = x - baseline;
  Tensor total(x.shape());
  for (std::size_t j = 0; j < steps; ++j) {
    const double alpha = (double(j) + 0.5) / double(steps);
    Tensor point = baseline;
    for (std::size_t i = 0; i < point.size(); ++i) point[i] += alpha * delta[i];
    total += gradient_at(net, point, class_index, target);
  }
  total *= 1.0 / double(steps);
  return make_map(hadamard(delta, total), Method::IntGrad, class_index, true,
                  {{"steps", std::to_string(steps)}});
}

AttributionMap expected_gradients(const Network& net, const Tensor& x, std::size_t class_index,
                                  std::span<const Tensor> baselines, std::size_t steps,
                                  ScoreTarget target) {
  if (baselines.empty()) throw ConfigError("expected_gradients: baseline set is empty");
  Tensor total(x.shape());
  for (const Tensor& b : baselines) {
    total += integrated_gradients(net, x, class_index, b, steps, target).values;
  }
  total *= 1.0 / double(baselines.size());
  return make_map(std::move(total), Method::EGrad, class_index, true,
                  {{"steps", std::to_string(steps)},
                   {"baseline_count", std::to_string(baselines.size())}});
}

AttributionMap modified_backprop(const Network& net, const Tensor& x, std::size_t class_index,
                                 ReluRule rule) {
  if (rule == ReluRule::Gradient) {
    throw ConfigError("modified_backprop: rule must be guided or deconvnet");
  }
  for (std::size_t i = 0; i < net.depth(); ++i) {
    if (std::holds_alternative<Sigmoid>(net.layer(i)) && i + 1 != net.depth()) {
      throw ConfigError("modified_backprop: no rule for hidden sigmoid layer " +
                        std::to_string(i));
    }
  }
  const Tensor g =
      backward_gradient(net, forward(net, x), class_index, ScoreTarget::Logit, rule);
  return make_map(g, rule == ReluRule::Guided ? Method::GBP : Method::DConvNet, class_index,
                  true);
}

AttributionMap attribute(const Network& net, const Tensor& x, std::size_t class_index,
                         const MethodSpec& spec, std::span<const Tensor> egrad_baselines) {
  spec.validate();
  const std::uint64_t seed =
      derive_seed(spec.seed, hash_bytes(x.data()) ^ hash_string(method_id(spec.method)));
  AttributionMap map;
  switch (spec.method) {
    case Method::Grad: map = grad(net, x, class_index, spec.target); break;
    case Method::SGrad:
    case Method::SGradSQ:
    case Method::VGrad: {
      const SmoothVariant v = spec.method == Method::SGrad     ? SmoothVariant::Mean
                              : spec.method == Method::SGradSQ ? SmoothVariant::Square
                                                               : SmoothVariant::Variance;
      // All three variants share one noise stream so SGradSQ == SGrad^2 per input.
      const std::uint64_t shared =
          derive_seed(spec.seed, hash_bytes(x.data()) ^ hash_string("smoothgrad"));
      map = smoothgrad_family(net, x, class_index, v, spec.noise_samples, spec.sigma_fraction,
                              shared, spec.target);
      break;
    }
    case Method::InputGrad: map = input_times_grad(net, x, class_index, spec.target); break;
    case Method::IntGrad:
      map = integrated_gradients(net, x, class_index, Tensor(x.shape(), spec.baseline_value),
                                 spec.steps, spec.target);
      break;
    case Method::EGrad: {
      if (egrad_baselines.empty()) throw ConfigError("egrad: no baseline examples supplied");
      const std::size_t n = std::min(spec.baseline_count, egrad_baselines.size());
      map = expected_gradients(net, x, class_index, egrad_baselines.first(n), spec.steps,
                               spec.target);
      break;
    }
    case Method::LIME:
    case Method::KernelSHAP: {
      SurrogateParams p{spec.grid_rows, spec.grid_cols, spec.num_samples, spec.kernel_width,
                        spec.ridge_lambda, seed, spec.target};
      map = spec.method == Method::LIME ? lime(net, x, class_index, p)
                                        : kernel_shap(net, x, class_index, p);
      break;
    }
    case Method::GBP: map = modified_backprop(net, x, class_index, ReluRule::Guided); break;
    case Method::DConvNet: map = modified_backprop(net, x, class_index, ReluRule::Deconvnet); break;
    case Method::LrpZ: map = lrp(net, x, class_index, LrpRule::z()); break;
    case Method::LrpEps: map = lrp(net, x, class_index, LrpRule::eps(spec.epsilon)); break;
    case Method::LrpAlphaBeta:
      map = lrp(net, x, class_index, LrpRule::alpha_beta(spec.alpha, spec.beta));
      break;
    case Method::LrpCompositeFlat:
      map = lrp(net, x, class_index, LrpRule::composite_flat(spec.epsilon));
      break;
  }
  map.hyperparameters = spec.hyperparameters();
  return map;
}

}  // namespace bugscope
