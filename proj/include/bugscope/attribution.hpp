#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bugscope/network.hpp"
#include "bugscope/tensor.hpp"

namespace bugscope {

enum class Method {
  Grad,
  SGrad,
  SGradSQ,
  VGrad,
  InputGrad,
  IntGrad,
  EGrad,
  LIME,
  KernelSHAP,
  GBP,
  DConvNet,
  LrpZ,
  LrpEps,
  LrpAlphaBeta,
  LrpCompositeFlat,
};

std::string method_id(Method m);
Method method_from_id(const std::string& id);
std::vector<Method> all_methods();

using Hyperparameters = std::map<std::string, std::string>;

struct AttributionMap {
  Tensor values;  // input shape
  Method method = Method::Grad;
  Hyperparameters hyperparameters;
  std::size_t target_class = 0;
  bool signed_values = false;
};

// Method plus every hyperparameter any method reads. Defaults follow the
// settings used for the reported benchmark runs.
struct MethodSpec {
  Method method = Method::Grad;
  ScoreTarget target = ScoreTarget::Logit;
  std::uint64_t seed = 0;
  // SmoothGrad family
  std::size_t noise_samples = 50;
  double sigma_fraction = 0.15;
  // IntGrad / EGrad
  std::size_t steps = 50;
  double baseline_value = 0.0;  // IntGrad baseline: every dimension at this minimum
  std::size_t baseline_count = 200;
  // LIME / KernelSHAP
  std::size_t grid_rows = 7;
  std::size_t grid_cols = 7;
  std::size_t num_samples = 1000;
  double kernel_width = 0.25;
  double ridge_lambda = 1.0;
  // LRP
  double epsilon = 1e-6;
  double alpha = 1.0;
  double beta = 0.0;

  void validate() const;
  Hyperparameters hyperparameters() const;
};

// ---- gradient family ------------------------------------------------------

double class_score(const Network& net, const Tensor& x, std::size_t class_index,
                   ScoreTarget target = ScoreTarget::Logit);

// |d F_class / d x|
AttributionMap grad(const Network& net, const Tensor& x, std::size_t class_index,
                    ScoreTarget target = ScoreTarget::Logit);

enum class SmoothVariant { Mean, Square, Variance };

// Gradients at x + n_i, n_i ~ N(0, sigma^2) with sigma = sigma_fraction * (max x - min x).
// Mean keeps the signed average; Square is its elementwise square; Variance
// is the per-element population variance over the samples.
AttributionMap smoothgrad_family(const Network& net, const Tensor& x, std::size_t class_index,
                                 SmoothVariant variant, std::size_t samples,
                                 double sigma_fraction, std::uint64_t seed,
                                 ScoreTarget target = ScoreTarget::Logit);

// |grad| * x. With `absolute` false the signed gradient is used, which is the
// form that coincides with LRP-Z on ReLU networks.
AttributionMap input_times_grad(const Network& net, const Tensor& x, std::size_t class_index,
                                ScoreTarget target = ScoreTarget::Logit, bool absolute = true);

// (x - baseline) * mean of gradients at the midpoints of `steps` equal
// segments of the straight path from baseline to x.
AttributionMap integrated_gradients(const Network& net, const Tensor& x, std::size_t class_index,
                                    const Tensor& baseline, std::size_t steps,
                                    ScoreTarget target = ScoreTarget::Logit);

// Average of integrated_gradients over a baseline set.
AttributionMap expected_gradients(const Network& net, const Tensor& x, std::size_t class_index,
                                  std::span<const Tensor> baselines, std::size_t steps,
                                  ScoreTarget target = ScoreTarget::Logit);

// ---- modified backpropagation -----------------------------------------------

// rule must be ReluRule::Guided (GBP) or ReluRule::Deconvnet.
AttributionMap modified_backprop(const Network& net, const Tensor& x, std::size_t class_index,
                                 ReluRule rule);

struct LrpRule {
  enum class Kind { Z, Epsilon, AlphaBeta, CompositeFlat };
  Kind kind = Kind::Z;
  double epsilon = 1e-6;
  double alpha = 1.0;
  double beta = 0.0;

  static LrpRule z() { return {Kind::Z}; }
  static LrpRule eps(double e) { return {Kind::Epsilon, e}; }
  static LrpRule alpha_beta(double a, double b) { return {Kind::AlphaBeta, 1e-6, a, b}; }
  static LrpRule composite_flat(double e = 1e-6) { return {Kind::CompositeFlat, e}; }
};

// Layer-wise relevance propagation from the target logit. Supports Dense,
// Conv2D, ReLU, MaxPool2D, Flatten and an output head (which is skipped).
AttributionMap lrp(const Network& net, const Tensor& x, std::size_t class_index, LrpRule rule);

// ---- surrogate models -------------------------------------------------------

// Segment id (row-major tile index) for every pixel of an H x W grid split
// into rows x cols rectangular tiles.
std::vector<std::size_t> grid_segments(std::size_t height, std::size_t width, std::size_t rows,
                                       std::size_t cols);

struct SurrogateParams {
  std::size_t grid_rows = 7;
  std::size_t grid_cols = 7;
  std::size_t num_samples = 1000;
  double kernel_width = 0.25;
  double ridge_lambda = 1.0;
  std::uint64_t seed = 0;
  ScoreTarget target = ScoreTarget::Logit;
};

// Per-segment coefficients before broadcasting to pixels.
std::vector<double> lime_segment_weights(const Network& net, const Tensor& x,
                                         std::size_t class_index, const SurrogateParams& p);
std::vector<double> kernel_shap_segment_values(const Network& net, const Tensor& x,
                                               std::size_t class_index,
                                               const SurrogateParams& p);

AttributionMap lime(const Network& net, const Tensor& x, std::size_t class_index,
                    const SurrogateParams& p);
AttributionMap kernel_shap(const Network& net, const Tensor& x, std::size_t class_index,
                           const SurrogateParams& p);

// ---- dispatch ---------------------------------------------------------------

// Runs `spec.method` on x. Stochastic methods seed from (spec.seed, input
// bytes, method id). EGrad draws its baselines from `egrad_baselines`.
AttributionMap attribute(const Network& net, const Tensor& x, std::size_t class_index,
                         const MethodSpec& spec, std::span<const Tensor> egrad_baselines = {});

}  // namespace bugscope
