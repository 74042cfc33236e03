#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bugscope/attribution.hpp"

namespace bugscope {

enum class NormMode { Unsigned, Signed };

// A map reduced to one channel and rescaled: [0, 1] (unsigned) or [-1, 1]
// (signed). Constant inputs normalize to all zeros.
struct NormalizedMap {
  Tensor values;  // H x W (or the original shape for rank < 3 maps)
  Method method = Method::Grad;
  NormMode mode = NormMode::Unsigned;
};

// H x W x C -> H x W by summing |v| (absolute) or v over channels. Rank < 3
// tensors are returned unchanged (with |v| when absolute).
Tensor reduce_channels(const Tensor& values, bool absolute);

// Unsigned: channel-summed absolute values mapped affinely onto [0, 1].
// Signed: channel sums scaled by 1 / max|v|.
Tensor normalize_values(const Tensor& values, NormMode mode);
NormalizedMap normalize(const AttributionMap& map, NormMode mode);
NormalizedMap normalize(const NormalizedMap& map, NormMode mode);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

struct SsimResult {
  double value = 0.0;
  bool global_fallback = false;  // image smaller than the window
};

// Mean SSIM over all valid positions of a Gaussian window on two H x W maps.
SsimResult ssim_values(const Tensor& a, const Tensor& b, const SsimParams& params = {});
// Both maps must be unsigned-normalized.
SsimResult ssim(const NormalizedMap& a, const NormalizedMap& b, const SsimParams& params = {});

// Normalized 1-D Gaussian taps used (as an outer product) for the SSIM window.
std::vector<double> gaussian_taps(std::size_t window, double sigma);

// Spearman rank correlation with average ranks for ties. Returns no value
// when either side is constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b,
                               bool use_abs = false);

// ||orig - other||_2 / ||orig||_2.
double norm_diff(const Tensor& orig, const Tensor& other);

// gt1 weighted elementwise by the unsigned-normalized background attribution.
NormalizedMap gt2_mask(const Tensor& gt1, const NormalizedMap& background_attr);

struct ScoreSummary {
  std::string metric;
  std::vector<double> scores;
  double mean = 0.0;
  double sem = 0.0;
  std::size_t n = 0;
};

// Mean and standard error of the mean (sample standard deviation / sqrt n).
ScoreSummary summarize(std::string metric, std::vector<double> scores);

}  // namespace bugscope
