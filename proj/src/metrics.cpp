#include "bugscope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bugscope/error.hpp"

namespace bugscope {

namespace {

std::vector<double> average_ranks(std::span<const double> v, bool use_abs) {
  const std::size_t n = v.size();
  std::vector<double> key(v.begin(), v.end());
  if (use_abs)
    for (double& k : key) k = std::fabs(k);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return key[i] < key[j]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && key[order[j + 1]] == key[order[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

Tensor as_image(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 1) return t.reshaped({1, t.size()});
  throw ShapeError("expected a single-channel map, got " + shape_to_string(t.shape()));
}

// Valid-mode separable filter: rows then columns.
Tensor filter_valid(const Tensor& img, const std::vector<double>& taps) {
  const std::size_t H = img.dim(0), W = img.dim(1), k = taps.size();
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  Tensor rows({H, Wo});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * img[y * W + x + t];
      rows[y * Wo + x] = acc;
    }
  Tensor out({Ho, Wo});
  for (std::size_t y = 0; y < Ho; ++y)
    for (std::size_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * rows[(y + t) * Wo + x];
      out[y * Wo + x] = acc;
    }
  return out;
}

double ssim_term(double mx, double my, double exx, double eyy, double exy, double c1,
                 double c2) {
  const double sx = exx - mx * mx;
  const double sy = eyy - my * my;
  const double sxy = exy - mx * my;
  return ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) /
         ((mx * mx + my * my + c1) * (sx + sy + c2));
}

}  // namespace

Tensor reduce_channels(const Tensor& values, bool absolute) {
  if (values.rank() < 3) return absolute ? abs(values) : values;
  if (values.rank() != 3) {
    throw ShapeError("cannot reduce channels of " + shape_to_string(values.shape()));
  }
  const std::size_t H = values.dim(0), W = values.dim(1), C = values.dim(2);
  Tensor out({H, W});
  for (std::size_t p = 0; p < H * W; ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double v = values[p * C + c];
      acc += absolute ? std::fabs(v) : v;
    }
    out[p] = acc;
  }
  return out;
}

Tensor normalize_values(const Tensor& values, NormMode mode) {
  if (!values.all_finite()) throw NumericError("normalize: map contains non-finite values");
  Tensor r = reduce_channels(values, mode == NormMode::Unsigned);
  if (r.empty()) return r;
  if (mode == NormMode::Unsigned) {
    const double lo = r.min(), hi = r.max();
    if (!(hi > lo)) return Tensor(r.shape());
    for (double& v : r.data()) v = (v - lo) / (hi - lo);
  } else {
    double m = 0.0;
    for (double v : r.data()) m = std::max(m, std::fabs(v));
    if (m == 0.0) return Tensor(r.shape());
    bool constant = true;
    for (double v : r.data()) constant = constant && v == r[0];
    if (constant) return Tensor(r.shape());
    for (double& v : r.data()) v /= m;
  }
  return r;
}

NormalizedMap normalize(const AttributionMap& map, NormMode mode) {
  return {normalize_values(map.values, mode), map.method, mode};
}

NormalizedMap normalize(const NormalizedMap& map, NormMode mode) {
  return {normalize_values(map.values, mode), map.method, mode};
}

std::vector<double> gaussian_taps(std::size_t window, double sigma) {
  std::vector<double> taps(window);
  const double center = 0.5 * double(window - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    const double d = double(i) - center;
    taps[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

SsimResult ssim_values(const Tensor& a_in, const Tensor& b_in, const SsimParams& params) {
  const Tensor a = as_image(a_in), b = as_image(b_in);
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shape mismatch " + shape_to_string(a_in.shape()) + " vs " +
                     shape_to_string(b_in.shape()));
  }
  const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
  const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
  const std::size_t H = a.dim(0), W = a.dim(1);

  if (H < params.window || W < params.window) {
    const double n = double(a.size());
    double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      mx += a[i];
      my += b[i];
      exx += a[i] * a[i];
      eyy += b[i] * b[i];
      exy += a[i] * b[i];
    }
    return {ssim_term(mx / n, my / n, exx / n, eyy / n, exy / n, c1, c2), true};
  }

  const auto taps = gaussian_taps(params.window, params.sigma);
  const Tensor aa = hadamard(a, a), bb = hadamard(b, b), ab = hadamard(a, b);
  const Tensor mx = filter_valid(a, taps), my = filter_valid(b, taps);
  const Tensor exx = filter_valid(aa, taps), eyy = filter_valid(bb, taps);
  const Tensor exy = filter_valid(ab, taps);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    total += ssim_term(mx[i], my[i], exx[i], eyy[i], exy[i], c1, c2);
  }
  return {total / double(mx.size()), false};
}

SsimResult ssim(const NormalizedMap& a, const NormalizedMap& b, const SsimParams& params) {
  if (a.mode != NormMode::Unsigned || b.mode != NormMode::Unsigned) {
    throw ConfigError("ssim compares unsigned-normalized maps only");
  }
  return ssim_values(a.values, b.values, params);
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b,
                               bool use_abs) {
  if (a.size() != b.size()) {
    throw ShapeError("spearman: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                     " elements");
  }
  if (a.size() < 2) throw ShapeError("spearman: need at least 2 elements");
  const auto ra = average_ranks(a, use_abs), rb = average_ranks(b, use_abs);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double norm_diff(const Tensor& orig, const Tensor& other) {
  require_same_shape(orig, other, "norm_diff");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < orig.size(); ++i) {
    num += (orig[i] - other[i]) * (orig[i] - other[i]);
    den += orig[i] * orig[i];
  }
  if (den == 0.0) throw NumericError("norm_diff: original map is all zeros");
  return std::sqrt(num) / std::sqrt(den);
}

NormalizedMap gt2_mask(const Tensor& gt1, const NormalizedMap& background_attr) {
  if (background_attr.mode != NormMode::Unsigned) {
    throw ConfigError("gt2_mask: background attribution must be unsigned-normalized");
  }
  if (gt1.shape() != background_attr.values.shape()) {
    throw ShapeError("gt2_mask: mask " + shape_to_string(gt1.shape()) + " vs attribution " +
                     shape_to_string(background_attr.values.shape()));
  }
  return {hadamard(gt1, background_attr.values), background_attr.method, NormMode::Unsigned};
}

ScoreSummary summarize(std::string metric, std::vector<double> scores) {
  if (scores.size() < 2) {
    throw ConfigError("summarize: need n >= 2 scores, got " + std::to_string(scores.size()));
  }
  ScoreSummary s;
  s.metric = std::move(metric);
  s.n = scores.size();
  const double n = double(s.n);
  s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : scores) ss += (v - s.mean) * (v - s.mean);
  s.sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  s.scores = std::move(scores);
  return s;
}

}  // namespace bugscope
