#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "bugscope/attribution.hpp"
#include "bugscope/error.hpp"
#include "bugscope/rng.hpp"

namespace bugscope {

namespace {

using Coalition = std::vector<std::uint8_t>;

struct SegmentedInput {
  const Network& net;
  const Tensor& x;
  std::size_t class_index;
  ScoreTarget target;
  std::vector<std::size_t> segment_of;  // per pixel
  std::size_t segments;
  std::vector<double> fill;  // per-channel mean color

  double value(const Coalition& keep) const {
    Tensor img = x;
    const std::size_t C = x.dim(2);
    for (std::size_t p = 0; p < segment_of.size(); ++p) {
      if (keep[segment_of[p]]) continue;
      for (std::size_t c = 0; c < C; ++c) img[p * C + c] = fill[c];
    }
    return class_score(net, img, class_index, target);
  }
};

SegmentedInput segment_input(const Network& net, const Tensor& x, std::size_t class_index,
                             const SurrogateParams& p) {
  if (x.rank() != 3) {
    throw ShapeError("segment surrogates need an H x W x C input, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (p.grid_rows == 0 || p.grid_cols == 0 || p.grid_rows > H || p.grid_cols > W) {
    throw ConfigError("segment grid " + std::to_string(p.grid_rows) + "x" +
                      std::to_string(p.grid_cols) + " does not fit a " + std::to_string(H) +
                      "x" + std::to_string(W) + " image");
  }
  const std::size_t segments = p.grid_rows * p.grid_cols;
  if (p.num_samples < segments) {
    throw ConfigError("num_samples " + std::to_string(p.num_samples) + " is below segment count " +
                      std::to_string(segments));
  }
  std::vector<double> fill(C, 0.0);
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < C; ++c) fill[c] += x[i * C + c];
  for (double& f : fill) f /= double(H * W);
  return SegmentedInput{net,      x, class_index, p.target, grid_segments(H, W, p.grid_rows, p.grid_cols),
                        segments, std::move(fill)};
}

AttributionMap broadcast(const std::vector<double>& weights, const SegmentedInput& in, Method m,
                         const SurrogateParams& p) {
  Tensor values(in.x.shape());
  const std::size_t C = in.x.dim(2);
  for (std::size_t px = 0; px < in.segment_of.size(); ++px)
    for (std::size_t c = 0; c < C; ++c) values[px * C + c] = weights[in.segment_of[px]];
  if (!values.all_finite()) throw NumericError(method_id(m) + ": non-finite segment weights");
  AttributionMap map;
  map.values = std::move(values);
  map.method = m;
  map.target_class = in.class_index;
  map.signed_values = true;
  map.hyperparameters = {{"grid", std::to_string(p.grid_rows) + "x" + std::to_string(p.grid_cols)},
                         {"num_samples", std::to_string(p.num_samples)},
                         {"seed", std::to_string(p.seed)}};
  return map;
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
  return r;
}

void for_each_subset(std::size_t n, std::size_t k, const std::function<void(const Coalition&)>& f) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  while (true) {
    Coalition c(n, 0);
    for (std::size_t i : idx) c[i] = 1;
    f(c);
    std::size_t pos = k;
    while (pos > 0 && idx[pos - 1] == n - k + pos - 1) --pos;
    if (pos == 0) return;
    ++idx[pos - 1];
    for (std::size_t j = pos; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace

std::vector<std::size_t> grid_segments(std::size_t height, std::size_t width, std::size_t rows,
                                       std::size_t cols) {
  std::vector<std::size_t> seg(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t r = y * rows / height;
    for (std::size_t x = 0; x < width; ++x) seg[y * width + x] = r * cols + x * cols / width;
  }
  return seg;
}

std::vector<double> lime_segment_weights(const Network& net, const Tensor& x,
                                         std::size_t class_index, const SurrogateParams& p) {
  if (!(p.kernel_width > 0.0)) throw ConfigError("lime: kernel_width must be > 0");
  if (!(p.ridge_lambda >= 0.0)) throw ConfigError("lime: ridge_lambda must be >= 0");
  const SegmentedInput in = segment_input(net, x, class_index, p);
  const std::size_t s = in.segments, n = p.num_samples;

  Eigen::MatrixXd Z(n, s);
  Eigen::VectorXd y(n), w(n);
  Rng rng(p.seed);
  for (std::size_t row = 0; row < n; ++row) {
    Coalition keep(s, 1);
    if (row > 0)
      for (auto& k : keep) k = rng.bernoulli(0.5);
    const double active = double(std::count(keep.begin(), keep.end(), 1));
    // cosine distance to the all-ones (unperturbed) vector
    const double d = active > 0 ? 1.0 - active / (std::sqrt(active) * std::sqrt(double(s))) : 1.0;
    w(row) = std::exp(-(d * d) / (p.kernel_width * p.kernel_width));
    for (std::size_t j = 0; j < s; ++j) Z(row, j) = keep[j];
    y(row) = in.value(keep);
  }
  bool all_identical = true;
  for (std::size_t row = 1; row < n && all_identical; ++row)
    all_identical = Z.row(row) == Z.row(0);
  if (all_identical) throw NumericError("lime: all perturbation samples are identical");

  // Weighted ridge with an unpenalized intercept: center by weighted means.
  const double wsum = w.sum();
  const Eigen::RowVectorXd zmean = (w.transpose() * Z) / wsum;
  const double ymean = w.dot(y) / wsum;
  const Eigen::MatrixXd Zc = Z.rowwise() - zmean;
  const Eigen::VectorXd yc = y.array() - ymean;
  Eigen::MatrixXd A = Zc.transpose() * w.asDiagonal() * Zc;
  A.diagonal().array() += p.ridge_lambda;
  const Eigen::VectorXd b = Zc.transpose() * (w.asDiagonal() * yc);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < static_cast<Eigen::Index>(s)) {
    throw NumericError("lime: singular regression; increase ridge_lambda or num_samples");
  }
  const Eigen::VectorXd beta = qr.solve(b);
  return {beta.data(), beta.data() + beta.size()};
}

std::vector<double> kernel_shap_segment_values(const Network& net, const Tensor& x,
                                               std::size_t class_index,
                                               const SurrogateParams& p) {
  const SegmentedInput in = segment_input(net, x, class_index, p);
  const std::size_t s = in.segments;
  const double base = in.value(Coalition(s, 0));
  const double full = in.value(Coalition(s, 1));
  if (s == 1) return {full - base};

  // Coalition -> accumulated kernel weight. Complete subset-size layers are
  // enumerated while the budget allows, smallest (heaviest) sizes first; the
  // rest of the budget samples the remaining sizes.
  std::map<Coalition, double> rows;
  std::size_t budget = p.num_samples > 2 ? p.num_samples - 2 : 0;
  const std::size_t max_size = s / 2;  // sizes k and s-k are paired
  std::vector<double> size_mass(max_size + 1, 0.0);
  double mass_total = 0.0;
  for (std::size_t k = 1; k <= max_size; ++k) {
    size_mass[k] = double(s - 1) / double(k * (s - k)) * (k == s - k ? 1.0 : 2.0);
    mass_total += size_mass[k];
  }
  for (double& m : size_mass) m /= mass_total;

  std::size_t k = 1;
  double remaining_mass = 1.0;
  for (; k <= max_size; ++k) {
    const bool paired = k != s - k;
    const double count = binomial(s, k) * (paired ? 2.0 : 1.0);
    if (count > double(budget)) break;
    const double per = size_mass[k] / count;
    for_each_subset(s, k, [&](const Coalition& c) {
      rows[c] += per;
      if (paired) {
        Coalition comp(s);
        for (std::size_t j = 0; j < s; ++j) comp[j] = 1 - c[j];
        rows[comp] += per;
      }
    });
    budget -= static_cast<std::size_t>(count);
    remaining_mass -= size_mass[k];
  }
  if (k <= max_size && budget >= 2) {
    std::map<Coalition, double> sampled;
    Rng rng(p.seed);
    std::size_t drawn = 0;
    const std::size_t first_open = k;
    while (drawn + 2 <= budget) {
      double u = rng.uniform() * remaining_mass;
      std::size_t size = first_open;
      for (; size < max_size; ++size) {
        if (u < size_mass[size]) break;
        u -= size_mass[size];
      }
      Coalition c(s, 0);
      std::vector<std::size_t> perm(s);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = 0; i < size; ++i) {
        std::swap(perm[i], perm[i + rng.below(s - i)]);
        c[perm[i]] = 1;
      }
      Coalition comp(s);
      for (std::size_t j = 0; j < s; ++j) comp[j] = 1 - c[j];
      sampled[c] += 1.0;
      sampled[comp] += 1.0;
      drawn += 2;
    }
    for (const auto& [c, hits] : sampled) rows[c] += remaining_mass * hits / double(drawn);
  }
  if (rows.size() + 1 < s) {
    throw NumericError("kernel_shap: " + std::to_string(rows.size()) +
                       " coalitions cannot determine " + std::to_string(s) + " values");
  }

  // Constrained weighted least squares: sum(phi) = full - base. The last
  // segment is eliminated with the constraint.
  const double gap = full - base;
  const std::size_t n = rows.size(), m = s - 1;
  Eigen::MatrixXd X(n, m);
  Eigen::VectorXd y(n), w(n);
  std::size_t row = 0;
  for (const auto& [c, weight] : rows) {
    const double last = c[s - 1];
    for (std::size_t j = 0; j < m; ++j) X(row, j) = double(c[j]) - last;
    y(row) = in.value(c) - base - last * gap;
    w(row) = weight;
    ++row;
  }
  const Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
  const Eigen::VectorXd b = X.transpose() * (w.asDiagonal() * y);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < static_cast<Eigen::Index>(m)) {
    throw NumericError("kernel_shap: singular regression; increase num_samples");
  }
  const Eigen::VectorXd phi = qr.solve(b);
  std::vector<double> out(phi.data(), phi.data() + phi.size());
  out.push_back(gap - phi.sum());
  return out;
}

AttributionMap lime(const Network& net, const Tensor& x, std::size_t class_index,
                    const SurrogateParams& p) {
  const SegmentedInput in = segment_input(net, x, class_index, p);
  AttributionMap map =
      broadcast(lime_segment_weights(net, x, class_index, p), in, Method::LIME, p);
  return map;
}

AttributionMap kernel_shap(const Network& net, const Tensor& x, std::size_t class_index,
                           const SurrogateParams& p) {
  const SegmentedInput in = segment_input(net, x, class_index, p);
  return broadcast(kernel_shap_segment_values(net, x, class_index, p), in, Method::KernelSHAP, p);
}

}  // namespace bugscope
