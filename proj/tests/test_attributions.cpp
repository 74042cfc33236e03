#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <cmath>
#include <numeric>

#include "bugscope/attribution.hpp"
#include "bugscope/error.hpp"

using namespace bugscope;
using namespace bugscope::testing;

namespace {

Network sigmoid_net(std::uint64_t seed) {
  return Network({6}, 3, {make_dense(6, 8), Sigmoid{}, make_dense(8, 5), Sigmoid{}, make_dense(5, 3)},
                 seed);
}

double total(const Tensor& t) { return std::accumulate(t.data().begin(), t.data().end(), 0.0); }

}  // namespace

TEST_CASE("integrated gradients completeness on smooth nets") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Network net = sigmoid_net(s);
    const Tensor x = random_tensor({6}, 50 + s, -2.0, 2.0);
    const Tensor base({6});
    const std::size_t cls = s % 3;
    const auto map = integrated_gradients(net, x, cls, base, 128);
    const double gap = class_score(net, x, cls) - class_score(net, base, cls);
    CHECK(rel_err(total(map.values), gap) < 1e-2);
    CHECK(map.signed_values);
  }
}

TEST_CASE("midpoint rule on a linear model is exact at one step") {
  const Network net({4}, 2, {make_dense(4, 2)}, 9);
  const Tensor x = random_tensor({4}, 3);
  const auto map = integrated_gradients(net, x, 1, Tensor({4}), 1);
  const auto& d = std::get<Dense>(net.layer(0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(map.values[i] == doctest::Approx(d.weights[4 + i] * x[i]).epsilon(1e-12));
}

TEST_CASE("smoothgrad with zero noise is the gradient") {
  const Network net = small_cnn(4);
  const Tensor x = random_tensor(net.input_shape(), 8);
  const Tensor g = backward_gradient(net, forward(net, x), 1);
  const auto mean = smoothgrad_family(net, x, 1, SmoothVariant::Mean, 7, 0.0, 3);
  const auto sq = smoothgrad_family(net, x, 1, SmoothVariant::Square, 7, 0.0, 3);
  const auto var = smoothgrad_family(net, x, 1, SmoothVariant::Variance, 7, 0.0, 3);
  const auto plain = grad(net, x, 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(mean.values[i] == g[i]);
    CHECK(std::fabs(mean.values[i]) == plain.values[i]);
    CHECK(sq.values[i] == g[i] * g[i]);
    CHECK(var.values[i] == 0.0);
  }
}

TEST_CASE("smoothgrad square is the square of the mean") {
  const Network net = small_cnn(5);
  const Tensor x = random_tensor(net.input_shape(), 9);
  const auto mean = smoothgrad_family(net, x, 2, SmoothVariant::Mean, 12, 0.2, 77);
  const auto sq = smoothgrad_family(net, x, 2, SmoothVariant::Square, 12, 0.2, 77);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(sq.values[i] == mean.values[i] * mean.values[i]);
}

TEST_CASE("smoothgrad draws are fixed by the seed") {
  const Network net = small_mlp(6);
  const Tensor x = random_tensor({6}, 10);
  const std::size_t n = 9;
  const double sigma_fraction = 0.3;
  const auto mean = smoothgrad_family(net, x, 0, SmoothVariant::Mean, n, sigma_fraction, 5);
  const auto var = smoothgrad_family(net, x, 0, SmoothVariant::Variance, n, sigma_fraction, 5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(var.values[i] >= 0.0);
  // Same seed, same draws: the mean of the noisy gradients is shared.
  const auto again = smoothgrad_family(net, x, 0, SmoothVariant::Mean, n, sigma_fraction, 5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(again.values[i] == mean.values[i]);
  const auto other = smoothgrad_family(net, x, 0, SmoothVariant::Mean, n, sigma_fraction, 6);
  bool differs = false;
  for (std::size_t i = 0; i < x.size(); ++i) differs |= other.values[i] != mean.values[i];
  CHECK(differs);
}

TEST_CASE("expected gradients with one baseline is integrated gradients") {
  const Network net = small_cnn(7);
  const Tensor x = random_tensor(net.input_shape(), 11);
  const std::vector<Tensor> baselines{random_tensor(net.input_shape(), 12)};
  const auto ig = integrated_gradients(net, x, 0, baselines[0], 20);
  const auto eg = expected_gradients(net, x, 0, baselines, 20);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(eg.values[i] == ig.values[i]);
  CHECK_THROWS_AS(expected_gradients(net, x, 0, {}, 20), ConfigError);
}

TEST_CASE("input times gradient") {
  const Network net = small_mlp(8);
  const Tensor x = random_tensor({6}, 13);
  const Tensor g = backward_gradient(net, forward(net, x), 2);
  const auto a = input_times_grad(net, x, 2);
  const auto s = input_times_grad(net, x, 2, ScoreTarget::Logit, false);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.values[i] == std::fabs(g[i]) * x[i]);
    CHECK(s.values[i] == g[i] * x[i]);
  }
}

TEST_CASE("lrp-z equals signed input times gradient on bias-free relu nets") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Network net = s % 2 ? small_cnn(20 + s, 10, 2, 3, false) : small_mlp(20 + s);
    drop_biases(net);
    const Tensor x = random_tensor(net.input_shape(), 40 + s);
    const std::size_t cls = s % 3;
    const auto z = lrp(net, x, cls, LrpRule::z());
    const auto ig = input_times_grad(net, x, cls, ScoreTarget::Logit, false);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::fabs(z.values[i] - ig.values[i]) < 1e-8);
    // conservation: relevance sums to the logit
    CHECK(total(z.values) == doctest::Approx(class_score(net, x, cls)).epsilon(1e-8));
  }
}

TEST_CASE("lrp-z ignores a softmax head") {
  Network net = small_cnn(31);
  drop_biases(net);
  const Tensor x = random_tensor(net.input_shape(), 32);
  const auto z = lrp(net, x, 1, LrpRule::z());
  const auto ig = input_times_grad(net, x, 1, ScoreTarget::Logit, false);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::fabs(z.values[i] - ig.values[i]) < 1e-8);
}

TEST_CASE("lrp alpha1-beta0 relevance keeps the sign of the logit") {
  for (std::uint64_t s = 0; s < 8; ++s) {
    const Network net = small_cnn(60 + s);
    const Tensor x = random_tensor(net.input_shape(), 70 + s, 0.0, 1.0);
    const std::size_t cls = s % 3;
    const double logit = class_score(net, x, cls);
    const auto ab = lrp(net, x, cls, LrpRule::alpha_beta(1.0, 0.0));
    for (double v : ab.values.data()) CHECK(v * logit >= 0.0);
  }
  CHECK_THROWS_AS(lrp(small_mlp(1), Tensor({6}), 0, LrpRule::alpha_beta(1.0, 0.5)), ConfigError);
}

TEST_CASE("lrp composite-flat spreads the first layer uniformly") {
  const Network net = small_mlp(90);
  const Tensor x = random_tensor({6}, 91);
  const auto flat = lrp(net, x, 0, LrpRule::composite_flat());
  for (std::size_t i = 1; i < 6; ++i) CHECK(flat.values[i] == doctest::Approx(flat.values[0]).epsilon(1e-12));
}

TEST_CASE("lrp epsilon approaches lrp-z as epsilon shrinks") {
  Network net = small_cnn(33, 10, 2, 3, false);
  const Tensor x = random_tensor(net.input_shape(), 34);
  const auto z = lrp(net, x, 2, LrpRule::z());
  const auto e = lrp(net, x, 2, LrpRule::eps(1e-12));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::fabs(z.values[i] - e.values[i]) < 1e-8);
}

TEST_CASE("guided backprop and deconvnet on a one-hidden-layer net") {
  // x -> W1 -> relu -> W2: guided masks by forward activity and by the sign
  // of the backward signal, deconvnet only by the sign.
  Network net({2}, 1, {make_dense(2, 2), ReLU{}, make_dense(2, 1)}, 0);
  auto& d1 = std::get<Dense>(net.mutable_layers()[0]);
  auto& d2 = std::get<Dense>(net.mutable_layers()[2]);
  d1.weights = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
  d2.weights = Tensor({1, 2}, {-1.0, 2.0});
  d1.bias = Tensor({2});
  d2.bias = Tensor({1});
  const Tensor x({2}, {-0.5, 0.5});
  const auto gbp = modified_backprop(net, x, 0, ReluRule::Guided);
  const auto dc = modified_backprop(net, x, 0, ReluRule::Deconvnet);
  CHECK(gbp.values[0] == 0.0);
  CHECK(gbp.values[1] == 2.0);
  CHECK(dc.values[0] == 0.0);
  CHECK(dc.values[1] == 2.0);
  const Tensor x2({2}, {0.5, 0.5});
  CHECK(modified_backprop(net, x2, 0, ReluRule::Guided).values[0] == 0.0);
  CHECK(grad(net, x2, 0).values[0] == 1.0);
}

TEST_CASE("kernel shap matches brute-force shapley values") {
  const Network net = small_cnn(100, 12, 3, 3, false);
  const Tensor x = random_tensor(net.input_shape(), 101, 0.0, 1.0);
  SurrogateParams p;
  p.grid_rows = 3;
  p.grid_cols = 4;
  p.num_samples = 4096;
  const auto phi = kernel_shap_segment_values(net, x, 1, p);
  const auto truth = brute_force_shapley(12, [&](const std::vector<std::uint8_t>& keep) {
    return masked_logit(net, x, 1, 3, 4, keep);
  });
  REQUIRE(phi.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::fabs(phi[i] - truth[i]) < 1e-3);
}

TEST_CASE("kernel shap efficiency holds when sampling") {
  const Network net = small_cnn(102, 12, 3, 3, false);
  const Tensor x = random_tensor(net.input_shape(), 103, 0.0, 1.0);
  SurrogateParams p;
  p.grid_rows = 3;
  p.grid_cols = 4;
  p.num_samples = 300;
  p.seed = 4;
  const auto phi = kernel_shap_segment_values(net, x, 0, p);
  const std::vector<std::uint8_t> all(12, 1), none(12, 0);
  const double gap = masked_logit(net, x, 0, 3, 4, all) - masked_logit(net, x, 0, 3, 4, none);
  CHECK(std::accumulate(phi.begin(), phi.end(), 0.0) == doctest::Approx(gap).epsilon(1e-9));
}

TEST_CASE("lime recovers segment effects of a linear model") {
  const Network net({6, 6, 1}, 2, {Flatten{}, make_dense(36, 2)}, 5);
  const Tensor x = random_tensor(net.input_shape(), 6, 0.0, 1.0);
  SurrogateParams p;
  p.grid_rows = 2;
  p.grid_cols = 3;
  p.num_samples = 400;
  p.ridge_lambda = 1e-9;
  p.seed = 2;
  const auto w = lime_segment_weights(net, x, 1, p);
  // Dropping segment j changes the logit by -delta_j, independently of the rest.
  for (std::size_t j = 0; j < 6; ++j) {
    std::vector<std::uint8_t> keep(6, 1);
    const double full = masked_logit(net, x, 1, 2, 3, keep);
    keep[j] = 0;
    CHECK(w[j] == doctest::Approx(full - masked_logit(net, x, 1, 2, 3, keep)).epsilon(1e-6));
  }
}

TEST_CASE("surrogates reject grids that do not fit") {
  const Network net = small_cnn(1);
  const Tensor x = random_tensor(net.input_shape(), 2);
  SurrogateParams p;
  p.grid_rows = 11;
  CHECK_THROWS_AS(lime(net, x, 0, p), ConfigError);
  p.grid_rows = 2;
  p.grid_cols = 2;
  p.num_samples = 3;
  CHECK_THROWS_AS(kernel_shap(net, x, 0, p), ConfigError);
}

TEST_CASE("dispatch agrees with direct calls") {
  const Network net = small_cnn(200);
  const Tensor x = random_tensor(net.input_shape(), 201, 0.0, 1.0);
  const std::vector<Tensor> bases{random_tensor(net.input_shape(), 202, 0.0, 1.0)};
  MethodSpec spec;
  spec.steps = 16;
  spec.baseline_count = 1;

  auto same = [](const AttributionMap& a, const AttributionMap& b) {
    REQUIRE(a.values.shape() == b.values.shape());
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
  };
  spec.method = Method::Grad;
  same(attribute(net, x, 1, spec), grad(net, x, 1));
  spec.method = Method::InputGrad;
  same(attribute(net, x, 1, spec), input_times_grad(net, x, 1));
  spec.method = Method::IntGrad;
  same(attribute(net, x, 1, spec), integrated_gradients(net, x, 1, Tensor(x.shape()), 16));
  spec.method = Method::EGrad;
  same(attribute(net, x, 1, spec, bases), expected_gradients(net, x, 1, bases, 16));
  spec.method = Method::GBP;
  same(attribute(net, x, 1, spec), modified_backprop(net, x, 1, ReluRule::Guided));
  spec.method = Method::DConvNet;
  same(attribute(net, x, 1, spec), modified_backprop(net, x, 1, ReluRule::Deconvnet));
  spec.method = Method::LrpZ;
  same(attribute(net, x, 1, spec), lrp(net, x, 1, LrpRule::z()));
  spec.method = Method::LrpAlphaBeta;
  same(attribute(net, x, 1, spec), lrp(net, x, 1, LrpRule::alpha_beta(1.0, 0.0)));
  spec.method = Method::LrpCompositeFlat;
  same(attribute(net, x, 1, spec), lrp(net, x, 1, LrpRule::composite_flat()));
}

TEST_CASE("every method runs, is finite and is seed-deterministic") {
  const Network net = small_cnn(300);
  const Tensor x = random_tensor(net.input_shape(), 301, 0.0, 1.0);
  const std::vector<Tensor> bases{random_tensor(net.input_shape(), 302, 0.0, 1.0),
                                  random_tensor(net.input_shape(), 303, 0.0, 1.0)};
  for (Method m : all_methods()) {
    CAPTURE(method_id(m));
    MethodSpec spec;
    spec.method = m;
    spec.seed = 17;
    spec.noise_samples = 4;
    spec.steps = 8;
    spec.baseline_count = 2;
    spec.grid_rows = spec.grid_cols = 3;
    spec.num_samples = 64;
    const auto a = attribute(net, x, 0, spec, bases);
    const auto b = attribute(net, x, 0, spec, bases);
    CHECK(a.values.shape() == x.shape());
    CHECK(a.values.all_finite());
    CHECK(a.method == m);
    CHECK(a.values == b.values);
    CHECK(method_from_id(method_id(m)) == m);
  }
  CHECK_THROWS_AS(method_from_id("saliency"), ConfigError);
}

TEST_CASE("method spec validation") {
  MethodSpec spec;
  spec.method = Method::IntGrad;
  spec.steps = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.steps = 4;
  spec.method = Method::SGrad;
  spec.sigma_fraction = -1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
