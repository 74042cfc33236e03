// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 when
// every criterion ran to a verdict; pass --strict to also fail on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"

#include "bugscope/architectures.hpp"
#include "bugscope/attribution.hpp"
#include "bugscope/battery.hpp"
#include "bugscope/datagen.hpp"
#include "bugscope/heatmap.hpp"
#include "bugscope/metrics.hpp"
#include "bugscope/train.hpp"

using namespace bugscope;
using namespace bugscope::testing;

namespace {

// ---- pinned tolerances ------------------------------------------------------

constexpr double kFdRelTol = 1e-4;
constexpr double kFdRuntimeSec = 60.0;
constexpr double kIntGradCompletenessTol = 1e-2;
constexpr double kLrpZTol = 1e-8;
constexpr double kShapTol = 1e-3;

constexpr double kBackgroundOnlyAccMin = 0.90;
// Mean SSIM against GT-2 over all methods on configs/accept/spurious.conf,
// frozen from the calibration run.
constexpr double kSpuriousGt2Golden = 0.3691;
constexpr double kSpuriousGt2Band = 0.05;
constexpr double kSpuriousRuntimeSec = 600.0;

constexpr double kMislabelSsimMin = 0.65;

constexpr double kInvariantSsimMin = 0.80;
constexpr double kInvariantRhoMin = 0.80;
constexpr double kSensitiveSsimMax = 0.60;
constexpr double kSensitiveRhoMax = 0.75;
constexpr double kReinitRuntimeSec = 300.0;

constexpr double kOodRhoMax = 0.20;
constexpr double kOodSsimMin = 0.40;

constexpr double kReferenceSsimTol = 1e-10;
constexpr double kNoiseSsimMax = 0.01;

// ---- helpers ------------------------------------------------------------------

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bugscope-accept-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

BatteryReport run_config(const std::string& file, const std::string& name) {
  auto cfg = load_battery_config(std::filesystem::path(BUGSCOPE_CONFIG_DIR) / file);
  cfg.output_dir = scratch(name);
  auto report = run_battery(cfg);
  std::filesystem::remove_all(cfg.output_dir);
  return report;
}

double cell_mean(const BatteryReport& r, const std::string& bug, const std::string& method,
                 const std::string& metric) {
  const BatteryCell* c = r.cell(bug, method, metric);
  if (!c) throw std::runtime_error("missing cell " + bug + "/" + method + "/" + metric);
  if (!c->summary) throw std::runtime_error(bug + "/" + method + "/" + metric + ": " + c->error);
  return c->summary->mean;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---- criteria -----------------------------------------------------------------

Verdict gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int pairs = 0;
  for (std::uint64_t s = 0; pairs < 100; ++s) {
    Network net = s % 3 == 0   ? small_mlp(s)
                  : s % 3 == 1 ? small_cnn(s)
                               : Network({5}, 2, {make_dense(5, 6), Sigmoid{}, make_dense(6, 2)}, s);
    const Tensor x = random_tensor(net.input_shape(), 5000 + s);
    if (!kink_free(net, x, 1e-3)) continue;
    const auto target = s % 2 ? ScoreTarget::Logit : ScoreTarget::Probability;
    const std::size_t cls = s % net.num_classes();
    const Tensor a = backward_gradient(net, forward(net, x), cls, target);
    const Tensor n = fd_gradient(net, x, cls, target);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      num += (a[i] - n[i]) * (a[i] - n[i]);
      den += n[i] * n[i];
    }
    worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-12));
    ++pairs;
  }
  const double t = seconds_since(t0);
  return {worst < kFdRelTol && t < kFdRuntimeSec,
          "100 pairs, worst rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", t) + " s"};
}

Verdict axiom_suite() {
  double ig = 0.0, lrpz = 0.0, shap = 0.0;
  bool sg_exact = true, sq_exact = true, eg_exact = true;

  for (std::uint64_t s = 0; s < 20; ++s) {
    const Network net({6}, 3, {make_dense(6, 8), Sigmoid{}, make_dense(8, 5), Sigmoid{}, make_dense(5, 3)}, s);
    const Tensor x = random_tensor({6}, 50 + s, -2.0, 2.0);
    const Tensor base({6});
    const auto map = integrated_gradients(net, x, s % 3, base, 128);
    const double sum = std::accumulate(map.values.data().begin(), map.values.data().end(), 0.0);
    ig = std::max(ig, rel_err(sum, class_score(net, x, s % 3) - class_score(net, base, s % 3)));
  }

  for (std::uint64_t s = 0; s < 10; ++s) {
    const Network net = small_cnn(100 + s);
    const Tensor x = random_tensor(net.input_shape(), 200 + s);
    const std::size_t cls = s % 3;
    const Tensor g = backward_gradient(net, forward(net, x), cls);
    const auto sg0 = smoothgrad_family(net, x, cls, SmoothVariant::Mean, 5, 0.0, s);
    const auto gr = grad(net, x, cls);
    const auto sg = smoothgrad_family(net, x, cls, SmoothVariant::Mean, 8, 0.15, s);
    const auto sq = smoothgrad_family(net, x, cls, SmoothVariant::Square, 8, 0.15, s);
    for (std::size_t i = 0; i < x.size(); ++i) {
      sg_exact &= sg0.values[i] == g[i] && std::fabs(sg0.values[i]) == gr.values[i];
      sq_exact &= sq.values[i] == sg.values[i] * sg.values[i];
    }
    const std::vector<Tensor> one{random_tensor(net.input_shape(), 300 + s)};
    const auto e = expected_gradients(net, x, cls, one, 16);
    const auto i1 = integrated_gradients(net, x, cls, one[0], 16);
    eg_exact &= e.values == i1.values;

    Network bare = s % 2 ? small_cnn(400 + s, 10, 2, 3, false) : small_mlp(400 + s);
    drop_biases(bare);
    const Tensor xb = random_tensor(bare.input_shape(), 500 + s);
    const auto z = lrp(bare, xb, cls, LrpRule::z());
    const auto ixg = input_times_grad(bare, xb, cls, ScoreTarget::Logit, false);
    for (std::size_t i = 0; i < xb.size(); ++i) lrpz = std::max(lrpz, std::fabs(z.values[i] - ixg.values[i]));
  }

  for (std::uint64_t s = 0; s < 3; ++s) {
    const Network net = small_cnn(600 + s, 12, 3, 3, false);
    const Tensor x = random_tensor(net.input_shape(), 700 + s, 0.0, 1.0);
    SurrogateParams p;
    p.grid_rows = 3;
    p.grid_cols = 4;
    p.num_samples = 4096;
    p.seed = s;
    const auto phi = kernel_shap_segment_values(net, x, s, p);
    const auto truth = brute_force_shapley(12, [&](const std::vector<std::uint8_t>& keep) {
      return masked_logit(net, x, s, 3, 4, keep);
    });
    for (std::size_t i = 0; i < 12; ++i) shap = std::max(shap, std::fabs(phi[i] - truth[i]));
  }

  const bool pass = ig < kIntGradCompletenessTol && sg_exact && sq_exact && eg_exact &&
                    lrpz < kLrpZTol && shap < kShapTol;
  std::string d = "intgrad completeness " + fmt("%.1e", ig) + ", sgrad(0)==grad " +
                  (sg_exact ? "exact" : "NOT exact") + ", sgradsq==sgrad^2 " +
                  (sq_exact ? "exact" : "NOT exact") + ", egrad(1)==intgrad " +
                  (eg_exact ? "exact" : "NOT exact") + ", lrp-z vs input*grad " + fmt("%.1e", lrpz) +
                  ", kernelshap vs shapley(12) " + fmt("%.1e", shap);
  return {pass, d};
}

Verdict spurious() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_config("accept/spurious.conf", "spurious");
  const double t = seconds_since(t0);
  const double bg = r.accuracy_of("spurious", "background_only").value_or(0.0);
  double total = 0.0;
  for (const auto& m : r.config.methods) total += cell_mean(r, "spurious", method_id(m.method), "ssim_gt2");
  const double mean = total / double(r.config.methods.size());
  const bool pass = bg > kBackgroundOnlyAccMin &&
                    std::fabs(mean - kSpuriousGt2Golden) <= kSpuriousGt2Band && t < kSpuriousRuntimeSec;
  return {pass, "background-only acc " + fmt("%.3f", bg) + ", mean SSIM-GT2 " + fmt("%.4f", mean) +
                    " (band " + fmt("%.4f", kSpuriousGt2Golden) + " +- " + fmt("%.2f", kSpuriousGt2Band) +
                    "), " + fmt("%.0f", t) + " s"};
}

Verdict mislabeled() {
  const auto r = run_config("accept/mislabel.conf", "mislabel");
  bool pass = true;
  std::string low, worst_id;
  double worst = 1.0;
  for (const auto& m : r.config.methods) {
    const std::string id = method_id(m.method);
    const double v = cell_mean(r, "flip", id, "ssim");
    if (v < worst) {
      worst = v;
      worst_id = id;
    }
    if (v < kMislabelSsimMin) {
      pass = false;
      low += (low.empty() ? "" : " ") + id + "=" + fmt("%.2f", v);
    }
  }
  return {pass, "min SSIM " + worst_id + "=" + fmt("%.2f", worst) +
                    (low.empty() ? "" : "; below " + fmt("%.2f", kMislabelSsimMin) + ": " + low)};
}

Verdict reinit() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_config("accept/reinit.conf", "reinit");
  const double t = seconds_since(t0);
  bool pass = t < kReinitRuntimeSec;
  std::string d;
  for (const char* id : {"gbp", "dconvnet", "lrp-alphabeta", "lrp-compositeflat"}) {
    const double s = cell_mean(r, "top", id, "ssim"), rho = cell_mean(r, "top", id, "spearman_abs");
    pass &= s > kInvariantSsimMin && rho > kInvariantRhoMin;
    d += std::string(id) + " " + fmt("%.2f", s) + "/" + fmt("%.2f", rho) + ", ";
  }
  for (const char* id : {"grad", "intgrad"}) {
    const double s = cell_mean(r, "top", id, "ssim"), rho = cell_mean(r, "top", id, "spearman_abs");
    pass &= s < kSensitiveSsimMax && std::fabs(rho) < kSensitiveRhoMax;
    d += std::string(id) + " " + fmt("%.2f", s) + "/" + fmt("%.2f", rho) + ", ";
  }
  return {pass, "SSIM/rho " + d + fmt("%.0f", t) + " s"};
}

Verdict ood() {
  const auto r = run_config("accept/ood.conf", "ood");
  bool rho_ok = true;
  std::string d = "|rho|";
  for (const char* id : {"grad", "sgrad", "inputgrad", "intgrad", "egrad"}) {
    const double rho = std::fabs(cell_mean(r, "ood", id, "spearman"));
    rho_ok &= rho < kOodRhoMax;
    d += std::string(" ") + id + "=" + fmt("%.2f", rho);
  }
  double best = -1.0;
  std::string best_id;
  for (const auto& m : r.config.methods) {
    const double s = cell_mean(r, "ood", method_id(m.method), "ssim");
    if (s > best) {
      best = s;
      best_id = method_id(m.method);
    }
  }
  return {rho_ok && best > kOodSsimMin, d + "; max SSIM " + best_id + "=" + fmt("%.2f", best)};
}

Verdict metric_correctness() {
  bool self_exact = true;
  double ref = 0.0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const Tensor a = random_tensor({16, 16}, 10 + s, 0.0, 1.0);
    const Tensor b = random_tensor({16, 16}, 20 + s, 0.0, 1.0);
    self_exact &= ssim_values(a, a).value == 1.0;
    ref = std::max(ref, std::fabs(ssim_values(a, b).value - reference_ssim(a, b)));
  }
  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4}, z{4, 3, 2, 1};
  const bool spearman_ok = *spearman(x, y) == 0.8 && *spearman(x, x) == 1.0 && *spearman(x, z) == -1.0;

  // Gaussian maps against real attributions of a spurious-background model.
  SpuriousSpec ss;
  ss.class_to_texture = {0, 1, 2, 3};
  ss.fraction_spurious = 1.0;
  ss.seed = 46;
  const auto train_set = compose_spurious(gen_shapes(41, 400, 4, 32), ss);
  ss.seed = 47;
  const auto test_set = compose_spurious(gen_shapes(42, 190, 4, 32), ss);
  Network net = build_architecture("cnn-small", train_set.input_shape(), 4, 43);
  TrainConfig tc;
  tc.epochs = 8;
  tc.seed = 44;
  train(net, train_set, tc);
  Rng rng(45);
  double total = 0.0;
  for (const auto& ex : test_set.examples) {
    const auto real = normalize(grad(net, ex.image, predict(net, ex.image)), NormMode::Unsigned);
    Tensor noise(ex.image.shape());
    for (double& v : noise.data()) v = rng.normal();
    const NormalizedMap fake{normalize_values(noise, NormMode::Unsigned), Method::Grad, NormMode::Unsigned};
    total += ssim(real, fake).value;
  }
  const double noise_mean = total / double(test_set.size());
  const bool pass = self_exact && ref < kReferenceSsimTol && spearman_ok && std::fabs(noise_mean) < kNoiseSsimMax;
  return {pass, std::string("ssim(a,a)==1 ") + (self_exact ? "exact" : "NOT exact") + ", vs reference " +
                    fmt("%.1e", ref) + ", spearman fixtures " + (spearman_ok ? "exact" : "WRONG") +
                    ", noise vs grad SSIM " + fmt("%+.4f", noise_mean) + " over 190 maps"};
}

Verdict determinism_and_formats() {
  auto cfg = load_battery_config(std::filesystem::path(BUGSCOPE_CONFIG_DIR) / "smoke.conf");
  cfg.output_dir = scratch("det-a");
  run_battery(cfg);
  const std::string a = slurp(cfg.output_dir / "report.json");
  std::filesystem::remove_all(cfg.output_dir);
  cfg.output_dir = scratch("det-b");
  run_battery(cfg);
  const std::string b = slurp(cfg.output_dir / "report.json");
  std::filesystem::remove_all(cfg.output_dir);
  const bool same = !a.empty() && a == b;

  // IDX: two 2x3 images written out byte by byte.
  const std::vector<std::uint8_t> img{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                                      0, 51, 102, 153, 204, 255, 255, 0, 1, 2, 3, 4};
  const std::vector<std::uint8_t> lab{0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
  const auto ds = idx_to_dataset(decode_idx_images(img), decode_idx_labels(lab));
  const bool idx_ok = encode_idx_images(decode_idx_images(img)) == img &&
                      encode_idx_labels(decode_idx_labels(lab)) == lab && ds.size() == 2 &&
                      ds.examples[0].label == 7 && ds.examples[1].label == 3 &&
                      ds.examples[0].image[1] == 51.0 / 255.0 && ds.examples[1].image[0] == 1.0;

  const NormalizedMap map{Tensor({2, 2}, {0.0, 1.0, 0.5, 0.2}), Method::Grad, NormMode::Unsigned};
  const std::string ph = "P5\n2 2\n255\n", qh = "P6\n2 2\n255\n";
  std::vector<std::uint8_t> pgm(ph.begin(), ph.end()), ppm(qh.begin(), qh.end());
  for (std::uint8_t v : {0, 255, 128, 51}) pgm.push_back(v);
  for (std::uint8_t v : {255, 255, 255, 255, 0, 0, 255, 128, 128, 255, 204, 204}) ppm.push_back(v);
  const bool img_ok = encode_heatmap(map, Palette::Grayscale) == pgm &&
                      encode_heatmap(map, Palette::WhiteRed) == ppm;

  return {same && idx_ok && img_ok, std::string("report.json ") +
                                        (same ? "byte-identical (" + std::to_string(a.size()) + " bytes)"
                                              : "DIFFERS") +
                                        ", IDX fixture " + (idx_ok ? "ok" : "WRONG") + ", PGM/PPM fixture " +
                                        (img_ok ? "ok" : "WRONG")};
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::strcmp(argv[1], "--strict") == 0;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient oracle", gradient_oracle},
      {"axiom suite", axiom_suite},
      {"spurious correlation", spurious},
      {"mislabeled examples", mislabeled},
      {"modified-backprop invariance", reinit},
      {"ood dissociation", ood},
      {"metric correctness", metric_correctness},
      {"determinism and formats", determinism_and_formats},
  };
  int failed = 0, errors = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
      ++errors;
    }
    failed += !v.pass;
    std::printf("%s %zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d passed, %d failed\n", criteria.size(), int(criteria.size()) - failed, failed);
  if (errors) return 2;
  return strict && failed ? 1 : 0;
}
