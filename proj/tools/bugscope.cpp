// Command-line front end: dataset generation, training, bug injection,
// attribution, evaluation, battery runs and heatmap export.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bugscope/architectures.hpp"
#include "bugscope/battery.hpp"
#include "bugscope/bugs.hpp"
#include "bugscope/config.hpp"
#include "bugscope/datagen.hpp"
#include "bugscope/error.hpp"
#include "bugscope/heatmap.hpp"
#include "bugscope/map_io.hpp"
#include "bugscope/metrics.hpp"
#include "bugscope/model_io.hpp"
#include "bugscope/train.hpp"

using namespace bugscope;

namespace {

std::optional<ConfigDocument> read_config(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_config(path);
}

// Applies every entry of [name] (when present) through `apply`.
template <typename F>
void from_section(const std::optional<ConfigDocument>& doc, const std::string& name, F apply) {
  if (!doc) return;
  if (const ConfigSection* s = doc->section(name)) {
    for (const auto& [k, v] : s->entries) apply(k, v);
  }
}

std::string battery_value(const std::optional<ConfigDocument>& doc, const std::string& key) {
  if (!doc) return {};
  const ConfigSection* s = doc->section("battery");
  const std::string* v = s ? s->find(key) : nullptr;
  return v ? *v : std::string();
}

// "key=value" flag arguments into a map.
std::map<std::string, std::string> key_values(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("expected key=value, got '" + item + "'");
    }
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

using Fields = std::vector<std::pair<std::string, std::string>>;

void print_json_line(const Fields& fields) {
  std::string line = "{";
  bool first = true;
  for (const auto& [k, v] : fields) {
    if (!first) line += ", ";
    first = false;
    line += "\"" + k + "\": " + v;
  }
  std::cout << line << "}\n";
}

std::string jstr(const std::string& s) { return "\"" + s + "\""; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribution-based model debugging toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("-c,--config", config_path, "Config file");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate train and test datasets");
  std::string gen_out = ".";
  std::optional<std::uint64_t> gen_seed;
  std::string g_generator, g_background;
  std::optional<std::size_t> g_ntrain, g_ntest, g_classes, g_size, g_channels;
  gen->add_option("-o,--out", gen_out, "Output directory");
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--generator", g_generator, "shapes | glyphs | idx");
  gen->add_option("--n-train", g_ntrain);
  gen->add_option("--n-test", g_ntest);
  gen->add_option("--classes", g_classes);
  gen->add_option("--image-size", g_size);
  gen->add_option("--channels", g_channels);
  gen->add_option("--background", g_background, "neutral | clutter");
  bool gen_idx = false;
  gen->add_flag("--idx", gen_idx, "Also write the sets as IDX files (grayscale generators)");

  // train
  auto* tr = app.add_subcommand("train", "Train a network on a dataset file");
  std::string tr_data, tr_test, tr_out = "model.bsnn", tr_arch;
  std::optional<std::size_t> tr_epochs, tr_batch;
  std::optional<double> tr_lr;
  std::optional<std::uint64_t> tr_seed;
  std::vector<std::string> tr_frozen;
  tr->add_option("--data", tr_data, "Training dataset file")->required();
  tr->add_option("--test", tr_test, "Test dataset file");
  tr->add_option("-o,--out", tr_out, "Model output path");
  tr->add_option("--arch", tr_arch, "Architecture id or layout");
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--seed", tr_seed, "Seed for initialization and batch order");
  tr->add_option("--frozen", tr_frozen, "Frozen layer indices")->delimiter(',');

  // inject
  auto* inj = app.add_subcommand("inject", "Apply one bug to a dataset or model file");
  std::string inj_kind, inj_category, inj_data, inj_model, inj_out;
  std::vector<std::string> inj_params;
  std::uint64_t inj_seed = 0;
  inj->add_option("--kind", inj_kind, "spurious | label_flip | reinit | preprocess_mismatch")
      ->required();
  inj->add_option("--category", inj_category);
  inj->add_option("--data", inj_data, "Dataset file (data and test-time bugs)");
  inj->add_option("--model", inj_model, "Model file (model bugs)");
  inj->add_option("-p,--param", inj_params, "Bug parameter key=value");
  inj->add_option("--seed", inj_seed);
  inj->add_option("-o,--out", inj_out, "Output file")->required();

  // attribute
  auto* at = app.add_subcommand("attribute", "Attribute one dataset example");
  std::string at_model, at_data, at_method = "grad", at_out = "map.bsam", at_heatmap;
  std::size_t at_index = 0;
  std::optional<std::size_t> at_class;
  std::vector<std::string> at_settings;
  std::optional<std::size_t> at_steps, at_samples;
  std::optional<std::uint64_t> at_seed;
  at->add_option("--model", at_model)->required();
  at->add_option("--data", at_data)->required();
  at->add_option("--index", at_index, "Example index");
  at->add_option("--class", at_class, "Target class (default: predicted)");
  at->add_option("--method", at_method, "Method id");
  at->add_option("--steps", at_steps, "IntGrad/EGrad steps");
  at->add_option("--samples", at_samples, "Noise or surrogate samples");
  at->add_option("--seed", at_seed);
  at->add_option("-s,--set", at_settings, "Method setting key=value");
  at->add_option("-o,--out", at_out, "Map output path");
  at->add_option("--heatmap", at_heatmap, "Also export a grayscale PGM");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Compare two attribution maps");
  std::string ev_a, ev_b, ev_metric = "ssim";
  ev->add_option("a", ev_a, "First (reference) map")->required();
  ev->add_option("b", ev_b, "Second map")->required();
  ev->add_option("--metric", ev_metric, "ssim | spearman | spearman_abs | norm_diff");

  // battery
  auto* bat = app.add_subcommand("battery", "Run a full battery from a config file");
  std::optional<std::uint64_t> bat_seed;
  std::optional<std::size_t> bat_samples;
  std::string bat_out;
  bat->add_option("--seed", bat_seed);
  bat->add_option("--samples", bat_samples);
  bat->add_option("-o,--out", bat_out, "Output directory");

  // export
  auto* ex = app.add_subcommand("export", "Write a map as a PGM or PPM heatmap");
  std::string ex_map, ex_out, ex_palette = "grayscale", ex_mode = "unsigned";
  ex->add_option("map", ex_map)->required();
  ex->add_option("-o,--out", ex_out)->required();
  ex->add_option("--palette", ex_palette, "grayscale | white-red");
  ex->add_option("--mode", ex_mode, "unsigned | signed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto doc = read_config(config_path);

    if (*gen) {
      DatasetSpec spec;
      from_section(doc, "dataset",
                   [&](const auto& k, const auto& v) { apply_dataset_setting(spec, k, v); });
      if (!g_generator.empty()) apply_dataset_setting(spec, "generator", g_generator);
      if (!g_background.empty()) apply_dataset_setting(spec, "background", g_background);
      if (g_ntrain) spec.n_train = *g_ntrain;
      if (g_ntest) spec.n_test = *g_ntest;
      if (g_classes) spec.classes = *g_classes;
      if (g_size) spec.image_size = *g_size;
      if (g_channels) spec.channels = *g_channels;
      std::uint64_t seed = 0;
      if (const auto s = battery_value(doc, "seed"); !s.empty()) seed = std::stoull(s);
      if (gen_seed) seed = *gen_seed;
      auto [train_set, test_set] = build_datasets(spec, seed);
      std::filesystem::create_directories(gen_out);
      save_dataset(train_set, std::filesystem::path(gen_out) / "train.bsds");
      save_dataset(test_set, std::filesystem::path(gen_out) / "test.bsds");
      if (gen_idx) {
        for (const auto* ds : {&train_set, &test_set}) {
          if (ds->input_shape()[2] != 1) throw ConfigError("--idx needs a 1-channel dataset");
          IdxImages img;
          img.rows = ds->input_shape()[0];
          img.cols = ds->input_shape()[1];
          std::vector<std::uint8_t> labels;
          for (const auto& e : ds->examples) {
            for (double v : e.image.data()) {
              img.pixels.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
            }
            labels.push_back(static_cast<std::uint8_t>(e.label));
          }
          const std::string stem = ds == &train_set ? "train" : "test";
          write_idx(std::filesystem::path(gen_out) / (stem + "-images.idx"),
                    std::filesystem::path(gen_out) / (stem + "-labels.idx"), img, labels);
        }
      }
      print_json_line(Fields{{"train", std::to_string(train_set.size())},
                       {"test", std::to_string(test_set.size())},
                       {"classes", std::to_string(train_set.num_classes)},
                       {"out", jstr(gen_out)}});
    } else if (*tr) {
      TrainConfig cfg;
      from_section(doc, "train",
                   [&](const auto& k, const auto& v) { apply_train_setting(cfg, k, v); });
      std::string arch = battery_value(doc, "architecture");
      if (arch.empty()) arch = "cnn-small";
      if (!tr_arch.empty()) arch = tr_arch;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (tr_batch) cfg.batch_size = *tr_batch;
      if (tr_lr) cfg.learning_rate = *tr_lr;
      if (tr_seed) cfg.seed = *tr_seed;
      for (const auto& f : tr_frozen) cfg.frozen_layers.insert(std::stoull(f));
      const LabeledDataset data = load_dataset(tr_data);
      Network net = build_architecture(arch, data.input_shape(), data.num_classes, cfg.seed);
      std::optional<LabeledDataset> test;
      if (!tr_test.empty()) test = load_dataset(tr_test);
      const TrainReport r = train(net, data, cfg, nullptr, test ? &*test : nullptr);
      save_network(net, tr_out);
      Fields out{{"train_accuracy", num(r.train_accuracy)},
                 {"final_loss", num(r.epoch_losses.back())}};
      if (r.test_accuracy) out.emplace_back("test_accuracy", num(*r.test_accuracy));
      out.emplace_back("model", jstr(tr_out));
      print_json_line(out);
    } else if (*inj) {
      BugSpec spec;
      spec.kind = bug_kind_from_string(inj_kind);
      spec.category = inj_category.empty() ? category_of(spec.kind)
                                            : bug_category_from_string(inj_category);
      spec.params = key_values(inj_params);
      spec.seed = inj_seed;
      spec.validate();
      Pipeline base;
      if (!inj_data.empty()) {
        LabeledDataset ds = load_dataset(inj_data);
        if (ds.split == Split::Train) base.train_data = ds;
        else base.test_data = ds;
        if (spec.category != BugCategory::Model && !base.train_data) base.train_data = ds;
        if (spec.category == BugCategory::TestTime) base.test_data = ds;
      }
      if (!inj_model.empty()) base.network = load_network(inj_model);
      const ContaminatedPipeline cp = inject(spec, clean_pipeline(base));
      switch (spec.category) {
        case BugCategory::Data:
          save_dataset(*cp.train_data, inj_out);
          break;
        case BugCategory::Model:
          if (spec.kind == BugKind::Frozen) {
            throw ConfigError("frozen bugs act during training; use train --frozen");
          }
          save_network(*cp.network, inj_out);
          break;
        case BugCategory::TestTime:
          if (spec.kind == BugKind::Ood) {
            throw ConfigError("ood bugs swap the test set; generate the other domain with gen-data");
          }
          save_dataset(cp.prepared_test_data(), inj_out);
          break;
      }
      print_json_line(Fields{{"bug", jstr(spec.label())}, {"out", jstr(inj_out)}});
    } else if (*at) {
      MethodSpec spec;
      spec.method = method_from_id(at_method);
      if (doc) {
        for (const auto* s : doc->all("method")) {
          const std::string* m = s->find("method");
          if ((m && *m == at_method) || (!m && s->label == at_method)) {
            for (const auto& [k, v] : s->entries) apply_method_setting(spec, k, v);
          }
        }
      }
      for (const auto& [k, v] : key_values(at_settings)) apply_method_setting(spec, k, v);
      if (at_steps) spec.steps = *at_steps;
      if (at_samples) spec.noise_samples = spec.num_samples = *at_samples;
      if (at_seed) spec.seed = *at_seed;
      spec.validate();
      const Network net = load_network(at_model);
      const LabeledDataset data = load_dataset(at_data);
      if (at_index >= data.size()) {
        throw ConfigError("--index " + std::to_string(at_index) + " out of range for " +
                          std::to_string(data.size()) + " examples");
      }
      const Tensor& x = data.examples[at_index].image;
      const std::size_t cls = at_class ? *at_class : predict(net, x);
      std::vector<Tensor> baselines;
      if (spec.method == Method::EGrad) {
        for (const auto& e : data.examples) baselines.push_back(e.image);
      }
      const AttributionMap map = attribute(net, x, cls, spec, baselines);
      save_map(map, at_out);
      if (!at_heatmap.empty()) {
        export_heatmap(normalize(map, NormMode::Unsigned), at_heatmap, Palette::Grayscale);
      }
      print_json_line(Fields{{"method", jstr(method_id(map.method))},
                       {"class", std::to_string(cls)},
                       {"steps", std::to_string(spec.steps)},
                       {"out", jstr(at_out)}});
    } else if (*ev) {
      const AttributionMap a = load_map(ev_a), b = load_map(ev_b);
      if (a.values.shape() != b.values.shape()) {
        throw ShapeError("map shapes differ: " + shape_to_string(a.values.shape()) + " vs " +
                         shape_to_string(b.values.shape()));
      }
      const MetricId metric = metric_from_string(ev_metric);
      std::string value;
      switch (metric) {
        case MetricId::Ssim: {
          const auto r = ssim(normalize(a, NormMode::Unsigned), normalize(b, NormMode::Unsigned));
          value = num(r.value);
          if (r.global_fallback) std::cerr << "note: map smaller than the SSIM window\n";
          break;
        }
        case MetricId::Spearman:
        case MetricId::SpearmanAbs: {
          const NormMode mode =
              metric == MetricId::Spearman ? NormMode::Signed : NormMode::Unsigned;
          const auto r = spearman(normalize(a, mode).values.data(), normalize(b, mode).values.data());
          value = r ? num(*r) : "null";
          break;
        }
        case MetricId::NormDiff:
          value = num(norm_diff(normalize(a, NormMode::Signed).values,
                                normalize(b, NormMode::Signed).values));
          break;
        default:
          throw ConfigError("metric '" + ev_metric + "' needs ground-truth masks; use battery");
      }
      print_json_line(Fields{{"metric", jstr(ev_metric)}, {"value", value}});
    } else if (*bat) {
      if (!doc) throw ConfigError("battery needs --config");
      BatteryConfig cfg = battery_config_from(*doc);
      if (bat_seed) {
        // Re-derive every seed the config left implicit.
        ConfigDocument d = *doc;
        ConfigSection* s = nullptr;
        for (auto& sec : d.sections)
          if (sec.name == "battery" && sec.label.empty()) s = &sec;
        if (!s) {
          d.sections.push_back({"battery", "", {}, 0});
          s = &d.sections.back();
        }
        std::erase_if(s->entries, [](const auto& e) { return e.first == "seed"; });
        s->entries.emplace_back("seed", std::to_string(*bat_seed));
        cfg = battery_config_from(d);
      }
      if (bat_samples) cfg.samples = *bat_samples;
      if (!bat_out.empty()) cfg.output_dir = bat_out;
      cfg.validate();
      const BatteryReport r = run_battery(cfg);
      std::size_t failed = 0;
      for (const auto& c : r.cells) failed += c.summary ? 0 : 1;
      print_json_line(Fields{{"cells", std::to_string(r.cells.size())},
                       {"failed", std::to_string(failed)},
                       {"out", jstr(resolve_output_dir(cfg).string())}});
    } else if (*ex) {
      const AttributionMap map = load_map(ex_map);
      const NormMode mode = ex_mode == "signed" ? NormMode::Signed
                            : ex_mode == "unsigned"
                                ? NormMode::Unsigned
                                : throw ConfigError("--mode must be unsigned or signed");
      export_heatmap(normalize(map, mode), ex_out, palette_from_string(ex_palette));
      print_json_line(Fields{{"out", jstr(ex_out)}});
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
