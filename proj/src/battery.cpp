#include "bugscope/battery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bugscope/architectures.hpp"
#include "bugscope/binio.hpp"
#include "bugscope/error.hpp"
#include "bugscope/heatmap.hpp"
#include "bugscope/rng.hpp"

namespace bugscope {

namespace {

using Json = nlohmann::ordered_json;

// One side of a comparison: a model, its inputs and the classes it explains.
struct Side {
  const Network* net = nullptr;
  std::vector<Tensor> inputs;
  std::vector<std::size_t> classes;
  std::span<const Tensor> baselines;
};

struct Row {
  std::string name;
  Side subject;
  std::optional<Side> reference;  // none: compare against seeded Gaussian maps
  // Source examples for GT masks, aligned with subject.inputs; null when absent.
  std::vector<const ImageExample*> examples;
  // Maps an object-free background image into the subject's input space.
  std::function<Tensor(const Tensor&)> to_subject = [](const Tensor& t) { return t; };
};

std::vector<std::size_t> predictions(const Network& net, const std::vector<Tensor>& xs) {
  std::vector<std::size_t> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(predict(net, x));
  return out;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

Tensor gaussian_map(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t content_hash(std::span<const std::uint8_t> bytes) {
  return hash_string(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// Scores collected for one metric; the first failure reason is kept.
struct Accumulator {
  std::vector<double> scores;
  std::string first_error;
  void add(const std::function<std::optional<double>()>& f) {
    try {
      const auto v = f();
      if (v && std::isfinite(*v)) {
        scores.push_back(*v);
      } else if (first_error.empty()) {
        first_error = v ? "non-finite score" : "undefined for a constant map";
      }
    } catch (const std::exception& e) {
      if (first_error.empty()) first_error = e.what();
    }
  }
};

class Runner {
 public:
  Runner(const BatteryConfig& cfg, std::filesystem::path out) : cfg_(cfg), out_(std::move(out)) {}

  BatteryReport run();

 private:
  std::uint64_t seed(const char* what) const { return derive_seed(*cfg_.seed, hash_string(what)); }
  Network train_model(const Network& init, const LabeledDataset& train_data,
                      const TrainConfig& tc, const std::string& name);
  void evaluate_row(const Row& row);
  void fail_row(const std::string& name, const std::string& reason);
  void record(const std::string& model, const std::string& dataset, double v) {
    report_.accuracy.push_back({model, dataset, v});
  }
  void write_artifact(const std::string& rel, const std::vector<std::uint8_t>& bytes);
  Row bug_row(const BugSpec& spec);
  void cascade();

  const BatteryConfig& cfg_;
  std::filesystem::path out_;
  BatteryReport report_;
  LabeledDataset train_, test_;
  std::optional<Network> init_, clean_;
  std::vector<Tensor> train_images_;
  std::vector<Tensor> eval_inputs_;
  std::vector<std::size_t> eval_classes_;
  // Models created for bug rows; kept alive while their row is scored.
  std::vector<std::unique_ptr<Network>> models_;
  std::vector<std::unique_ptr<std::vector<Tensor>>> baseline_sets_;
  std::vector<std::unique_ptr<LabeledDataset>> datasets_;
};

Network Runner::train_model(const Network& init, const LabeledDataset& train_data,
                            const TrainConfig& tc, const std::string& name) {
  Network net = init;
  const TrainReport r = train(net, train_data, tc);
  record(name, "train", r.train_accuracy);
  return net;
}

void Runner::write_artifact(const std::string& rel, const std::vector<std::uint8_t>& bytes) {
  const auto path = out_ / rel;
  std::filesystem::create_directories(path.parent_path());
  write_file_bytes(path, bytes);
  report_.artifacts.push_back({rel, bytes.size(), hex64(content_hash(bytes))});
}

void Runner::fail_row(const std::string& name, const std::string& reason) {
  for (const auto& m : cfg_.methods)
    for (MetricId metric : cfg_.metrics)
      report_.cells.push_back({name, method_id(m.method), to_string(metric), std::nullopt, reason});
}

void Runner::evaluate_row(const Row& row) {
  const std::size_t n = row.subject.inputs.size();
  for (std::size_t mi = 0; mi < cfg_.methods.size(); ++mi) {
    const MethodSpec& spec = cfg_.methods[mi];
    const std::string mid = method_id(spec.method);
    std::vector<AttributionMap> subject, reference;
    try {
      for (std::size_t i = 0; i < n; ++i) {
        subject.push_back(attribute(*row.subject.net, row.subject.inputs[i],
                                    row.subject.classes[i], spec, row.subject.baselines));
        if (row.reference) {
          reference.push_back(attribute(*row.reference->net, row.reference->inputs[i],
                                        row.reference->classes[i], spec,
                                        row.reference->baselines));
        } else {
          AttributionMap g;
          g.values = gaussian_map(row.subject.inputs[i].shape(),
                                  derive_seed(seed("gaussian"), derive_seed(mi, i)));
          g.method = spec.method;
          g.signed_values = true;
          reference.push_back(std::move(g));
        }
      }
    } catch (const std::exception& e) {
      for (MetricId metric : cfg_.metrics)
        report_.cells.push_back({row.name, mid, to_string(metric), std::nullopt,
                                 std::string("attribution failed: ") + e.what()});
      continue;
    }

    for (std::size_t i = 0; i < std::min(cfg_.heatmaps, n); ++i) {
      try {
        write_artifact("heatmaps/" + row.name + "/" + mid + "-" + std::to_string(i) + ".pgm",
                       encode_heatmap(normalize(subject[i], NormMode::Unsigned),
                                      Palette::Grayscale));
      } catch (const NumericError&) {
        // Non-finite maps are reported through the metric cells.
      }
    }

    for (MetricId metric : cfg_.metrics) {
      Accumulator acc;
      for (std::size_t i = 0; i < n; ++i) {
        const AttributionMap& s = subject[i];
        const AttributionMap& r = reference[i];
        const ImageExample* ex = i < row.examples.size() ? row.examples[i] : nullptr;
        acc.add([&]() -> std::optional<double> {
          switch (metric) {
            case MetricId::Ssim:
              return ssim(normalize(s, NormMode::Unsigned), normalize(r, NormMode::Unsigned)).value;
            case MetricId::Spearman:
              return spearman(normalize(s, NormMode::Signed).values.data(),
                              normalize(r, NormMode::Signed).values.data());
            case MetricId::SpearmanAbs:
              return spearman(normalize(s, NormMode::Unsigned).values.data(),
                              normalize(r, NormMode::Unsigned).values.data());
            case MetricId::NormDiff:
              return norm_diff(normalize(r, NormMode::Signed).values,
                               normalize(s, NormMode::Signed).values);
            case MetricId::SsimGt1:
            case MetricId::SsimGt2: {
              if (!ex) throw ConfigError("no ground-truth mask for this input");
              const Tensor gt1 = gt1_mask(*ex);
              const NormalizedMap ns = normalize(s, NormMode::Unsigned);
              if (metric == MetricId::SsimGt1) return ssim_values(ns.values, gt1).value;
              const Tensor bg = row.to_subject(strip_object(*ex));
              const auto bg_map = attribute(*row.subject.net, bg, row.subject.classes[i], spec,
                                            row.subject.baselines);
              return ssim(ns, gt2_mask(gt1, normalize(bg_map, NormMode::Unsigned))).value;
            }
          }
          return std::nullopt;
        });
      }
      BatteryCell cell{row.name, mid, to_string(metric), std::nullopt, {}};
      if (acc.scores.size() >= 2) {
        cell.summary = summarize(to_string(metric), std::move(acc.scores));
      } else {
        cell.error = acc.first_error.empty() ? "fewer than 2 scored inputs" : acc.first_error;
      }
      report_.cells.push_back(std::move(cell));
    }
  }
}

Row Runner::bug_row(const BugSpec& spec) {
  Pipeline base;
  base.train_data = train_;
  base.test_data = test_;
  base.train_config = cfg_.train;
  const bool retrain = spec.category == BugCategory::Data || spec.kind == BugKind::Frozen;
  base.network = retrain ? *init_ : *clean_;

  const std::string name = spec.label();
  Row row;
  row.name = name;
  auto keep_model = [&](Network net) -> const Network* {
    models_.push_back(std::make_unique<Network>(std::move(net)));
    return models_.back().get();
  };
  auto keep_data = [&](LabeledDataset ds) -> const LabeledDataset* {
    datasets_.push_back(std::make_unique<LabeledDataset>(std::move(ds)));
    return datasets_.back().get();
  };
  const std::size_t n_eval = eval_inputs_.size();

  if (spec.kind == BugKind::Ood) {
    const auto [ood_train, ood_test] = build_datasets(*cfg_.ood_dataset, seed("ood-data"));
    if (ood_test.input_shape()[0] != test_.input_shape()[0] ||
        ood_test.input_shape()[1] != test_.input_shape()[1]) {
      throw ShapeError("ood inputs " + shape_to_string(ood_test.input_shape()) +
                       " do not match the model input " + shape_to_string(test_.input_shape()));
    }
    const Network ood_init = build_architecture(cfg_.architecture, ood_train.input_shape(),
                                                ood_train.num_classes, seed("ood-net"));
    const Network* in_domain = keep_model(train_model(ood_init, ood_train, cfg_.train,
                                                      name + "/in_domain"));
    record(name + "/in_domain", "ood_test", accuracy(*in_domain, ood_test));
    baseline_sets_.push_back(std::make_unique<std::vector<Tensor>>());
    for (const auto& ex : ood_train.examples) baseline_sets_.back()->push_back(ex.image);

    Side ref{in_domain, {}, {}, *baseline_sets_.back()};
    Side sub{&*clean_, {}, {}, train_images_};
    const std::size_t n = std::min(cfg_.samples, ood_test.size());
    for (std::size_t i = 0; i < n; ++i) {
      ref.inputs.push_back(ood_test.examples[i].image);
      sub.inputs.push_back(adapt_channels(ood_test.examples[i].image, clean_->input_shape()));
    }
    ref.classes = predictions(*in_domain, ref.inputs);
    sub.classes = predictions(*clean_, sub.inputs);
    row.subject = std::move(sub);
    row.reference = std::move(ref);
    return row;
  }

  const ContaminatedPipeline cp = inject(spec, clean_pipeline(base));
  const Network* model = nullptr;
  if (retrain) {
    model = keep_model(train_model(*cp.network, *cp.train_data, cp.train_config, name));
  } else {
    model = keep_model(*cp.network);
  }
  const LabeledDataset* prepared = keep_data(cp.prepared_test_data());
  record(name, "test", accuracy(*model, *prepared));

  row.reference = Side{&*clean_, eval_inputs_, eval_classes_, train_images_};
  baseline_sets_.push_back(std::make_unique<std::vector<Tensor>>());
  for (const auto& ex : cp.train_data->examples) baseline_sets_.back()->push_back(ex.image);
  row.subject.net = model;
  row.subject.baselines = *baseline_sets_.back();

  switch (spec.kind) {
    case BugKind::Spurious: {
      SpuriousSpec ss;
      ss.class_to_texture = parse_list(cp.train_data->provenance.back().params.at("mapping"));
      ss.seed = derive_seed(spec.seed, hash_string("test"));
      const LabeledDataset* sp = keep_data(compose_spurious(test_, ss));
      record(name, "spurious_test", accuracy(*model, *sp));
      LabeledDataset bg_only = *sp;
      for (auto& ex : bg_only.examples) ex.image = strip_object(ex);
      record(name, "background_only", accuracy(*model, bg_only));
      for (std::size_t i = 0; i < n_eval; ++i) {
        row.subject.inputs.push_back(sp->examples[i].image);
        row.examples.push_back(&sp->examples[i]);
      }
      row.subject.classes = predictions(*model, row.subject.inputs);
      row.reference->inputs = row.subject.inputs;
      row.reference->classes = predictions(*clean_, row.subject.inputs);
      break;
    }
    case BugKind::LabelFlip: {
      const auto& flipped = cp.train_data->provenance.back().indices;
      const LabeledDataset* data = keep_data(*cp.train_data);
      for (std::size_t k = 0; k < std::min(cfg_.samples, flipped.size()); ++k) {
        row.subject.inputs.push_back(data->examples[flipped[k]].image);
        row.examples.push_back(&data->examples[flipped[k]]);
      }
      row.subject.classes = predictions(*model, row.subject.inputs);
      row.reference->inputs = row.subject.inputs;
      row.reference->classes = predictions(*clean_, row.subject.inputs);
      break;
    }
    case BugKind::Reinit:
    case BugKind::Frozen:
      // Model bugs explain the class the trained model predicts.
      row.subject.inputs = eval_inputs_;
      row.subject.classes = eval_classes_;
      for (std::size_t i = 0; i < n_eval; ++i) row.examples.push_back(&test_.examples[i]);
      break;
    case BugKind::PreprocessMismatch: {
      for (std::size_t i = 0; i < n_eval; ++i) {
        row.subject.inputs.push_back(prepared->examples[i].image);
        row.examples.push_back(&test_.examples[i]);
      }
      row.subject.classes = predictions(*model, row.subject.inputs);
      const PreprocessTransform t = cp.test_transform;
      row.to_subject = [t](const Tensor& x) { return apply_preprocess(t, x); };
      break;
    }
    case BugKind::Ood:
      break;
  }
  return row;
}

void Runner::cascade() {
  for (const auto& spec : cfg_.methods) {
    StageCurve curve;
    curve.method = method_id(spec.method);
    try {
      const auto stages = cascading_randomization(*clean_, eval_inputs_, eval_classes_,
                                                  std::span(&spec, 1), seed("cascade"),
                                                  train_images_);
      for (const auto& st : stages) {
        curve.reinitialized.push_back(st.reinitialized);
        double s_sum = 0.0, r_sum = 0.0;
        std::size_t r_n = 0;
        for (std::size_t i = 0; i < eval_inputs_.size(); ++i) {
          const auto a = normalize(stages[0].maps[i][0], NormMode::Unsigned);
          const auto b = normalize(st.maps[i][0], NormMode::Unsigned);
          s_sum += ssim(a, b).value;
          if (const auto r = spearman(a.values.data(), b.values.data())) {
            r_sum += *r;
            ++r_n;
          }
        }
        curve.ssim.push_back(s_sum / double(eval_inputs_.size()));
        curve.spearman.push_back(r_n ? r_sum / double(r_n) : 0.0);
      }
    } catch (const std::exception& e) {
      curve.error = e.what();
    }
    report_.stages.push_back(std::move(curve));
  }
}

BatteryReport Runner::run() {
  cfg_.validate();
  report_.config = cfg_;
  std::tie(train_, test_) = build_datasets(cfg_.dataset, seed("data"));
  init_ = build_architecture(cfg_.architecture, train_.input_shape(), train_.num_classes,
                             seed("net"));
  clean_ = train_model(*init_, train_, cfg_.train, "clean");
  record("clean", "test", accuracy(*clean_, test_));
  for (const auto& ex : train_.examples) train_images_.push_back(ex.image);

  const std::size_t n_eval = std::min(cfg_.samples, test_.size());
  for (std::size_t i = 0; i < n_eval; ++i) eval_inputs_.push_back(test_.examples[i].image);
  eval_classes_ = predictions(*clean_, eval_inputs_);

  Row clean_row;
  clean_row.name = "clean";
  clean_row.subject = Side{&*clean_, eval_inputs_, eval_classes_, train_images_};
  for (std::size_t i = 0; i < n_eval; ++i) clean_row.examples.push_back(&test_.examples[i]);
  evaluate_row(clean_row);

  for (const auto& spec : cfg_.bugs) {
    std::optional<Row> row;
    try {
      row = bug_row(spec);
    } catch (const std::exception& e) {
      fail_row(spec.label(), std::string("bug setup failed: ") + e.what());
      continue;
    }
    evaluate_row(*row);
    models_.clear();
    baseline_sets_.clear();
    datasets_.clear();
  }
  if (cfg_.cascade) cascade();

  std::vector<std::uint8_t> csv;
  const std::string text = report_to_csv(report_);
  csv.assign(text.begin(), text.end());
  write_artifact("scores.csv", csv);
  std::sort(report_.artifacts.begin(), report_.artifacts.end(),
            [](const ArtifactEntry& a, const ArtifactEntry& b) { return a.path < b.path; });
  const std::string json = report_to_json(report_);
  write_file_bytes(out_ / "report.json",
                   std::vector<std::uint8_t>(json.begin(), json.end()));
  return report_;
}

Json dataset_json(const DatasetSpec& d) {
  Json j;
  j["generator"] = d.generator;
  if (d.generator == "idx") {
    j["train_images"] = d.train_images.generic_string();
    j["train_labels"] = d.train_labels.generic_string();
    j["test_images"] = d.test_images.generic_string();
    j["test_labels"] = d.test_labels.generic_string();
  } else {
    j["n_train"] = d.n_train;
    j["n_test"] = d.n_test;
    if (d.generator == "shapes") {
      j["classes"] = d.classes;
      j["background"] = to_string(d.background);
    }
    j["image_size"] = d.image_size;
  }
  j["channels"] = d.channels;
  return j;
}

Json config_json(const BatteryConfig& c) {
  Json j;
  j["seed"] = *c.seed;
  j["architecture"] = c.architecture;
  j["layout"] = architecture_layout(c.architecture);
  j["dataset"] = dataset_json(c.dataset);
  if (c.ood_dataset) j["ood"] = dataset_json(*c.ood_dataset);
  Json t;
  t["optimizer"] = c.train.optimizer == Optimizer::Adam ? "adam" : "sgd";
  t["learning_rate"] = c.train.learning_rate;
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["beta1"] = c.train.beta1;
  t["beta2"] = c.train.beta2;
  t["epsilon"] = c.train.epsilon;
  t["seed"] = c.train.seed;
  t["loss"] = c.train.loss == Loss::CrossEntropy ? "cross_entropy" : "binary_cross_entropy";
  t["frozen_layers"] = c.train.frozen_layers;
  j["train"] = t;
  j["methods"] = Json::array();
  for (const auto& m : c.methods) {
    Json mj;
    mj["method"] = method_id(m.method);
    mj["seed"] = m.seed;
    mj["hyperparameters"] = m.hyperparameters();
    j["methods"].push_back(mj);
  }
  j["bugs"] = Json::array();
  for (const auto& b : c.bugs) {
    Json bj;
    bj["name"] = b.label();
    bj["category"] = to_string(b.category);
    bj["kind"] = to_string(b.kind);
    bj["seed"] = b.seed;
    bj["params"] = b.params;
    j["bugs"].push_back(bj);
  }
  j["metrics"] = Json::array();
  for (MetricId m : c.metrics) j["metrics"].push_back(to_string(m));
  j["samples"] = c.samples;
  j["heatmaps"] = c.heatmaps;
  j["cascade"] = c.cascade;
  return j;
}

}  // namespace

const BatteryCell* BatteryReport::cell(const std::string& bug, const std::string& method,
                                       const std::string& metric) const {
  for (const auto& c : cells)
    if (c.bug == bug && c.method == method && c.metric == metric) return &c;
  return nullptr;
}

std::optional<double> BatteryReport::accuracy_of(const std::string& model,
                                                 const std::string& dataset) const {
  for (const auto& a : accuracy)
    if (a.model == model && a.dataset == dataset) return a.value;
  return std::nullopt;
}

std::filesystem::path resolve_output_dir(const BatteryConfig& cfg) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output_dir;
}

BatteryReport run_battery(const BatteryConfig& cfg) {
  const auto out = resolve_output_dir(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  return Runner(cfg, out).run();
}

std::string report_to_json(const BatteryReport& r) {
  Json j;
  j["schema"] = kReportSchema;
  j["normalization"] = "unsigned maps for ssim and spearman_abs; signed maps for spearman and "
                       "norm_diff";
  j["config"] = config_json(r.config);
  j["accuracy"] = Json::array();
  for (const auto& a : r.accuracy) {
    j["accuracy"].push_back({{"model", a.model}, {"dataset", a.dataset}, {"value", a.value}});
  }
  j["cells"] = Json::array();
  for (const auto& c : r.cells) {
    Json cj{{"bug", c.bug}, {"method", c.method}, {"metric", c.metric}};
    if (c.summary) {
      cj["status"] = "ok";
      cj["mean"] = c.summary->mean;
      cj["sem"] = c.summary->sem;
      cj["n"] = c.summary->n;
      cj["scores"] = c.summary->scores;
    } else {
      cj["status"] = "failed";
      cj["error"] = c.error;
    }
    j["cells"].push_back(cj);
  }
  j["stages"] = Json::array();
  for (const auto& s : r.stages) {
    Json sj{{"method", s.method}, {"reinitialized", s.reinitialized}, {"ssim", s.ssim},
            {"spearman_abs", s.spearman}};
    if (!s.error.empty()) sj["error"] = s.error;
    j["stages"].push_back(sj);
  }
  j["artifacts"] = Json::array();
  for (const auto& a : r.artifacts) {
    j["artifacts"].push_back({{"path", a.path}, {"bytes", a.bytes}, {"hash", a.hash}});
  }
  return j.dump(2) + "\n";
}

std::string report_to_csv(const BatteryReport& r) {
  std::string out = "bug,method,metric,mean,sem,n\n";
  for (const auto& c : r.cells) {
    out += c.bug + "," + c.method + "," + c.metric + ",";
    if (c.summary) {
      out += number(c.summary->mean) + "," + number(c.summary->sem) + "," +
             std::to_string(c.summary->n);
    } else {
      out += ",,0";
    }
    out += "\n";
  }
  return out;
}

}  // namespace bugscope
