#include "bugscope/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "bugscope/error.hpp"
#include "bugscope/rng.hpp"

namespace bugscope {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Drops a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string where(const std::string& key) { return "'" + key + "'"; }

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(where(key) + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(where(key) + ": expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(where(key) + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(where(key) + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void in_section(const ConfigSection& s, const std::function<void(const std::string&,
                                                                   const std::string&)>& apply) {
  for (const auto& [k, v] : s.entries) {
    try {
      apply(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError("[" + s.title() + "] (line " + std::to_string(s.line) + "): " + e.what());
    }
  }
}

}  // namespace

const std::string* ConfigSection::find(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return &v;
  return nullptr;
}

const ConfigSection* ConfigDocument::section(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name && s.label.empty()) return &s;
  return nullptr;
}

std::vector<const ConfigSection*> ConfigDocument::all(const std::string& name) const {
  std::vector<const ConfigSection*> out;
  for (const auto& s : sections)
    if (s.name == name) out.push_back(&s);
  return out;
}

ConfigDocument parse_config(const std::string& text, const std::string& origin) {
  ConfigDocument doc;
  std::set<std::string> titles;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      const std::string title = trim(line.substr(1, line.size() - 2));
      if (title.empty()) fail("empty section header");
      if (!titles.insert(title).second) fail("duplicate section [" + title + "]");
      ConfigSection s;
      const auto dot = title.find('.');
      s.name = title.substr(0, dot);
      if (dot != std::string::npos) s.label = title.substr(dot + 1);
      if (dot != std::string::npos && s.label.empty()) fail("empty label in [" + title + "]");
      s.line = lineno;
      doc.sections.push_back(std::move(s));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("missing key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    } else if (value.find('"') != std::string::npos) {
      fail("unbalanced quotes in value of '" + key + "'");
    }
    if (doc.sections.empty()) doc.sections.push_back({"", "", {}, 0});
    auto& sec = doc.sections.back();
    if (sec.find(key)) fail("duplicate key '" + key + "'");
    sec.entries.emplace_back(key, std::move(value));
  }
  return doc;
}

ConfigDocument load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_string(MetricId m) {
  switch (m) {
    case MetricId::Ssim: return "ssim";
    case MetricId::Spearman: return "spearman";
    case MetricId::SpearmanAbs: return "spearman_abs";
    case MetricId::NormDiff: return "norm_diff";
    case MetricId::SsimGt1: return "ssim_gt1";
    case MetricId::SsimGt2: return "ssim_gt2";
  }
  return "?";
}

MetricId metric_from_string(const std::string& s) {
  for (MetricId m : {MetricId::Ssim, MetricId::Spearman, MetricId::SpearmanAbs, MetricId::NormDiff,
                     MetricId::SsimGt1, MetricId::SsimGt2}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown metric '" + s + "'");
}

void apply_method_setting(MethodSpec& m, const std::string& key, const std::string& v) {
  if (key == "method") m.method = method_from_id(v);
  else if (key == "target") {
    if (v == "logit") m.target = ScoreTarget::Logit;
    else if (v == "probability") m.target = ScoreTarget::Probability;
    else throw ConfigError(where(key) + ": expected logit or probability, got '" + v + "'");
  }
  else if (key == "seed") m.seed = to_u64(key, v);
  else if (key == "noise_samples") m.noise_samples = to_size(key, v);
  else if (key == "sigma_fraction") m.sigma_fraction = to_double(key, v);
  else if (key == "steps") m.steps = to_size(key, v);
  else if (key == "baseline_value") m.baseline_value = to_double(key, v);
  else if (key == "baseline_count") m.baseline_count = to_size(key, v);
  else if (key == "grid_rows") m.grid_rows = to_size(key, v);
  else if (key == "grid_cols") m.grid_cols = to_size(key, v);
  else if (key == "num_samples") m.num_samples = to_size(key, v);
  else if (key == "kernel_width") m.kernel_width = to_double(key, v);
  else if (key == "ridge_lambda") m.ridge_lambda = to_double(key, v);
  else if (key == "epsilon") m.epsilon = to_double(key, v);
  else if (key == "alpha") m.alpha = to_double(key, v);
  else if (key == "beta") m.beta = to_double(key, v);
  else throw ConfigError("unknown method setting '" + key + "'");
}

void apply_train_setting(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "learning_rate") c.learning_rate = to_double(key, v);
  else if (key == "epochs") c.epochs = to_size(key, v);
  else if (key == "batch_size") c.batch_size = to_size(key, v);
  else if (key == "optimizer") {
    if (v == "adam") c.optimizer = Optimizer::Adam;
    else if (v == "sgd") c.optimizer = Optimizer::SGD;
    else throw ConfigError(where(key) + ": expected adam or sgd, got '" + v + "'");
  }
  else if (key == "beta1") c.beta1 = to_double(key, v);
  else if (key == "beta2") c.beta2 = to_double(key, v);
  else if (key == "epsilon") c.epsilon = to_double(key, v);
  else if (key == "seed") c.seed = to_u64(key, v);
  else if (key == "frozen_layers") {
    c.frozen_layers.clear();
    for (const auto& item : split_list(v)) c.frozen_layers.insert(to_size(key, item));
  }
  else if (key == "loss") {
    if (v == "cross_entropy") c.loss = Loss::CrossEntropy;
    else if (v == "binary_cross_entropy") c.loss = Loss::BinaryCrossEntropy;
    else throw ConfigError(where(key) + ": expected cross_entropy or binary_cross_entropy");
  }
  else throw ConfigError("unknown train setting '" + key + "'");
}

void apply_dataset_setting(DatasetSpec& d, const std::string& key, const std::string& v) {
  if (key == "generator") {
    if (v != "shapes" && v != "glyphs" && v != "idx") {
      throw ConfigError(where(key) + ": expected shapes, glyphs or idx, got '" + v + "'");
    }
    d.generator = v;
  }
  else if (key == "n_train") d.n_train = to_size(key, v);
  else if (key == "n_test") d.n_test = to_size(key, v);
  else if (key == "classes") d.classes = to_size(key, v);
  else if (key == "image_size") d.image_size = to_size(key, v);
  else if (key == "channels") d.channels = to_size(key, v);
  else if (key == "background") d.background = shape_background_from_string(v);
  else if (key == "train_images") d.train_images = v;
  else if (key == "train_labels") d.train_labels = v;
  else if (key == "test_images") d.test_images = v;
  else if (key == "test_labels") d.test_labels = v;
  else throw ConfigError("unknown dataset setting '" + key + "'");
}

void BatteryConfig::validate() const {
  if (!seed) throw ConfigError("battery: seed is mandatory");
  if (samples < 2) throw ConfigError("battery: samples must be >= 2");
  if (methods.empty()) throw ConfigError("battery: no methods configured");
  if (metrics.empty()) throw ConfigError("battery: no metrics configured");
  std::set<Method> seen_methods;
  for (const auto& m : methods) {
    m.validate();
    if (!seen_methods.insert(m.method).second) {
      throw ConfigError("battery: method '" + method_id(m.method) + "' configured twice");
    }
  }
  std::set<std::string> seen_bugs{"clean"};
  for (const auto& b : bugs) {
    b.validate();
    for (char ch : b.label()) {
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') {
        throw ConfigError("battery: bug label '" + b.label() +
                          "' may only use letters, digits, '-' and '_'");
      }
    }
    if (!seen_bugs.insert(b.label()).second) {
      throw ConfigError("battery: bug label '" + b.label() + "' is reserved or used twice");
    }
    if (b.kind == BugKind::Ood && !ood_dataset) {
      throw ConfigError("battery: bug '" + b.label() + "' needs an [ood] dataset section");
    }
  }
  for (const DatasetSpec* d : {&dataset, ood_dataset ? &*ood_dataset : nullptr}) {
    if (!d) continue;
    if (d->generator == "idx" && (d->train_images.empty() || d->train_labels.empty() ||
                                  d->test_images.empty() || d->test_labels.empty())) {
      throw ConfigError("dataset: idx needs train_images, train_labels, test_images, test_labels");
    }
    if (d->generator != "idx" && (d->n_train < 2 || d->n_test < 2)) {
      throw ConfigError("dataset: n_train and n_test must be >= 2");
    }
  }
}

BatteryConfig battery_config_from(const ConfigDocument& doc) {
  BatteryConfig cfg;
  std::optional<std::uint64_t> train_seed;
  std::vector<std::string> method_shorthand;
  std::vector<std::pair<MethodSpec, bool>> methods;  // spec, explicit seed

  for (const auto& s : doc.sections) {
    if (s.name == "battery" && s.label.empty()) {
      in_section(s, [&](const std::string& k, const std::string& v) {
        if (k == "seed") cfg.seed = to_u64(k, v);
        else if (k == "architecture") cfg.architecture = v;
        else if (k == "samples") cfg.samples = to_size(k, v);
        else if (k == "heatmaps") cfg.heatmaps = to_size(k, v);
        else if (k == "cascade") cfg.cascade = to_bool(k, v);
        else if (k == "output") cfg.output_dir = v;
        else if (k == "methods") method_shorthand = split_list(v);
        else if (k == "metrics") {
          cfg.metrics.clear();
          for (const auto& m : split_list(v)) cfg.metrics.push_back(metric_from_string(m));
        }
        else throw ConfigError("unknown battery setting '" + k + "'");
      });
    } else if (s.name == "dataset" && s.label.empty()) {
      in_section(s, [&](const std::string& k, const std::string& v) {
        apply_dataset_setting(cfg.dataset, k, v);
      });
    } else if (s.name == "ood" && s.label.empty()) {
      cfg.ood_dataset = DatasetSpec{};
      in_section(s, [&](const std::string& k, const std::string& v) {
        apply_dataset_setting(*cfg.ood_dataset, k, v);
      });
    } else if (s.name == "train" && s.label.empty()) {
      in_section(s, [&](const std::string& k, const std::string& v) {
        apply_train_setting(cfg.train, k, v);
        if (k == "seed") train_seed = cfg.train.seed;
      });
    } else if (s.name == "method" && !s.label.empty()) {
      MethodSpec m;
      bool explicit_seed = false;
      if (!s.find("method")) {
        try {
          m.method = method_from_id(s.label);
        } catch (const ConfigError&) {
          throw ConfigError("[" + s.title() + "]: no 'method' key and '" + s.label +
                            "' is not a method id");
        }
      }
      in_section(s, [&](const std::string& k, const std::string& v) {
        apply_method_setting(m, k, v);
        explicit_seed = explicit_seed || k == "seed";
      });
      methods.emplace_back(m, explicit_seed);
    } else if (s.name == "bug" && !s.label.empty()) {
      BugSpec b;
      b.name = s.label;
      const std::string* kind = s.find("kind");
      if (!kind) throw ConfigError("[" + s.title() + "]: missing 'kind'");
      b.kind = bug_kind_from_string(*kind);
      b.category = category_of(b.kind);
      bool explicit_seed = false;
      in_section(s, [&](const std::string& k, const std::string& v) {
        if (k == "kind") return;
        if (k == "category") b.category = bug_category_from_string(v);
        else if (k == "seed") {
          b.seed = to_u64(k, v);
          explicit_seed = true;
        }
        else b.params[k] = v;
      });
      if (!explicit_seed) b.seed = hash_string("bug." + s.label);
      cfg.bugs.push_back(std::move(b));
    } else {
      throw ConfigError("unknown section [" + s.title() + "] at line " + std::to_string(s.line));
    }
  }

  // The shorthand list fixes the order; a [method.*] section for a listed
  // method configures it instead of adding a second entry.
  if (!method_shorthand.empty()) {
    std::vector<std::pair<MethodSpec, bool>> ordered;
    for (const auto& id : method_shorthand) {
      const Method want = method_from_id(id);
      const auto it = std::find_if(methods.begin(), methods.end(),
                                   [&](const auto& m) { return m.first.method == want; });
      if (it != methods.end()) {
        ordered.push_back(*it);
        methods.erase(it);
      } else {
        MethodSpec m;
        m.method = want;
        ordered.emplace_back(m, false);
      }
    }
    ordered.insert(ordered.end(), methods.begin(), methods.end());
    methods = std::move(ordered);
  }
  if (cfg.seed) {
    if (!train_seed) cfg.train.seed = derive_seed(*cfg.seed, hash_string("train"));
    for (auto& [m, explicit_seed] : methods) {
      if (!explicit_seed) m.seed = derive_seed(*cfg.seed, hash_string(method_id(m.method)));
    }
    for (auto& b : cfg.bugs) b.seed = derive_seed(*cfg.seed, b.seed);
  }
  for (auto& [m, _] : methods) cfg.methods.push_back(m);
  cfg.validate();
  return cfg;
}

BatteryConfig load_battery_config(const std::filesystem::path& path) {
  return battery_config_from(load_config(path));
}

std::pair<LabeledDataset, LabeledDataset> build_datasets(const DatasetSpec& spec,
                                                         std::uint64_t seed) {
  LabeledDataset train, test;
  if (spec.generator == "shapes") {
    train = gen_shapes(derive_seed(seed, 1), spec.n_train, spec.classes, spec.image_size,
                       spec.channels, spec.background);
    test = gen_shapes(derive_seed(seed, 2), spec.n_test, spec.classes, spec.image_size,
                      spec.channels, spec.background);
  } else if (spec.generator == "glyphs") {
    train = gen_glyphs(derive_seed(seed, 1), spec.n_train, spec.image_size, spec.channels);
    test = gen_glyphs(derive_seed(seed, 2), spec.n_test, spec.image_size, spec.channels);
  } else if (spec.generator == "idx") {
    train = load_idx(spec.train_images, spec.train_labels, spec.channels);
    test = load_idx(spec.test_images, spec.test_labels, spec.channels);
    const std::size_t classes = std::max(train.num_classes, test.num_classes);
    train.num_classes = test.num_classes = classes;
  } else {
    throw ConfigError("unknown dataset generator '" + spec.generator + "'");
  }
  train.split = Split::Train;
  test.split = Split::Test;
  return {std::move(train), std::move(test)};
}

}  // namespace bugscope
