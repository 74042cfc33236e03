#include "bugscope/bugs.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "bugscope/datagen.hpp"
#include "bugscope/error.hpp"

namespace bugscope {

namespace {

const std::vector<std::pair<BugKind, std::string>> kKindIds = {
    {BugKind::Spurious, "spurious"},
    {BugKind::LabelFlip, "label_flip"},
    {BugKind::Reinit, "reinit"},
    {BugKind::Frozen, "frozen"},
    {BugKind::Ood, "ood"},
    {BugKind::PreprocessMismatch, "preprocess_mismatch"},
};

const std::vector<std::pair<PreprocessTransform, std::string>> kTransformIds = {
    {PreprocessTransform::Identity, "identity"},
    {PreprocessTransform::Scale255, "scale255"},
    {PreprocessTransform::ChannelSwap, "channel_swap"},
    {PreprocessTransform::MeanStd, "mean_std"},
};

const std::set<std::string>& allowed_params(BugKind k) {
  static const std::map<BugKind, std::set<std::string>> table = {
      {BugKind::Spurious, {"fraction", "textures"}},
      {BugKind::LabelFlip, {"fraction"}},
      {BugKind::Reinit, {"layers", "top"}},
      {BugKind::Frozen, {"layers"}},
      {BugKind::Ood, {}},
      {BugKind::PreprocessMismatch, {"transform"}},
  };
  return table.at(k);
}

std::string param(const BugSpec& s, const std::string& key, const std::string& fallback) {
  const auto it = s.params.find(key);
  return it == s.params.end() ? fallback : it->second;
}

double parse_fraction(const BugSpec& s, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !(v >= 0.0 && v <= 1.0)) {
    throw ConfigError(s.label() + ": fraction must be a number in [0, 1], got '" + text + "'");
  }
  return v;
}

std::vector<std::size_t> parse_index_list(const BugSpec& s, const std::string& key,
                                          const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    std::string item = text.substr(start, end - start);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
      throw ConfigError(s.label() + ": " + key + " must be a comma-separated index list, got '" +
                        text + "'");
    }
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

// Mean/std normalization as commonly applied to ImageNet-style inputs, used
// on a model trained on plain [0, 1] pixels.
constexpr double kMean[3] = {0.485, 0.456, 0.406};
constexpr double kStd[3] = {0.229, 0.224, 0.225};

std::vector<std::size_t> top_parameterized(const Network& net, std::size_t k) {
  const auto params = net.parameterized_layers();
  if (k > params.size()) {
    throw ConfigError("reinit: top " + std::to_string(k) + " exceeds the " +
                      std::to_string(params.size()) + " parameterized layers");
  }
  return {params.end() - static_cast<std::ptrdiff_t>(k), params.end()};
}

std::vector<AttributionMap> attribute_all(const Network& net, const Tensor& x, std::size_t cls,
                                          std::span<const MethodSpec> methods,
                                          std::span<const Tensor> egrad_baselines) {
  std::vector<AttributionMap> maps;
  maps.reserve(methods.size());
  for (const auto& m : methods) maps.push_back(attribute(net, x, cls, m, egrad_baselines));
  return maps;
}

}  // namespace

std::string to_string(BugCategory c) {
  switch (c) {
    case BugCategory::Data: return "data";
    case BugCategory::Model: return "model";
    case BugCategory::TestTime: return "test-time";
  }
  return "?";
}

std::string to_string(BugKind k) {
  for (const auto& [kind, id] : kKindIds)
    if (kind == k) return id;
  return "?";
}

BugCategory bug_category_from_string(const std::string& s) {
  if (s == "data") return BugCategory::Data;
  if (s == "model") return BugCategory::Model;
  if (s == "test-time" || s == "test_time") return BugCategory::TestTime;
  throw ConfigError("unknown bug category '" + s + "' (expected data, model or test-time)");
}

BugKind bug_kind_from_string(const std::string& s) {
  for (const auto& [kind, id] : kKindIds)
    if (id == s) return kind;
  throw ConfigError("unknown bug kind '" + s + "'");
}

BugCategory category_of(BugKind k) {
  switch (k) {
    case BugKind::Spurious:
    case BugKind::LabelFlip: return BugCategory::Data;
    case BugKind::Reinit:
    case BugKind::Frozen: return BugCategory::Model;
    case BugKind::Ood:
    case BugKind::PreprocessMismatch: return BugCategory::TestTime;
  }
  return BugCategory::Data;
}

void BugSpec::validate() const {
  if (category_of(kind) != category) {
    throw ConfigError(label() + ": kind " + to_string(kind) + " belongs to category " +
                      to_string(category_of(kind)) + ", not " + to_string(category));
  }
  const auto& allowed = allowed_params(kind);
  for (const auto& [key, value] : params) {
    if (!allowed.count(key)) {
      throw ConfigError(label() + ": unknown parameter '" + key + "' for " + to_string(kind));
    }
  }
  switch (kind) {
    case BugKind::Spurious:
      parse_fraction(*this, param(*this, "fraction", "1"));
      if (params.count("textures")) parse_index_list(*this, "textures", params.at("textures"));
      break;
    case BugKind::LabelFlip: parse_fraction(*this, param(*this, "fraction", "0.1")); break;
    case BugKind::Reinit:
      if (params.count("layers") == params.count("top")) {
        throw ConfigError(label() + ": reinit needs exactly one of 'layers' or 'top'");
      }
      if (params.count("layers")) parse_index_list(*this, "layers", params.at("layers"));
      if (params.count("top")) parse_index_list(*this, "top", params.at("top"));
      break;
    case BugKind::Frozen:
      if (!params.count("layers")) throw ConfigError(label() + ": frozen needs 'layers'");
      parse_index_list(*this, "layers", params.at("layers"));
      break;
    case BugKind::Ood: break;
    case BugKind::PreprocessMismatch: {
      const auto t = preprocess_from_string(param(*this, "transform", "scale255"));
      if (t == PreprocessTransform::Identity) {
        throw ConfigError(label() + ": identity is not a preprocessing mismatch");
      }
      break;
    }
  }
}

std::string to_string(PreprocessTransform t) {
  for (const auto& [tr, id] : kTransformIds)
    if (tr == t) return id;
  return "?";
}

PreprocessTransform preprocess_from_string(const std::string& s) {
  for (const auto& [tr, id] : kTransformIds)
    if (id == s) return tr;
  throw ConfigError("unknown preprocessing transform '" + s +
                    "' (expected scale255, channel_swap or mean_std)");
}

Tensor apply_preprocess(PreprocessTransform t, const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("preprocess expects H x W x C input, got " + shape_to_string(x.shape()));
  }
  const std::size_t C = x.dim(2), pixels = x.dim(0) * x.dim(1);
  Tensor out = x;
  switch (t) {
    case PreprocessTransform::Identity: break;
    case PreprocessTransform::Scale255: out *= 255.0; break;
    case PreprocessTransform::ChannelSwap:
      if (C < 2) throw ConfigError("channel_swap needs at least 2 channels, input has 1");
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t c = 0; c < C; ++c) out[p * C + c] = x[p * C + (C - 1 - c)];
      break;
    case PreprocessTransform::MeanStd:
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t c = 0; c < C; ++c) {
          const double mean = C == 3 ? kMean[c] : 0.449, sd = C == 3 ? kStd[c] : 0.226;
          out[p * C + c] = (x[p * C + c] - mean) / sd;
        }
      break;
  }
  return out;
}

LabeledDataset ContaminatedPipeline::prepared_test_data() const {
  if (!test_data) throw ConfigError("pipeline has no test dataset");
  LabeledDataset out = *test_data;
  if (test_transform == PreprocessTransform::Identity) return out;
  for (auto& ex : out.examples) ex.image = apply_preprocess(test_transform, ex.image);
  return out;
}

ContaminatedPipeline clean_pipeline(const Pipeline& base) {
  ContaminatedPipeline p;
  p.base = base;
  p.train_data = base.train_data;
  p.test_data = base.test_data;
  p.network = base.network;
  p.train_config = base.train_config;
  return p;
}

ContaminatedPipeline inject(const BugSpec& spec, const ContaminatedPipeline& current) {
  spec.validate();
  ContaminatedPipeline out = current;
  auto require = [&](bool present, const char* what) {
    if (!present) {
      throw ConfigError(spec.label() + ": " + to_string(spec.kind) + " needs a " + what +
                        " in the pipeline");
    }
  };

  switch (spec.kind) {
    case BugKind::Spurious: {
      require(out.train_data.has_value(), "training dataset");
      SpuriousSpec ss;
      ss.fraction_spurious = parse_fraction(spec, param(spec, "fraction", "1"));
      ss.seed = spec.seed;
      if (spec.params.count("textures")) {
        ss.class_to_texture = parse_index_list(spec, "textures", spec.params.at("textures"));
      } else {
        for (std::size_t c = 0; c < out.train_data->num_classes; ++c)
          ss.class_to_texture.push_back(c);
      }
      out.train_data = compose_spurious(*out.train_data, ss);
      break;
    }
    case BugKind::LabelFlip:
      require(out.train_data.has_value(), "training dataset");
      out.train_data = flip_labels(*out.train_data,
                                   parse_fraction(spec, param(spec, "fraction", "0.1")), spec.seed);
      break;
    case BugKind::Reinit: {
      require(out.network.has_value(), "network");
      std::vector<std::size_t> layers;
      if (spec.params.count("top")) {
        const auto top = parse_index_list(spec, "top", spec.params.at("top"));
        if (top.size() != 1) throw ConfigError(spec.label() + ": top takes a single count");
        layers = top_parameterized(*out.network, top[0]);
      } else {
        layers = parse_index_list(spec, "layers", spec.params.at("layers"));
      }
      out.network = reinit_layers(*out.network, layers, spec.seed);
      out.network->mutable_provenance().push_back(
          {"bug", {{"kind", "reinit"}, {"seed", std::to_string(spec.seed)}}, layers});
      break;
    }
    case BugKind::Frozen: {
      const auto layers = parse_index_list(spec, "layers", spec.params.at("layers"));
      out.train_config.frozen_layers.insert(layers.begin(), layers.end());
      if (out.network) out.train_config.validate(*out.network);
      break;
    }
    case BugKind::Ood:
      require(out.base.ood_data.has_value(), "out-of-domain dataset");
      out.test_data = *out.base.ood_data;
      break;
    case BugKind::PreprocessMismatch:
      require(out.test_data.has_value(), "test dataset");
      out.test_transform = preprocess_from_string(param(spec, "transform", "scale255"));
      break;
  }
  out.applied.push_back(spec);
  return out;
}

ContaminatedPipeline inject(std::span<const BugSpec> specs, const Pipeline& base) {
  ContaminatedPipeline p = clean_pipeline(base);
  for (const auto& s : specs) p = inject(s, p);
  return p;
}

std::vector<CascadeStage> cascading_randomization(const Network& net,
                                                  std::span<const Tensor> inputs,
                                                  std::span<const std::size_t> classes,
                                                  std::span<const MethodSpec> methods,
                                                  std::uint64_t seed,
                                                  std::span<const Tensor> egrad_baselines) {
  if (methods.empty()) throw ConfigError("cascading randomization needs at least one method");
  if (classes.size() != inputs.size()) {
    throw ConfigError("cascading randomization: " + std::to_string(inputs.size()) +
                      " inputs but " + std::to_string(classes.size()) + " target classes");
  }
  const auto params = net.parameterized_layers();
  std::vector<CascadeStage> stages;
  for (std::size_t k = 0; k <= params.size(); ++k) {
    CascadeStage st;
    st.stage = k;
    for (std::size_t j = 0; j < k; ++j) st.reinitialized.push_back(params[params.size() - 1 - j]);
    const Network staged = k == 0 ? net : reinit_layers(net, st.reinitialized, seed);
    for (std::size_t i = 0; i < inputs.size(); ++i)
      st.maps.push_back(attribute_all(staged, inputs[i], classes[i], methods, egrad_baselines));
    stages.push_back(std::move(st));
  }
  return stages;
}

Tensor adapt_channels(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (x.rank() != 3 || target.size() != 3 || x.dim(0) != target[0] || x.dim(1) != target[1]) {
    throw ShapeError("cannot adapt input " + shape_to_string(x.shape()) + " to " +
                     shape_to_string(target));
  }
  const std::size_t from = x.dim(2), to = target[2], pixels = x.dim(0) * x.dim(1);
  Tensor out(target);
  if (from == 1) {
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t c = 0; c < to; ++c) out[p * to + c] = x[p];
  } else if (to == 1) {
    for (std::size_t p = 0; p < pixels; ++p) {
      double acc = 0.0;
      for (std::size_t c = 0; c < from; ++c) acc += x[p * from + c];
      out[p] = acc / double(from);
    }
  } else {
    throw ShapeError("cannot adapt input " + shape_to_string(x.shape()) + " to " +
                     shape_to_string(target));
  }
  return out;
}

OodPairing ood_pairing(const Network& in_domain, std::span<const Network> out_domain,
                       std::span<const Tensor> inputs, std::span<const MethodSpec> methods,
                       std::span<const Tensor> egrad_baselines) {
  auto run = [&](const Network& net) {
    std::vector<Tensor> baselines;
    for (const auto& b : egrad_baselines) baselines.push_back(adapt_channels(b, net.input_shape()));
    std::vector<std::vector<AttributionMap>> table;
    for (const auto& x : inputs) {
      const Tensor xa = adapt_channels(x, net.input_shape());
      table.push_back(attribute_all(net, xa, predict(net, xa), methods, baselines));
    }
    return table;
  };
  OodPairing out;
  out.in_domain = run(in_domain);
  for (const auto& net : out_domain) out.out_domain.push_back(run(net));
  return out;
}

}  // namespace bugscope
