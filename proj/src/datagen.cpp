#include "bugscope/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "bugscope/binio.hpp"
#include "bugscope/error.hpp"
#include "bugscope/rng.hpp"

namespace bugscope {

namespace {

using Rgb = std::array<double, 3>;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

double channel_value(const Rgb& rgb, std::size_t c, std::size_t channels) {
  if (channels == 3) return rgb[c];
  return (rgb[0] + rgb[1] + rgb[2]) / 3.0;
}

bool inside_shape(std::size_t kind, double dx, double dy, double r) {
  const double d = std::hypot(dx, dy);
  switch (kind) {
    case 0: return d <= r;
    case 1: {
      const double arm = r / 3.2;
      return (std::fabs(dx) <= arm && std::fabs(dy) <= r) ||
             (std::fabs(dy) <= arm && std::fabs(dx) <= r);
    }
    case 2: {
      // Upward triangle: apex (0, -r), base at y = 0.8 r spanning [-r, r].
      if (dy > 0.8 * r || dy < -r) return false;
      const double half_width = r * (dy + r) / (1.8 * r);
      return std::fabs(dx) <= half_width;
    }
    case 3: return d <= r && d >= 0.55 * r;
    case 4: return std::fabs(dx) <= 0.75 * r && std::fabs(dy) <= 0.75 * r;
    default: return std::fabs(dx) <= r && std::fabs(dy) <= 0.3 * r;
  }
}

// Smooth gray value-noise field with a slight per-channel tint.
Tensor neutral_background(Rng& rng, std::size_t size, std::size_t channels) {
  constexpr std::size_t kGrid = 5;
  std::array<double, kGrid * kGrid> coarse{};
  for (double& v : coarse) v = rng.uniform(-1.0, 1.0);
  const double base = rng.uniform(0.4, 0.6);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(-0.02, 0.02);
  Tensor bg({size, size, channels});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double gy = double(y) / double(size - 1) * (kGrid - 1);
      const double gx = double(x) / double(size - 1) * (kGrid - 1);
      const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
      const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
      const double fy = gy - double(y0), fx = gx - double(x0);
      const double v = coarse[y0 * kGrid + x0] * (1 - fy) * (1 - fx) +
                       coarse[y0 * kGrid + x0 + 1] * (1 - fy) * fx +
                       coarse[(y0 + 1) * kGrid + x0] * fy * (1 - fx) +
                       coarse[(y0 + 1) * kGrid + x0 + 1] * fy * fx;
      const double grain = 0.02 * rng.normal();
      for (std::size_t c = 0; c < channels; ++c) {
        bg.at(y, x, c) = clamp01(base + 0.06 * v + grain + (channels == 3 ? tint[c] : 0.0));
      }
    }
  }
  return bg;
}

std::string join(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<std::size_t> split_indices(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoull(tok));
  }
  return out;
}

std::vector<std::size_t> choose_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t rounded_count(double fraction, std::size_t n) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("fraction must lie in [0, 1], got " + std::to_string(fraction));
  }
  return static_cast<std::size_t>(std::llround(fraction * double(n)));
}

void check_indices(const LabeledDataset& ds, const std::vector<std::size_t>& indices) {
  for (std::size_t i : indices) {
    if (i >= ds.size()) {
      throw ConfigError("example index " + std::to_string(i) + " out of range for " +
                        std::to_string(ds.size()) + " examples");
    }
  }
}

LabeledDataset apply_spurious(const LabeledDataset& ds, const SpuriousSpec& spec,
                              const std::vector<std::size_t>& indices) {
  spec.validate(ds.num_classes);
  check_indices(ds, indices);
  LabeledDataset out = ds;
  for (std::size_t i : indices) {
    ImageExample& ex = out.examples[i];
    if (ex.object_mask.empty()) {
      throw ConfigError("compose_spurious: example " + std::to_string(i) + " has no object mask");
    }
    const std::size_t tex_id = spec.class_to_texture[ex.label];
    const Tensor tex = render_texture(tex_id, ex.image.dim(0), ex.image.dim(1), ex.image.dim(2),
                                      derive_seed(spec.seed, i));
    for (std::size_t y = 0; y < ex.image.dim(0); ++y)
      for (std::size_t x = 0; x < ex.image.dim(1); ++x)
        if (ex.object_mask[y * ex.image.dim(1) + x] == 0.0)
          for (std::size_t c = 0; c < ex.image.dim(2); ++c) ex.image.at(y, x, c) = tex.at(y, x, c);
    ex.background = tex;
    ex.background_id = tex_id;
  }
  std::ostringstream frac;
  frac.precision(17);
  frac << spec.fraction_spurious;
  out.provenance.push_back({"compose_spurious",
                            {{"mapping", join(spec.class_to_texture)},
                             {"fraction", frac.str()},
                             {"seed", std::to_string(spec.seed)}},
                            indices});
  return out;
}

LabeledDataset apply_flip(const LabeledDataset& ds, const std::vector<std::size_t>& indices,
                          std::uint64_t seed, std::map<std::string, std::string> params) {
  if (ds.num_classes < 2) throw ConfigError("flip_labels: dataset has a single class");
  check_indices(ds, indices);
  LabeledDataset out = ds;
  for (std::size_t i : indices) {
    Rng rng(derive_seed(seed, i));
    const std::size_t old_label = out.examples[i].label;
    std::size_t pick = rng.below(ds.num_classes - 1);
    if (pick >= old_label) ++pick;
    out.examples[i].label = pick;
  }
  params["seed"] = std::to_string(seed);
  std::vector<std::size_t> sorted = indices;
  std::sort(sorted.begin(), sorted.end());
  out.provenance.push_back({"flip_labels", std::move(params), std::move(sorted)});
  return out;
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void need_bytes(std::span<const std::uint8_t> b, std::size_t n, const char* what) {
  if (b.size() < n) {
    throw FormatError(std::string("truncated IDX ") + what + " file: expected " +
                      std::to_string(n) + " bytes, got " + std::to_string(b.size()));
  }
}

}  // namespace

std::string to_string(ShapeBackground b) {
  return b == ShapeBackground::Clutter ? "clutter" : "neutral";
}

ShapeBackground shape_background_from_string(const std::string& s) {
  if (s == "neutral") return ShapeBackground::Neutral;
  if (s == "clutter") return ShapeBackground::Clutter;
  throw ConfigError("unknown shapes background '" + s + "' (expected neutral or clutter)");
}

LabeledDataset gen_shapes(std::uint64_t seed, std::size_t n, std::size_t classes,
                          std::size_t image_size, std::size_t channels,
                          ShapeBackground background) {
  if (classes < 2 || classes > kMaxShapeClasses) {
    throw ConfigError("gen_shapes: classes must be in [2, " + std::to_string(kMaxShapeClasses) +
                      "], got " + std::to_string(classes));
  }
  if (image_size < 16) throw ConfigError("gen_shapes: image_size must be >= 16");
  if (channels != 1 && channels != 3) throw ConfigError("gen_shapes: channels must be 1 or 3");
  if (n < classes) {
    throw ConfigError("gen_shapes: n = " + std::to_string(n) + " is smaller than classes = " +
                      std::to_string(classes));
  }
  LabeledDataset ds;
  ds.num_classes = classes;
  ds.generator = "shapes";
  ds.seed = seed;

  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  Rng order_rng(derive_seed(seed, 0x5a17));
  for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[order_rng.below(i)]);

  const double size = double(image_size);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    ImageExample ex;
    ex.label = labels[i];
    Tensor bg = neutral_background(rng, image_size, channels);
    if (background == ShapeBackground::Clutter) {
      Rng tex_rng(derive_seed(seed ^ 0x7e47, i));
      ex.background_id = tex_rng.below(kNumTextures);
      bg = render_texture(*ex.background_id, image_size, image_size, channels, tex_rng.next_u64());
    }
    const double r = size * rng.uniform(0.24, 0.34);
    const double cx = rng.uniform(r + 1.0, size - r - 1.0);
    const double cy = rng.uniform(r + 1.0, size - r - 1.0);
    const Rgb color = hsv_to_rgb(rng.uniform(), rng.uniform(0.6, 0.9), rng.uniform(0.75, 1.0));
    const bool dark = channels == 1 && rng.bernoulli(0.5);

    ex.image = bg;
    ex.object_mask = Tensor({image_size, image_size});
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double dx = double(x) + 0.5 - cx, dy = double(y) + 0.5 - cy;
        if (!inside_shape(ex.label, dx, dy, r)) continue;
        ex.object_mask[y * image_size + x] = 1.0;
        const double grain = 0.03 * rng.normal();
        for (std::size_t c = 0; c < channels; ++c) {
          const double v = dark ? 0.1 : channel_value(color, c, channels);
          ex.image.at(y, x, c) = clamp01(v + grain);
        }
      }
    }
    ex.background = std::move(bg);
    ds.examples.push_back(std::move(ex));
  }
  ds.provenance.push_back({"gen_shapes",
                           {{"seed", std::to_string(seed)},
                            {"n", std::to_string(n)},
                            {"classes", std::to_string(classes)},
                            {"image_size", std::to_string(image_size)},
                            {"channels", std::to_string(channels)}},
                           {}});
  if (background != ShapeBackground::Neutral) {
    ds.provenance.back().params["background"] = to_string(background);
  }
  return ds;
}

void SpuriousSpec::validate(std::size_t num_classes) const {
  if (class_to_texture.size() != num_classes) {
    throw ConfigError("spurious mapping covers " + std::to_string(class_to_texture.size()) +
                      " classes, dataset has " + std::to_string(num_classes));
  }
  std::vector<std::size_t> sorted = class_to_texture;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("spurious mapping assigns one texture to two classes");
  }
  if (!(fraction_spurious >= 0.0 && fraction_spurious <= 1.0)) {
    throw ConfigError("fraction_spurious must lie in [0, 1]");
  }
}

Tensor render_texture(std::size_t texture_id, std::size_t height, std::size_t width,
                      std::size_t channels, std::uint64_t phase_seed) {
  static constexpr std::array<std::array<Rgb, 2>, kNumTextures> kPalette{{
      {{{0.55, 0.75, 0.95}, {0.85, 0.92, 1.00}}},  // sky
      {{{0.12, 0.40, 0.10}, {0.50, 0.72, 0.28}}},  // bamboo
      {{{0.78, 0.62, 0.38}, {0.96, 0.86, 0.62}}},  // sand
      {{{0.35, 0.20, 0.45}, {0.70, 0.55, 0.80}}},  // dusk
      {{{0.60, 0.15, 0.12}, {0.90, 0.50, 0.35}}},  // brick
      {{{0.20, 0.22, 0.25}, {0.55, 0.58, 0.62}}},  // slate
  }};
  const auto& pal = kPalette[texture_id % kPalette.size()];
  const double angle = 0.2 + 1.1 * double(texture_id);
  const double cycles = 2.0 + 1.5 * double(texture_id % 3);
  Rng rng(phase_seed);
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double span = double(std::max(height, width));
  Tensor tex({height, width, channels});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (double(x) * ca + double(y) * sa) / span;
      const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * cycles * u + phase);
      for (std::size_t c = 0; c < channels; ++c) {
        const double lo = channel_value(pal[0], c, channels);
        const double hi = channel_value(pal[1], c, channels);
        tex.at(y, x, c) = clamp01(lo + (hi - lo) * t);
      }
    }
  }
  return tex;
}

LabeledDataset compose_spurious(const LabeledDataset& ds, const SpuriousSpec& spec) {
  spec.validate(ds.num_classes);
  const std::size_t k = rounded_count(spec.fraction_spurious, ds.size());
  return apply_spurious(ds, spec, choose_subset(ds.size(), k, derive_seed(spec.seed, 0xc0de)));
}

LabeledDataset compose_spurious_at(const LabeledDataset& ds, const SpuriousSpec& spec,
                                   const std::vector<std::size_t>& indices) {
  return apply_spurious(ds, spec, indices);
}

LabeledDataset flip_labels(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
  const std::size_t k = rounded_count(fraction, ds.size());
  if (ds.num_classes < 2) throw ConfigError("flip_labels: dataset has a single class");
  std::ostringstream frac;
  frac.precision(17);
  frac << fraction;
  return apply_flip(ds, choose_subset(ds.size(), k, derive_seed(seed, 0xf11b)), seed,
                    {{"fraction", frac.str()}});
}

LabeledDataset flip_labels_at(const LabeledDataset& ds, const std::vector<std::size_t>& indices,
                              std::uint64_t seed) {
  return apply_flip(ds, indices, seed, {});
}

Tensor gt1_mask(const ImageExample& ex) {
  if (ex.object_mask.empty()) throw ConfigError("gt1_mask: example has no object mask");
  Tensor gt = ex.object_mask;
  for (double& v : gt.data()) v = 1.0 - v;
  return gt;
}

Tensor strip_object(const ImageExample& ex) {
  if (!ex.background) throw ConfigError("strip_object: example has no background layer");
  return *ex.background;
}

LabeledDataset replicate_channels(const LabeledDataset& ds, std::size_t channels) {
  LabeledDataset out = ds;
  auto widen = [&](const Tensor& t) {
    if (t.dim(2) == channels) return t;
    if (t.dim(2) != 1) {
      throw ShapeError("cannot replicate " + shape_to_string(t.shape()) + " to " +
                       std::to_string(channels) + " channels");
    }
    Tensor w({t.dim(0), t.dim(1), channels});
    for (std::size_t y = 0; y < t.dim(0); ++y)
      for (std::size_t x = 0; x < t.dim(1); ++x)
        for (std::size_t c = 0; c < channels; ++c) w.at(y, x, c) = t.at(y, x, 0);
    return w;
  };
  for (auto& ex : out.examples) {
    ex.image = widen(ex.image);
    if (ex.background) ex.background = widen(*ex.background);
  }
  out.provenance.push_back(
      {"replicate_channels", {{"channels", std::to_string(channels)}}, {}});
  return out;
}

LabeledDataset replay_provenance(const Provenance& provenance) {
  if (provenance.empty()) throw ConfigError("replay: empty provenance");
  LabeledDataset ds;
  for (std::size_t i = 0; i < provenance.size(); ++i) {
    const auto& e = provenance[i];
    auto p = [&](const char* key) { return e.params.at(key); };
    if (i == 0) {
      if (e.op == "gen_shapes") {
        ds = gen_shapes(std::stoull(p("seed")), std::stoull(p("n")), std::stoull(p("classes")),
                        std::stoull(p("image_size")), std::stoull(p("channels")),
                        e.params.contains("background")
                            ? shape_background_from_string(p("background"))
                            : ShapeBackground::Neutral);
      } else if (e.op == "gen_glyphs") {
        ds = gen_glyphs(std::stoull(p("seed")), std::stoull(p("n")), std::stoull(p("image_size")),
                        std::stoull(p("channels")));
      } else if (e.op == "load_idx") {
        ds = load_idx(p("images"), p("labels"), std::stoull(p("channels")));
      } else {
        throw ConfigError("replay: '" + e.op + "' is not a base generator");
      }
      continue;
    }
    if (e.op == "compose_spurious") {
      SpuriousSpec spec{split_indices(p("mapping")), std::stod(p("fraction")),
                        std::stoull(p("seed"))};
      ds = apply_spurious(ds, spec, e.indices);
    } else if (e.op == "flip_labels") {
      auto params = e.params;
      params.erase("seed");
      ds = apply_flip(ds, e.indices, std::stoull(p("seed")), params);
    } else if (e.op == "replicate_channels") {
      ds = replicate_channels(ds, std::stoull(p("channels")));
    } else {
      throw ConfigError("replay: unknown dataset operation '" + e.op + "'");
    }
  }
  return ds;
}

// ---- IDX ----------------------------------------------------------------

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  put_be32(out, 0x00000803);
  put_be32(out, static_cast<std::uint32_t>(images.count()));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, 0x00000801);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

IdxImages decode_idx_images(std::span<const std::uint8_t> bytes) {
  need_bytes(bytes, 16, "images");
  const std::uint32_t magic = get_be32(bytes, 0);
  if (magic != 0x00000803) {
    std::ostringstream os;
    os << "IDX images: bad magic 0x" << std::hex << magic << " (expected 0x803)";
    throw FormatError(os.str());
  }
  IdxImages img;
  const std::size_t count = get_be32(bytes, 4);
  img.rows = get_be32(bytes, 8);
  img.cols = get_be32(bytes, 12);
  const std::size_t payload = count * img.rows * img.cols;
  need_bytes(bytes, 16 + payload, "images");
  if (bytes.size() != 16 + payload) {
    throw FormatError("IDX images: " + std::to_string(bytes.size() - 16 - payload) +
                      " trailing bytes");
  }
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  if (count > 0 && (img.rows == 0 || img.cols == 0)) {
    throw FormatError("IDX images: zero image dimension");
  }
  return img;
}

std::vector<std::uint8_t> decode_idx_labels(std::span<const std::uint8_t> bytes) {
  need_bytes(bytes, 8, "labels");
  const std::uint32_t magic = get_be32(bytes, 0);
  if (magic != 0x00000801) {
    std::ostringstream os;
    os << "IDX labels: bad magic 0x" << std::hex << magic << " (expected 0x801)";
    throw FormatError(os.str());
  }
  const std::size_t count = get_be32(bytes, 4);
  need_bytes(bytes, 8 + count, "labels");
  if (bytes.size() != 8 + count) {
    throw FormatError("IDX labels: " + std::to_string(bytes.size() - 8 - count) +
                      " trailing bytes");
  }
  return {bytes.begin() + 8, bytes.end()};
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const IdxImages& images, std::span<const std::uint8_t> labels) {
  write_file_bytes(images_path, encode_idx_images(images));
  write_file_bytes(labels_path, encode_idx_labels(labels));
}

LabeledDataset idx_to_dataset(const IdxImages& img, std::span<const std::uint8_t> labels,
                              std::size_t channels) {
  if (channels == 0) throw ConfigError("IDX: channels must be >= 1");
  if (img.count() != labels.size()) {
    throw FormatError("IDX count mismatch: images file holds " + std::to_string(img.count()) +
                      " images, labels file holds " + std::to_string(labels.size()) + " labels");
  }
  LabeledDataset ds;
  ds.generator = "idx";
  std::size_t max_label = 0;
  const std::size_t area = img.rows * img.cols;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ImageExample ex;
    ex.label = labels[i];
    max_label = std::max(max_label, ex.label);
    ex.image = Tensor({img.rows, img.cols, channels});
    for (std::size_t p = 0; p < area; ++p) {
      const double v = double(img.pixels[i * area + p]) / 255.0;
      for (std::size_t c = 0; c < channels; ++c) ex.image[p * channels + c] = v;
    }
    ex.object_mask = Tensor({img.rows, img.cols}, 1.0);
    ds.examples.push_back(std::move(ex));
  }
  ds.num_classes = std::max<std::size_t>(max_label + 1, 2);
  return ds;
}

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t channels) {
  if (channels == 0) throw ConfigError("load_idx: channels must be >= 1");
  const IdxImages img = decode_idx_images(read_file_bytes(images_path));
  const std::vector<std::uint8_t> labels = decode_idx_labels(read_file_bytes(labels_path));
  LabeledDataset ds = idx_to_dataset(img, labels, channels);
  ds.provenance.push_back({"load_idx",
                           {{"images", images_path.string()},
                            {"labels", labels_path.string()},
                            {"channels", std::to_string(channels)}},
                           {}});
  return ds;
}

LabeledDataset gen_glyphs(std::uint64_t seed, std::size_t n, std::size_t image_size,
                          std::size_t channels) {
  IdxImages img;
  std::vector<std::uint8_t> labels;
  gen_glyph_idx(seed, n, image_size, img, labels);
  LabeledDataset ds = idx_to_dataset(img, labels, channels);
  ds.generator = "glyphs";
  ds.seed = seed;
  ds.num_classes = 10;
  ds.provenance.push_back({"gen_glyphs",
                           {{"seed", std::to_string(seed)},
                            {"n", std::to_string(n)},
                            {"image_size", std::to_string(image_size)},
                            {"channels", std::to_string(channels)}},
                           {}});
  return ds;
}

void gen_glyph_idx(std::uint64_t seed, std::size_t n, std::size_t image_size, IdxImages& images,
                   std::vector<std::uint8_t>& labels) {
  if (image_size < 12) throw ConfigError("gen_glyph_idx: image_size must be >= 12");
  // Segments a..g: top, upper right, lower right, bottom, lower left, upper left, middle.
  static constexpr std::array<std::uint8_t, 10> kDigits{
      0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
      0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111};
  images.rows = images.cols = image_size;
  images.pixels.assign(n * image_size * image_size, 0);
  labels.assign(n, 0);
  const double size = double(image_size);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    const std::size_t digit = i % 10;
    labels[i] = static_cast<std::uint8_t>(digit);
    const double w = size * rng.uniform(0.30, 0.42);
    const double h = size * rng.uniform(0.55, 0.70);
    const double x0 = rng.uniform(2.0, size - w - 2.0);
    const double y0 = rng.uniform(2.0, size - h - 2.0);
    const double slant = rng.uniform(-0.15, 0.15);
    const double half = std::max(0.8, size * rng.uniform(0.035, 0.055));
    const double ink = rng.uniform(0.8, 1.0);
    struct Seg { double ax, ay, bx, by; };
    const std::array<Seg, 7> segs{{{0, 0, w, 0},
                                   {w, 0, w, h / 2},
                                   {w, h / 2, w, h},
                                   {0, h, w, h},
                                   {0, h / 2, 0, h},
                                   {0, 0, 0, h / 2},
                                   {0, h / 2, w, h / 2}}};
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double py = double(y) + 0.5 - y0;
        const double px = double(x) + 0.5 - x0 - slant * (h - py);
        double best = 1e9;
        for (std::size_t s = 0; s < 7; ++s) {
          if (!(kDigits[digit] >> s & 1)) continue;
          const Seg& g = segs[s];
          const double vx = g.bx - g.ax, vy = g.by - g.ay;
          const double t = std::clamp(((px - g.ax) * vx + (py - g.ay) * vy) / (vx * vx + vy * vy),
                                      0.0, 1.0);
          best = std::min(best, std::hypot(px - g.ax - t * vx, py - g.ay - t * vy));
        }
        const double cover = std::clamp(half + 0.5 - best, 0.0, 1.0);
        images.pixels[(i * image_size + y) * image_size + x] =
            static_cast<std::uint8_t>(std::lround(255.0 * ink * cover));
      }
    }
  }
}

// ---- dataset container ----------------------------------------------------

namespace {
constexpr std::string_view kDatasetMagic = "BSDS";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_dataset(const LabeledDataset& ds) {
  ByteWriter w;
  w.raw(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(ds.num_classes);
  w.u32(static_cast<std::uint32_t>(ds.split));
  w.str(ds.generator);
  w.u64(ds.seed);
  w.str(provenance_to_json(ds.provenance));
  w.u64(ds.size());
  for (const auto& ex : ds.examples) {
    w.u64(ex.label);
    w.tensor(ex.image);
    w.tensor(ex.object_mask);
    w.u8(ex.background.has_value());
    if (ex.background) w.tensor(*ex.background);
    w.u8(ex.background_id.has_value());
    if (ex.background_id) w.u64(*ex.background_id);
  }
  return w.bytes();
}

LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset file");
  if (r.raw(kDatasetMagic.size()) != kDatasetMagic) throw FormatError("dataset file: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("dataset file: unsupported version " + std::to_string(version) +
                      " (supported: " + std::to_string(kDatasetVersion) + ")");
  }
  LabeledDataset ds;
  ds.num_classes = r.u64();
  const std::uint32_t split = r.u32();
  if (split > 2) throw FormatError("dataset file: bad split tag");
  ds.split = static_cast<Split>(split);
  ds.generator = r.str();
  ds.seed = r.u64();
  ds.provenance = provenance_from_json(r.str());
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    ImageExample ex;
    ex.label = r.u64();
    ex.image = r.tensor();
    ex.object_mask = r.tensor();
    if (r.u8()) ex.background = r.tensor();
    if (r.u8()) ex.background_id = r.u64();
    ds.examples.push_back(std::move(ex));
  }
  if (!r.at_end()) throw FormatError("dataset file: trailing bytes");
  ds.validate();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_dataset(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(read_file_bytes(path));
}

}  // namespace bugscope
