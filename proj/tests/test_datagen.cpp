#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <filesystem>
#include <fstream>

#include "bugscope/datagen.hpp"
#include "bugscope/error.hpp"

using namespace bugscope;

namespace {

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8), std::uint8_t(v)};
}

std::vector<std::uint8_t> cat(std::initializer_list<std::vector<std::uint8_t>> parts) {
  std::vector<std::uint8_t> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Two 2 x 3 images and their labels, written out byte by byte.
const std::vector<std::uint8_t> kImages =
    cat({be32(0x803), be32(2), be32(2), be32(3), {0, 51, 102, 153, 204, 255, 255, 0, 1, 2, 3, 4}});
const std::vector<std::uint8_t> kLabels = cat({be32(0x801), be32(2), {7, 3}});

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("bugscope-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("idx decode and encode are bit exact") {
  const IdxImages img = decode_idx_images(kImages);
  CHECK(img.rows == 2);
  CHECK(img.cols == 3);
  CHECK(img.count() == 2);
  CHECK(img.pixels[5] == 255);
  CHECK(encode_idx_images(img) == kImages);
  const auto labels = decode_idx_labels(kLabels);
  CHECK(labels == std::vector<std::uint8_t>{7, 3});
  CHECK(encode_idx_labels(labels) == kLabels);
}

TEST_CASE("idx loader scales pixels and keeps labels") {
  const auto dir = temp_dir("idx");
  write_bytes(dir / "img", kImages);
  write_bytes(dir / "lab", kLabels);
  const auto ds = load_idx(dir / "img", dir / "lab");
  REQUIRE(ds.size() == 2);
  CHECK(ds.input_shape() == Shape{2, 3, 1});
  CHECK(ds.num_classes == 8);
  CHECK(ds.examples[0].label == 7);
  CHECK(ds.examples[1].label == 3);
  CHECK(ds.examples[0].image[1] == 51.0 / 255.0);
  CHECK(ds.examples[0].image[5] == 1.0);
  CHECK(ds.examples[1].image[0] == 1.0);
  CHECK(ds.examples[1].image[2] == 1.0 / 255.0);
  CHECK(ds.examples[0].object_mask.min() == 1.0);
  const auto rgb = load_idx(dir / "img", dir / "lab", 3);
  CHECK(rgb.input_shape() == Shape{2, 3, 3});
  CHECK(rgb.examples[0].image[3] == rgb.examples[0].image[5]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("idx errors") {
  auto bad_magic = kImages;
  bad_magic[3] = 0x01;
  CHECK_THROWS_AS(decode_idx_images(bad_magic), FormatError);
  auto truncated = kImages;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_idx_images(truncated), FormatError);
  auto trailing = kLabels;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_idx_labels(trailing), FormatError);
  CHECK_THROWS_AS(decode_idx_labels(std::vector<std::uint8_t>{0, 0, 8}), FormatError);
  const auto one_label = cat({be32(0x801), be32(1), {7}});
  CHECK_THROWS_AS(idx_to_dataset(decode_idx_images(kImages), decode_idx_labels(one_label)),
                  FormatError);
  CHECK_THROWS_AS(load_idx("/nonexistent/img", "/nonexistent/lab"), IoError);
}

TEST_CASE("idx write round trip") {
  const auto dir = temp_dir("idx-write");
  IdxImages img;
  std::vector<std::uint8_t> labels;
  gen_glyph_idx(3, 20, 14, img, labels);
  write_idx(dir / "i", dir / "l", img, labels);
  const auto ds = load_idx(dir / "i", dir / "l");
  CHECK(ds.size() == 20);
  CHECK(ds.input_shape() == Shape{14, 14, 1});
  for (std::size_t k = 0; k < 20; ++k) CHECK(ds.examples[k].label == labels[k]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("shapes: range, balance, masks and backgrounds") {
  for (auto bg : {ShapeBackground::Neutral, ShapeBackground::Clutter}) {
    const auto ds = gen_shapes(5, 40, 4, 16, 3, bg);
    ds.validate();
    CHECK(ds.size() == 40);
    std::vector<int> counts(4);
    for (const auto& ex : ds.examples) {
      ++counts[ex.label];
      CHECK(ex.image.min() >= 0.0);
      CHECK(ex.image.max() <= 1.0);
      REQUIRE(ex.background.has_value());
      double object = 0.0;
      for (std::size_t p = 0; p < 256; ++p) {
        const double m = ex.object_mask[p];
        CHECK((m == 0.0 || m == 1.0));
        object += m;
        if (m == 0.0)
          for (std::size_t c = 0; c < 3; ++c) CHECK(ex.image[p * 3 + c] == (*ex.background)[p * 3 + c]);
      }
      CHECK(object > 0.0);
      CHECK(object < 256.0);
      const Tensor gt1 = gt1_mask(ex);
      for (std::size_t p = 0; p < 256; ++p) CHECK(gt1[p] == 1.0 - ex.object_mask[p]);
      CHECK(strip_object(ex) == *ex.background);
    }
    for (int c : counts) CHECK(c == 10);
    CHECK(gen_shapes(5, 40, 4, 16, 3, bg) == ds);
  }
  CHECK(gen_shapes(5, 40, 4, 16) != gen_shapes(6, 40, 4, 16));
  CHECK_THROWS_AS(gen_shapes(1, 10, 7, 16), ConfigError);
  CHECK_THROWS_AS(gen_shapes(1, 10, 3, 8), ConfigError);
}

TEST_CASE("clutter textures do not depend on the label") {
  const auto ds = gen_shapes(8, 240, 4, 16, 3, ShapeBackground::Clutter);
  std::vector<std::vector<int>> seen(4, std::vector<int>(kNumTextures));
  for (const auto& ex : ds.examples) {
    REQUIRE(ex.background_id.has_value());
    ++seen[ex.label][*ex.background_id];
  }
  // Every class sees most textures.
  for (const auto& row : seen) {
    int distinct = 0;
    for (int v : row) distinct += v > 0;
    CHECK(distinct >= 5);
  }
}

TEST_CASE("spurious composition replaces only the background") {
  const auto ds = gen_shapes(2, 30, 3, 16);
  SpuriousSpec spec;
  spec.class_to_texture = {4, 0, 2};
  spec.fraction_spurious = 1.0;
  spec.seed = 11;
  const auto sp = compose_spurious(ds, spec);
  REQUIRE(sp.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.examples[i];
    const auto& b = sp.examples[i];
    CHECK(b.label == a.label);
    CHECK(b.background_id == spec.class_to_texture[a.label]);
    CHECK(b.object_mask == a.object_mask);
    bool bg_changed = false;
    for (std::size_t p = 0; p < 256; ++p)
      for (std::size_t c = 0; c < 3; ++c) {
        if (a.object_mask[p] == 1.0) CHECK(b.image[p * 3 + c] == a.image[p * 3 + c]);
        else bg_changed |= b.image[p * 3 + c] != a.image[p * 3 + c];
      }
    CHECK(bg_changed);
  }
  spec.fraction_spurious = 0.5;
  const auto half = compose_spurious(ds, spec);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) changed += half.examples[i].image != ds.examples[i].image;
  CHECK(changed == 15);
  spec.class_to_texture = {1, 1, 2};
  CHECK_THROWS_AS(compose_spurious(ds, spec), ConfigError);
  spec.class_to_texture = {1, 2};
  CHECK_THROWS_AS(compose_spurious(ds, spec), ConfigError);
}

TEST_CASE("label flips") {
  const auto ds = gen_shapes(3, 50, 5, 16);
  const auto flipped = flip_labels(ds, 0.2, 9);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(flipped.examples[i].image == ds.examples[i].image);
    CHECK(flipped.examples[i].label < 5);
    changed += flipped.examples[i].label != ds.examples[i].label;
  }
  CHECK(changed == 10);
  CHECK(flip_labels(ds, 0.2, 9) == flipped);
  CHECK(flip_labels(ds, 0.0, 9).examples == ds.examples);
  const auto at = flip_labels_at(ds, {0, 4}, 1);
  CHECK(at.examples[0].label != ds.examples[0].label);
  CHECK(at.examples[1].label == ds.examples[1].label);
  CHECK_THROWS_AS(flip_labels(ds, 1.5, 9), ConfigError);
  CHECK_THROWS_AS(flip_labels_at(ds, {50}, 1), ConfigError);
}

TEST_CASE("glyphs") {
  const auto ds = gen_glyphs(4, 40, 16);
  ds.validate();
  CHECK(ds.num_classes == 10);
  CHECK(ds.input_shape() == Shape{16, 16, 1});
  std::vector<int> counts(10);
  for (const auto& ex : ds.examples) ++counts[ex.label];
  for (int c : counts) CHECK(c == 4);
  CHECK(gen_glyphs(4, 40, 16, 3).input_shape() == Shape{16, 16, 3});
  // Distinct digits render differently.
  CHECK(ds.examples[0].image != ds.examples[1].image);
}

TEST_CASE("provenance replay rebuilds every generator and mutation") {
  SpuriousSpec spec;
  spec.class_to_texture = {1, 3, 5};
  spec.fraction_spurious = 0.7;
  spec.seed = 4;
  const auto neutral = gen_shapes(12, 24, 3, 16);
  const auto mutated = flip_labels(compose_spurious(neutral, spec), 0.25, 8);
  CHECK(replay_provenance(mutated.provenance) == mutated);
  const auto clutter = gen_shapes(13, 24, 3, 16, 1, ShapeBackground::Clutter);
  CHECK(replay_provenance(clutter.provenance) == clutter);
  const auto glyphs = flip_labels(gen_glyphs(14, 30, 16, 3), 0.1, 2);
  CHECK(replay_provenance(glyphs.provenance) == glyphs);
  CHECK_THROWS_AS(replay_provenance(Provenance{}), ConfigError);
}

TEST_CASE("dataset container round trip") {
  const auto ds = flip_labels(gen_shapes(21, 12, 3, 16, 3, ShapeBackground::Clutter), 0.25, 1);
  const auto bytes = serialize_dataset(ds);
  CHECK(deserialize_dataset(bytes) == ds);
  CHECK(serialize_dataset(deserialize_dataset(bytes)) == bytes);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_dataset(bad), FormatError);
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(deserialize_dataset(longer), FormatError);
  auto shorter = bytes;
  shorter.resize(bytes.size() - 3);
  CHECK_THROWS_AS(deserialize_dataset(shorter), FormatError);
}
