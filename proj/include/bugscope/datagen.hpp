#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bugscope/dataset.hpp"

namespace bugscope {

// Shape classes drawn by gen_shapes, in label order.
inline constexpr std::size_t kMaxShapeClasses = 6;  // disc, cross, triangle, ring, square, bar

inline constexpr std::size_t kNumTextures = 6;

// Neutral: low-contrast value noise. Clutter: a grating texture drawn
// uniformly per example, independent of the label.
enum class ShapeBackground { Neutral, Clutter };

std::string to_string(ShapeBackground b);
ShapeBackground shape_background_from_string(const std::string& s);

// Procedural objects on a background. Labels are balanced to within one
// example; each example carries its exact object mask and the background
// render. Images are size x size x channels in [0, 1].
LabeledDataset gen_shapes(std::uint64_t seed, std::size_t n, std::size_t classes,
                          std::size_t image_size, std::size_t channels = 3,
                          ShapeBackground background = ShapeBackground::Neutral);

struct SpuriousSpec {
  std::vector<std::size_t> class_to_texture;  // texture id per class, all distinct
  double fraction_spurious = 1.0;
  std::uint64_t seed = 0;

  void validate(std::size_t num_classes) const;
};

// Full-frame grating texture. The id fixes orientation, frequency and colors;
// `phase_seed` jitters the phase so the class signal is the texture, not a
// fixed pixel pattern.
Tensor render_texture(std::size_t texture_id, std::size_t height, std::size_t width,
                      std::size_t channels, std::uint64_t phase_seed);

// Replaces the background (mask == 0) of a seeded fraction of examples with the
// class-mapped texture. Object pixels are copied unchanged.
LabeledDataset compose_spurious(const LabeledDataset& ds, const SpuriousSpec& spec);
// Same, on an explicit index set.
LabeledDataset compose_spurious_at(const LabeledDataset& ds, const SpuriousSpec& spec,
                                   const std::vector<std::size_t>& indices);

// Gives exactly round(fraction * n) examples a different label drawn uniformly
// from the other classes.
LabeledDataset flip_labels(const LabeledDataset& ds, double fraction, std::uint64_t seed);
LabeledDataset flip_labels_at(const LabeledDataset& ds, const std::vector<std::size_t>& indices,
                              std::uint64_t seed);

// 1 on background pixels, 0 on object pixels.
Tensor gt1_mask(const ImageExample& ex);

// The example's image with the object removed (mask pixels filled from the
// background layer).
Tensor strip_object(const ImageExample& ex);

// Grayscale datasets become `channels`-channel by replication.
LabeledDataset replicate_channels(const LabeledDataset& ds, std::size_t channels);

// Rebuilds a dataset from its provenance record by re-running the base
// generator and every recorded mutation in order.
LabeledDataset replay_provenance(const Provenance& provenance);

// ---- IDX ----------------------------------------------------------------

struct IdxImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
  std::size_t count() const { return rows && cols ? pixels.size() / (rows * cols) : 0; }
};

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);
IdxImages decode_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> decode_idx_labels(std::span<const std::uint8_t> bytes);

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const IdxImages& images, std::span<const std::uint8_t> labels);

// Parses an IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian
// header). Pixels are scaled by 1/255; masks are all ones. `channels` > 1
// replicates the gray channel.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t channels = 1);

// Same conversion from in-memory IDX data (no provenance entry).
LabeledDataset idx_to_dataset(const IdxImages& images, std::span<const std::uint8_t> labels,
                              std::size_t channels = 1);

// Seven-segment style digit glyphs with jittered stroke and position, the
// in-repo stand-in for a digit corpus. Labels 0-9, balanced.
void gen_glyph_idx(std::uint64_t seed, std::size_t n, std::size_t image_size, IdxImages& images,
                   std::vector<std::uint8_t>& labels);
// The glyph set as a 10-class dataset.
LabeledDataset gen_glyphs(std::uint64_t seed, std::size_t n, std::size_t image_size,
                          std::size_t channels = 1);

// ---- dataset container ----------------------------------------------------

// "BSDS", u32 version, u64 classes, u32 split, str generator, u64 seed,
// str provenance JSON, u64 count, then per example: u64 label, tensor image,
// tensor mask, u8 has_background [tensor], u8 has_background_id [u64].
std::vector<std::uint8_t> serialize_dataset(const LabeledDataset& ds);
LabeledDataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace bugscope
