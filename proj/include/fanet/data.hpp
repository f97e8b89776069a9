#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fanet/image_io.hpp"
#include "fanet/tensor.hpp"

namespace fanet {

enum class Split { kTrain, kVal, kTest, kAll };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Sample {
  std::filesystem::path path;
  std::size_t label = 0;
};

/// Labeled samples from a `root/<ClassName>/*.{png,jpg,jpeg,pgm,fant}` tree.
/// `.fant` samples are precomputed 1 x H x W x C feature maps.
struct DatasetIndex {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;  // lexicographic
  Split split = Split::kAll;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t size() const { return samples.size(); }
};

/// Called for recoverable issues such as an empty class directory.
using WarningSink = std::function<void(const std::string&)>;

/// Deterministic: classes and samples are sorted lexicographically.
/// Throws DataError when the root is missing or holds no class directories.
DatasetIndex index_dataset(const std::filesystem::path& root,
                           const WarningSink& warn = {});

/// Skip-with-warning mode: keeps only samples that decode.
DatasetIndex drop_undecodable(const DatasetIndex& index, const WarningSink& warn);

/// Stratified split. Per class: seeded shuffle, then the first
/// round(fraction * count) samples (at least 1) go to validation.
std::pair<DatasetIndex, DatasetIndex> split_validation(const DatasetIndex& index,
                                                       double fraction,
                                                       std::uint64_t seed);

/// CSV `path,class,split`.
void write_split_manifest(const std::filesystem::path& file,
                          const std::vector<const DatasetIndex*>& parts);
/// Reads a manifest; keeps rows whose split matches (kAll keeps every row).
/// Class names must match `class_names` when given.
DatasetIndex read_split_manifest(const std::filesystem::path& file, Split which,
                                 const std::vector<std::string>& class_names);

/// H x W x C (C = 1 or 3) bilinear resize using pixel-center alignment
/// (src = (dst + 0.5) * in/out - 0.5, clamped at the borders).
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// True for `.fant` feature-map samples.
bool is_feature_file(const std::filesystem::path& path);

/// Decode, replicate grayscale to 3 channels, resize, keep values in [0,1].
/// Returns H x W x 3.
Tensor load_and_preprocess(const std::filesystem::path& path, std::size_t height,
                           std::size_t width);

struct AugmentConfig {
  double rotation_deg = 15.0;  // uniform in [-r, r]
  double shift = 0.10;         // fraction of extent, per axis
  double flip_prob = 0.5;      // horizontal
  double zoom = 0.10;          // scale in [1 - z, 1 + z]
  std::uint64_t seed = 0;

  void validate() const;
};

/// Concrete draw of the random transform.
struct AugmentDraw {
  double rotation_deg = 0.0;
  double shift_y = 0.0;  // fraction of height
  double shift_x = 0.0;
  double zoom = 1.0;
  bool flip = false;
};

AugmentDraw draw_augmentation(const AugmentConfig& cfg, std::uint64_t stream_seed);

/// Rotation about the image center (positive = counter-clockwise as
/// displayed), then shift, then zoom about the center, then horizontal flip.
/// Composed into one inverse map and resampled bilinearly; samples falling
/// outside the source are 0. Output is clamped to [0,1].
Tensor apply_augmentation(const Tensor& image, const AugmentDraw& draw);

/// Draws with a stream derived from (cfg.seed, stream keys) and applies.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::uint64_t stream_seed);

struct Batch {
  Tensor images;  // N x H x W x 3
  std::vector<std::size_t> labels;
  std::vector<std::size_t> sample_indices;  // positions in the index
};

/// Batch plans (sample positions). Shuffled with `seed` when present; the
/// last partial batch is kept.
std::vector<std::vector<std::size_t>> plan_batches(std::size_t count,
                                                   std::size_t batch_size,
                                                   std::optional<std::uint64_t> seed);

/// Loads preprocessed images (H x W x 3) or feature maps (H x W x C, no
/// resizing), optionally memoizing them.
class ImageLoader {
 public:
  ImageLoader(std::size_t height, std::size_t width, bool cache = true);

  Tensor load(const std::filesystem::path& path);
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

 private:
  std::size_t height_;
  std::size_t width_;
  bool cache_;
  std::map<std::filesystem::path, Tensor> memo_;
};

/// Iterates one epoch. Augmentation (when configured) runs only for image
/// samples of the train split, with an RNG stream per (epoch, sample index).
class BatchIterator {
 public:
  BatchIterator(const DatasetIndex& index, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed, ImageLoader& loader,
                std::optional<AugmentConfig> augment = std::nullopt,
                std::uint64_t epoch = 0);

  std::optional<Batch> next();
  std::size_t num_batches() const { return plans_.size(); }

 private:
  const DatasetIndex& index_;
  ImageLoader& loader_;
  std::optional<AugmentConfig> augment_;
  std::uint64_t epoch_;
  std::vector<std::vector<std::size_t>> plans_;
  std::size_t cursor_ = 0;
};

/// Stacks H x W x C tensors into N x H x W x C.
Tensor stack_images(const std::vector<Tensor>& images);

}  // namespace fanet
