#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pssc/rng.hpp"
#include "pssc/tensor.hpp"

namespace pssc {

/// Image corpus stored as 8-bit pixels (0 maps to -1, 255 to +1) in
/// N x C x H x W order, optionally with integer ground-truth factors.
class FactorDataset {
 public:
  FactorDataset() = default;
  FactorDataset(int channels, int height, int width, std::vector<std::uint8_t> pixels);
  /// With factor metadata; `factor_values` is N x F row-major.
  FactorDataset(int channels, int height, int width, std::vector<std::uint8_t> pixels,
                std::vector<std::string> factor_names, std::vector<int> factor_sizes,
                std::vector<std::int32_t> factor_values);

  int size() const noexcept { return num_images_; }
  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool has_factors() const noexcept { return !factor_sizes_.empty(); }
  int num_factors() const noexcept { return static_cast<int>(factor_sizes_.size()); }
  const std::vector<int>& factor_sizes() const noexcept { return factor_sizes_; }
  const std::vector<std::string>& factor_names() const noexcept { return factor_names_; }
  const std::vector<std::uint8_t>& pixels() const noexcept { return pixels_; }

  int factor_value(int image, int factor) const;
  /// Index of the image with exactly these factor values, or -1.
  int find(const std::vector<int>& values) const;

  /// Images at `indices` as floats in [-1,1], shape [B,C,H,W].
  Tensor<float> images(const std::vector<int>& indices) const;

 private:
  int num_images_ = 0, channels_ = 0, height_ = 0, width_ = 0;
  std::vector<std::uint8_t> pixels_;
  std::vector<std::string> factor_names_;
  std::vector<int> factor_sizes_;
  std::vector<std::int32_t> factor_values_;
  std::vector<std::int32_t> lookup_;  // mixed-radix factor code -> image index
};

/// Loads the published DSprites NPZ (`imgs` uint8 N x 64 x 64 with values
/// {0,1}, `latents_classes` int64 N x 6 whose first column is constant).
FactorDataset load_dsprites(const std::string& path);

struct FactorSpec {
  std::string name;
  int size = 1;
};

/// Procedural filled-rectangle renderer. Known factor names: x_position,
/// y_position, scale, intensity, aspect, background. Factors not listed keep
/// a fixed mid value.
struct ProceduralSpec {
  std::vector<FactorSpec> factors;
  int image_size = 64;
  std::uint64_t seed = 0;
  /// Upper bound on the grid size (number of images).
  long max_images = 1L << 20;
};

ProceduralSpec procedural_spec_from_json(const std::string& text);
std::string procedural_spec_to_json(const ProceduralSpec& spec);
FactorDataset make_procedural_dataset(const ProceduralSpec& spec);

/// Uniform with replacement. Throws std::invalid_argument on an empty dataset.
std::vector<int> sample_indices(const FactorDataset& dataset, int batch_size, RngStream& rng);
Tensor<float> sample_batch(const FactorDataset& dataset, int batch_size, RngStream& rng);

struct FixedFactorBatch {
  Tensor<float> images;
  std::vector<int> indices;
  int fixed_value = 0;
};

/// Draws one value of `factor_index` uniformly, then `batch_size` images
/// sharing it with every other factor drawn uniformly.
/// Throws UnsupportedOperation without factor metadata.
FixedFactorBatch fix_factor_batch(const FactorDataset& dataset, int factor_index, RngStream& rng, int batch_size);

}  // namespace pssc
