#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pssc/autograd.hpp"

namespace pssc {

enum class DistanceKind { pixel_l1, pixel_l2, random_features, learned_features };
std::string to_string(DistanceKind k);
DistanceKind parse_distance_kind(const std::string& s);

struct DistanceConfig {
  DistanceKind kind = DistanceKind::pixel_l1;
  /// Seed of the random_features stack.
  std::uint64_t seed = 0;
  /// Directory with learned feature weights (learned_features only).
  std::string weights_path;
  int image_channels = 1;
};

/// Image distance backends. Pixel backends are the mean absolute
/// difference (l1) and the root-mean-square difference (l2); feature
/// backends are the root-mean-square difference of conv-stack features.
/// All are symmetric, non-negative and zero on identical inputs.
class PerceptualDistance {
 public:
  PerceptualDistance() : PerceptualDistance(DistanceConfig{}) {}
  explicit PerceptualDistance(const DistanceConfig& config);

  DistanceKind kind() const noexcept { return config_.kind; }
  const DistanceConfig& config() const noexcept { return config_; }

  /// Row-wise distances between equally shaped batches [N,C,H,W].
  std::vector<double> batch(const Tensor<double>& a, const Tensor<double>& b) const;
  /// Distance between two single images ([C,H,W] or [1,C,H,W]).
  double operator()(const Tensor<double>& a, const Tensor<double>& b) const;

 private:
  Tensor<double> features(const Tensor<double>& images) const;

  DistanceConfig config_;
  ParameterTable<double> net_;
  int num_layers_ = 0;
};

double random_features_distance(const Tensor<double>& a, const Tensor<double>& b, std::uint64_t seed);

/// Seeded, untrained feature stack: conv3x3 -> leaky ReLU -> 2x average
/// pool, twice (8 then 16 channels). Names "conv{i}.weight" / "conv{i}.bias".
ParameterTable<float> random_feature_weights(int image_channels, std::uint64_t seed);

/// Feature weights on disk: `manifest.json` listing tensors plus raw
/// little-endian float32 files, as in checkpoints.
void save_feature_weights(const ParameterTable<float>& weights, const std::string& dir);
ParameterTable<float> load_feature_weights(const std::string& dir);

}  // namespace pssc
