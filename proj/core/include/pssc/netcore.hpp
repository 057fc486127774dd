#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pssc/autograd.hpp"
#include "pssc/rng.hpp"

namespace pssc {

enum class MaskMode { sc, softmax, none };

/// What produces images. `network` is the trainable model; the others are
/// analytic fixtures with no parameters, used to pin metrics to closed forms.
enum class ModelKind { network, block_oracle, constant };

/// Image -> code map used when the bundle is evaluated as an encoder.
/// `moment` reads blob statistics (centroid, extent, levels) off the image.
enum class EncoderKind { network, moment };

std::string to_string(MaskMode m);
std::string to_string(ModelKind k);
std::string to_string(EncoderKind k);
MaskMode parse_mask_mode(const std::string& s);
ModelKind parse_model_kind(const std::string& s);
EncoderKind parse_encoder_kind(const std::string& s);

struct ArchConfig {
  ModelKind kind = ModelKind::network;
  EncoderKind encoder = EncoderKind::network;
  int latent_dim = 10;
  int num_rects = 6;
  MaskMode mask_mode = MaskMode::sc;
  int resolution = 64;
  int image_channels = 1;
  int base_channels = 64;
  std::vector<int> g_channels{32, 16, 8, 4};  // one entry per 2x upsample stage
  std::vector<int> d_channels{4, 8, 16, 32};  // one entry per 2x downsample stage (D and Q)
  int head_width = 64;
  double oracle_rotation_deg = 0.0;
  double constant_value = 0.0;

  int num_stages() const { return static_cast<int>(g_channels.size()); }
  /// Stage whose SC block receives latent dimension `dim` (round-robin).
  int block_stage(int dim) const { return dim % num_stages(); }
  /// Spatial size of the feature map at generator stage `stage`.
  int stage_resolution(int stage) const { return 8 << stage; }
  void validate() const;

  bool operator==(const ArchConfig&) const = default;
};

std::string arch_to_json(const ArchConfig& arch);
/// Parses the JSON object written by arch_to_json; unknown keys are rejected.
ArchConfig arch_from_json(const std::string& text);

struct ModelBundle {
  ArchConfig arch;
  ParameterTable<float> generator;
  ParameterTable<float> discriminator;
  ParameterTable<float> recognizer;
};

/// Fresh parameters drawn from `rng` (weights N(0,1) with runtime gain).
ModelBundle init_bundle(const ArchConfig& arch, RngStream& rng);

struct ForwardOptions {
  /// Replace every SC mask with this constant (0 = closed, 1 = open).
  std::optional<double> forced_mask;
};

/// Binds named parameters onto a tape, either as trainable leaves (grads
/// flow into the table) or as frozen constants.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, ParameterTable<T>& table) : tape_(tape), mutable_(&table), view_(&table) {}
  ParamBinder(Tape<T>& tape, const ParameterTable<T>& table) : tape_(tape), view_(&table) {}

  Var<T> operator()(std::string_view name);
  Tape<T>& tape() { return tape_; }

 private:
  Tape<T>& tape_;
  ParameterTable<T>* mutable_ = nullptr;
  const ParameterTable<T>* view_;
};

/// Spatial-constriction block: gamma * (1 - Pi) + AdaIN(gamma, f(c)) * Pi,
/// with Pi the mean of J gated rectangles computed from avg-pooled gamma.
/// `code` is [N,1]. Optionally returns Pi ([N,H,W]).
template <typename T>
Var<T> sc_block(const ArchConfig& arch, ParamBinder<T>& params, const std::string& prefix, Var<T> gamma,
                Var<T> code, const ForwardOptions& opts = {}, Var<T>* mask_out = nullptr);

/// codes [N,d] -> images [N,C,R,R] in [-1,1]. `masks_out`, if given,
/// receives one Pi per latent dimension.
template <typename T>
Var<T> generator_forward(const ArchConfig& arch, ParamBinder<T>& params, Var<T> codes,
                         const ForwardOptions& opts = {}, std::vector<Var<T>>* masks_out = nullptr);
/// images -> logits [N,1]
template <typename T>
Var<T> discriminator_forward(const ArchConfig& arch, ParamBinder<T>& params, Var<T> images);
/// images -> reconstructed codes [N,d]
template <typename T>
Var<T> recognizer_forward(const ArchConfig& arch, ParamBinder<T>& params, Var<T> images);

/// Inference entry points on float parameters. Fixture kinds are evaluated
/// analytically. All throw std::invalid_argument on shape mismatches.
Tensor<float> generate(const ModelBundle& bundle, const Tensor<float>& codes, const ForwardOptions& opts = {});
/// As generate, but fixture kinds are evaluated in double precision so
/// metric oracles are not limited by float rounding.
Tensor<double> generate_f64(const ModelBundle& bundle, const Tensor<double>& codes, const ForwardOptions& opts = {});
/// Per-latent-dimension SC masks, each [N, r, r] at that block's resolution.
/// Fixture kinds and mask_mode none yield all-ones masks at full resolution.
std::vector<Tensor<float>> generate_masks(const ModelBundle& bundle, const Tensor<float>& codes);
/// One logit per image, shape [N].
Tensor<float> discriminate(const ModelBundle& bundle, const Tensor<float>& images);
/// Reconstructed codes [N,d].
Tensor<float> recognize(const ModelBundle& bundle, const Tensor<float>& images);

/// Blob statistics used by the moment encoder: centroid x/y, log size,
/// log aspect, foreground level and background level per image, [N,6].
Tensor<float> moment_features(const Tensor<float>& images);

}  // namespace pssc
