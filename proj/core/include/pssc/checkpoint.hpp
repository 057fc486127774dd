#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pssc/netcore.hpp"

namespace pssc {

/// Everything a checkpoint directory can hold. Only `bundle` is required;
/// optimizer tables, RNG states and the training config are present for
/// trainer checkpoints and absent for inference-only bundles.
struct CheckpointContents {
  ModelBundle bundle;
  /// Extra tables keyed by group name (e.g. "adam_m.generator"). Each must
  /// mirror the shapes of the model group named after the first dot.
  std::map<std::string, ParameterTable<float>> extra_tables;
  std::map<std::string, std::string> rng_states;
  long step = 0;
  long images_seen = 0;
  std::uint64_t seed = 0;
  /// Opaque JSON text; empty when absent.
  std::string train_config_json;
  /// Opaque JSON text for extra scalar state; empty when absent.
  std::string extra_state_json;
};

/// Writes `manifest.json` plus one little-endian float32 row-major `.bin`
/// file per tensor. The directory is replaced atomically.
void write_checkpoint(const std::string& dir, const CheckpointContents& contents);

/// Reads and validates a checkpoint. Parameter names and shapes must match
/// what the manifest's architecture implies; otherwise IncompatibleCheckpoint.
/// Missing or truncated files raise IoError.
CheckpointContents read_checkpoint(const std::string& dir);

/// Inference-only helpers.
void save_bundle(const ModelBundle& bundle, const std::string& dir);
ModelBundle load_bundle(const std::string& dir);

/// Throws IncompatibleCheckpoint naming every field that differs.
void require_compatible(const ArchConfig& expected, const ArchConfig& found);

/// Raw tensor files: little-endian float32, row-major, no header.
void write_raw_f32(const std::string& path, const Tensor<float>& t);
Tensor<float> read_raw_f32(const std::string& path, const Shape& shape);

}  // namespace pssc
