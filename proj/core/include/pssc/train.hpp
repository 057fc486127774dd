#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pssc/data.hpp"
#include "pssc/losses.hpp"
#include "pssc/netcore.hpp"

namespace pssc {

enum class PsMode { ps, info_mse, off };
std::string to_string(PsMode m);
PsMode parse_ps_mode(const std::string& s);

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
  ArchConfig arch;  // latent_dim (d), num_rects (J), mask_mode live here
  double lambda = 0.01;
  double p_var = 0.2;
  PsMode ps_mode = PsMode::ps;
  KSchedule k_schedule = KSchedule::sequential_1k;
  int batch_size = 32;
  long total_images = 100000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  /// Images between checkpoints; 0 writes only the final one.
  long checkpoint_every = 0;
  /// Training steps averaged into one metrics-log record.
  int log_every = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Flat JSON object: lambda, p_var, d, J, mask_mode, ps_mode, k_schedule,
/// batch_size, total_images, adam {lr, beta1, beta2, eps}, seed,
/// checkpoint_every, log_every, plus optional architecture keys
/// (resolution, base_channels, g_channels, d_channels, head_width).
std::string train_config_to_json(const TrainConfig& c);
/// Unknown keys are rejected with std::invalid_argument.
TrainConfig train_config_from_json(const std::string& text);

struct AdamState {
  ParameterTable<float> m;
  ParameterTable<float> v;
  long t = 0;
};

/// One Adam update from the gradients stored in `params`; clears them.
void adam_step(ParameterTable<float>& params, AdamState& state, const AdamConfig& cfg);

struct StepRecord {
  long step = 0;
  long images_seen = 0;
  double loss_d = 0;
  double loss_g = 0;
  double loss_ps = 0;
  double real_logit_mean = 0;
  double fake_logit_mean = 0;
  int k = -1;
};

struct TrainState {
  TrainConfig config;
  ModelBundle bundle;
  AdamState opt_g, opt_d, opt_q;
  long step = 0;
  long images_seen = 0;
  RngStream rng_codes;
  RngStream rng_perturb;
  RngStream rng_data;
  /// Running sums for the current metrics-log group.
  int group_steps = 0;
  double group_loss_d = 0, group_loss_g = 0, group_loss_ps = 0;
};

/// Fresh state: parameters from the "init" substream of config.seed.
TrainState init_train_state(const TrainConfig& config);

/// One discriminator update, then one joint generator + recognizer update
/// on L_GAN + lambda * L_PS (or the InfoGAN regression term). Throws
/// TrainingDiverged if any loss is non-finite.
StepRecord train_step(TrainState& state, const Tensor<float>& real_batch);

void save_train_state(const TrainState& state, const std::string& dir);
/// Throws IncompatibleCheckpoint if the directory holds no trainer state.
TrainState load_train_state(const std::string& dir);

struct LogRecord {
  long images_seen = 0;
  double loss_d = 0, loss_g = 0, loss_ps = 0;
};
std::string log_record_json(const LogRecord& r);

struct FitOptions {
  /// Output directory for checkpoints and metrics.jsonl; empty keeps
  /// everything in memory.
  std::string out_dir;
  /// Checkpoint directory to continue from.
  std::string resume_from;
  std::function<void(const StepRecord&)> on_step;
};

struct FitResult {
  ModelBundle bundle;
  std::vector<LogRecord> log;
  std::vector<StepRecord> steps;
};

/// Trains until config.total_images images have been seen. Writes
/// `<out>/checkpoints/images_<n>` every checkpoint_every images, `<out>/final`
/// at the end, and appends to `<out>/metrics.jsonl`.
FitResult fit(const TrainConfig& config, const FactorDataset& dataset, const FitOptions& options = {});

}  // namespace pssc
