#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pssc/data.hpp"
#include "pssc/distance.hpp"
#include "pssc/netcore.hpp"

namespace pssc {

/// codes [N,d] -> images [N,C,H,W].
using GeneratorFn = std::function<Tensor<double>(const Tensor<double>& codes)>;
/// images [N,C,H,W] in [-1,1] -> codes [N,k].
using EncoderFn = std::function<Tensor<double>(const Tensor<float>& images)>;

/// The returned callables refer to `bundle`, which must outlive them.
GeneratorFn bundle_generator(const ModelBundle& bundle);
EncoderFn bundle_encoder(const ModelBundle& bundle);

struct TplOptions {
  int segments = 50;        // N
  double threshold = 0.01;  // S
  int num_base = 16;
  double lo = -4.0;
  double hi = 4.0;
};

struct TplReport {
  std::vector<double> tpl_per_dim;
  std::vector<bool> active;
  double tpl_total = 0;
  int num_active = 0;
  double threshold = 0;
  int segments = 0;
  int num_base = 0;
};

/// Mean over `num_base` prior draws of the summed distance between
/// consecutive points of an N-segment traversal of dimension `dim` over
/// [lo, hi] (step (hi-lo)/N, last point at hi).
double tpl_dim(const GeneratorFn& gen, int latent_dim, int dim, const PerceptualDistance& dist,
               const TplOptions& opts, RngStream& rng);

/// tpl_i for every dimension; dimension i is active iff tpl_i >= S.
TplReport tpl_total(const GeneratorFn& gen, int latent_dim, const PerceptualDistance& dist, const TplOptions& opts,
                    RngStream& rng);

/// Accumulated distance over an N x N grid on [lo,hi)^2 of dims (i, j),
/// comparing R(alpha)(u, v) with R(alpha)(u + step, v); other dims are 0.
std::vector<double> dis_cum_sweep(const GeneratorFn& gen, int latent_dim, int dim_i, int dim_j,
                                  const PerceptualDistance& dist, int segments, const std::vector<double>& alphas_deg,
                                  double lo = -4.0, double hi = 4.0);

/// alpha grid from `first` to `last` inclusive in `step` degree increments.
std::vector<double> alpha_range(double first, double last, double step);

/// Indices of strict local minima of a curve sampled on a full circle
/// (neighbours wrap around).
std::vector<std::size_t> circular_local_minima(const std::vector<double>& curve);

/// Mean of dis(G(lerp(a,b,t)), G(lerp(a,b,t+eps))) / eps^2 over prior pairs
/// with t ~ U[0,1).
double ppl(const GeneratorFn& gen, int latent_dim, const PerceptualDistance& dist, int num_pairs, double epsilon,
           RngStream& rng);

struct FvmOptions {
  int train_votes = 800;
  int eval_votes = 200;
  int batch_size = 64;
  int global_samples = 10000;
  double collapse_ratio = 1e-4;
};

struct FvmReport {
  double accuracy = 0;
  double train_accuracy = 0;
  std::vector<int> dim_to_factor;  // majority-vote classifier, -1 if excluded
  std::vector<bool> active_dims;
};

/// FactorVAE metric. Throws UnsupportedOperation without factor metadata.
FvmReport factorvae_metric(const EncoderFn& encoder, const FactorDataset& dataset, const FvmOptions& opts,
                           RngStream& rng);

/// Spearman rank correlation with average ranks for ties. Returns NaN when
/// either input has no rank variance.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct RankRow {
  std::string model_dir;
  double tpl_total = 0;
  int num_active = 0;
  std::vector<double> tpl_per_dim;
  std::string status;  // "ok", "filtered", or "error: ..."
  int rank = 0;        // 1-based; 0 when excluded
};

/// TPL for every checkpoint (common random numbers from `seed`). Models with
/// num_active <= min_active are filtered; unloadable ones get an error
/// status. Ranked rows come first, ascending by tpl_total.
std::vector<RankRow> rank_models(const std::vector<std::string>& checkpoint_dirs, const DistanceConfig& dist,
                                 const TplOptions& opts, int min_active, std::uint64_t seed);

std::string ranking_csv(const std::vector<RankRow>& rows);
std::string sweep_csv(const std::vector<double>& alphas_deg, const std::vector<double>& values);

}  // namespace pssc
