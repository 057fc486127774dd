#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pssc/data.hpp"
#include "pssc/distance.hpp"
#include "pssc/metrics.hpp"
#include "pssc/train.hpp"

namespace pssc::cli {

/// Bad command line or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  enum class Kind { none, procedural, dsprites } kind = Kind::none;
  ProceduralSpec procedural;
  std::string path;  // dsprites NPZ
};

struct MetricConfig {
  DistanceConfig distance;
  TplOptions tpl;
  int min_active = 0;
  int ppl_pairs = 64;
  double ppl_epsilon = 1e-4;
  FvmOptions fvm;
};

struct TraverseConfig {
  std::optional<std::vector<int>> dims;  // all dims when unset
  int steps = 9;
  double lo = -4.0;
  double hi = 4.0;
  bool gif = false;
  bool masks = true;
};

struct EditConfig {
  std::uint64_t source_seed = 1;
  std::uint64_t donor_seed = 2;
  std::optional<std::vector<int>> dims;
};

struct SweepConfig {
  int dim_i = 0;
  int dim_j = 1;
  double alpha_first = -180.0;
  double alpha_last = 180.0;
  double alpha_step = 5.0;
  std::optional<int> segments;  // metrics.segments when unset
};

/// One experiment document. Every section is optional; commands check what
/// they need.
struct RunConfig {
  std::optional<TrainConfig> train;
  DatasetConfig dataset;
  MetricConfig metrics;
  TraverseConfig traverse;
  EditConfig edit;
  SweepConfig sweep;
  std::string checkpoint;  // model for eval / traverse / edit / rotate-sweep
  std::string out;
  std::uint64_t seed = 0;
};

/// Parses and validates; throws UsageError naming the offending key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// "all" -> nullopt, "none" or "" -> {}, otherwise comma-separated ints.
std::optional<std::vector<int>> parse_dims(const std::string& text);
std::vector<int> resolve_dims(const std::optional<std::vector<int>>& dims, int latent_dim);

FactorDataset load_dataset(const DatasetConfig& config);

}  // namespace pssc::cli
