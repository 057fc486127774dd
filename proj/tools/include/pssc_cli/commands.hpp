#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pssc/metrics.hpp"
#include "pssc/netcore.hpp"
#include "pssc_cli/run_config.hpp"

namespace pssc::cli {

/// Values given on the command line; set fields replace the config's.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> distance;
  std::optional<double> tpl_threshold;
  std::optional<int> segments;
  std::optional<int> min_active;
  std::optional<std::string> checkpoint;
  std::optional<std::string> dataset;  // .npz (DSprites) or a procedural spec JSON
};

void apply_overrides(RunConfig& config, const Overrides& o);

/// TPL exactly as eval, rank and traverse compute it (stream "tpl" of the
/// run seed).
TplReport evaluate_tpl(const ModelBundle& bundle, const MetricConfig& metrics, std::uint64_t seed);

/// Dims sorted by descending tpl_i; ties keep ascending dim order.
std::vector<int> order_by_tpl(const std::vector<int>& dims, const TplReport& report);

struct EditImages {
  Tensor<float> source_code, donor_code, result_code;  // [1,d]
  Tensor<float> source, donor, result;                 // [1,C,H,W]
};
EditImages edit_images(const ModelBundle& bundle, std::uint64_t source_seed, std::uint64_t donor_seed,
                       const std::vector<int>& dims);

int cmd_train(const RunConfig& config, const std::string& resume_from, std::ostream& log);
int cmd_eval(const RunConfig& config, std::ostream& log);
int cmd_rank(const RunConfig& config, const std::string& models_dir, std::ostream& log);
int cmd_traverse(const RunConfig& config, std::ostream& log);
int cmd_edit(const RunConfig& config, std::ostream& log);
int cmd_rotate_sweep(const RunConfig& config, std::ostream& log);

/// Full command-line entry point; returns the process exit code
/// (0 success, 1 runtime failure, 2 usage or configuration error).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pssc::cli
