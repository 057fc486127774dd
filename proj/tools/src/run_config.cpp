#include "pssc_cli/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pssc/error.hpp"

namespace pssc::cli {
namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw UsageError("'" + section + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw UsageError("unknown key '" + key + "' in " + section);
  }
}

std::optional<std::vector<int>> dims_from_json(const json& j) {
  if (j.is_string()) return parse_dims(j.get<std::string>());
  return j.get<std::vector<int>>();
}

DatasetConfig parse_dataset(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw UsageError("dataset needs a 'kind' (procedural or dsprites)");
  DatasetConfig d;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "procedural") {
    d.kind = DatasetConfig::Kind::procedural;
    json spec = j;
    spec.erase("kind");
    try {
      d.procedural = procedural_spec_from_json(spec.dump());
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("dataset: ") + e.what());
    }
  } else if (kind == "dsprites") {
    check_keys(j, "dataset", {"kind", "path"});
    d.kind = DatasetConfig::Kind::dsprites;
    d.path = j.at("path").get<std::string>();
  } else {
    throw UsageError("unknown dataset kind '" + kind + "'");
  }
  return d;
}

MetricConfig parse_metrics(const json& j) {
  check_keys(j, "metrics",
             {"distance", "distance_seed", "feature_weights", "tpl_threshold", "segments", "num_base", "lo", "hi",
              "min_active", "ppl_pairs", "ppl_epsilon", "fvm"});
  MetricConfig m;
  if (j.contains("distance")) m.distance.kind = parse_distance_kind(j["distance"].get<std::string>());
  if (j.contains("distance_seed")) m.distance.seed = j["distance_seed"].get<std::uint64_t>();
  if (j.contains("feature_weights")) m.distance.weights_path = j["feature_weights"].get<std::string>();
  if (j.contains("tpl_threshold")) m.tpl.threshold = j["tpl_threshold"].get<double>();
  if (j.contains("segments")) m.tpl.segments = j["segments"].get<int>();
  if (j.contains("num_base")) m.tpl.num_base = j["num_base"].get<int>();
  if (j.contains("lo")) m.tpl.lo = j["lo"].get<double>();
  if (j.contains("hi")) m.tpl.hi = j["hi"].get<double>();
  if (j.contains("min_active")) m.min_active = j["min_active"].get<int>();
  if (j.contains("ppl_pairs")) m.ppl_pairs = j["ppl_pairs"].get<int>();
  if (j.contains("ppl_epsilon")) m.ppl_epsilon = j["ppl_epsilon"].get<double>();
  if (j.contains("fvm")) {
    const json& f = j["fvm"];
    check_keys(f, "metrics.fvm", {"train_votes", "eval_votes", "batch_size", "global_samples", "collapse_ratio"});
    if (f.contains("train_votes")) m.fvm.train_votes = f["train_votes"].get<int>();
    if (f.contains("eval_votes")) m.fvm.eval_votes = f["eval_votes"].get<int>();
    if (f.contains("batch_size")) m.fvm.batch_size = f["batch_size"].get<int>();
    if (f.contains("global_samples")) m.fvm.global_samples = f["global_samples"].get<int>();
    if (f.contains("collapse_ratio")) m.fvm.collapse_ratio = f["collapse_ratio"].get<double>();
  }
  return m;
}

TraverseConfig parse_traverse(const json& j) {
  check_keys(j, "traverse", {"dims", "steps", "lo", "hi", "gif", "masks"});
  TraverseConfig t;
  if (j.contains("dims")) t.dims = dims_from_json(j["dims"]);
  if (j.contains("steps")) t.steps = j["steps"].get<int>();
  if (j.contains("lo")) t.lo = j["lo"].get<double>();
  if (j.contains("hi")) t.hi = j["hi"].get<double>();
  if (j.contains("gif")) t.gif = j["gif"].get<bool>();
  if (j.contains("masks")) t.masks = j["masks"].get<bool>();
  return t;
}

EditConfig parse_edit(const json& j) {
  check_keys(j, "edit", {"source_seed", "donor_seed", "dims"});
  EditConfig e;
  if (j.contains("source_seed")) e.source_seed = j["source_seed"].get<std::uint64_t>();
  if (j.contains("donor_seed")) e.donor_seed = j["donor_seed"].get<std::uint64_t>();
  if (j.contains("dims")) e.dims = dims_from_json(j["dims"]);
  return e;
}

SweepConfig parse_sweep(const json& j) {
  check_keys(j, "sweep", {"dims", "alpha_first", "alpha_last", "alpha_step", "segments"});
  SweepConfig s;
  if (j.contains("dims")) {
    auto d = j["dims"].get<std::vector<int>>();
    if (d.size() != 2) throw UsageError("sweep.dims must list exactly two dimensions");
    s.dim_i = d[0];
    s.dim_j = d[1];
  }
  if (j.contains("alpha_first")) s.alpha_first = j["alpha_first"].get<double>();
  if (j.contains("alpha_last")) s.alpha_last = j["alpha_last"].get<double>();
  if (j.contains("alpha_step")) s.alpha_step = j["alpha_step"].get<double>();
  if (j.contains("segments")) s.segments = j["segments"].get<int>();
  return s;
}

void validate(const RunConfig& c) {
  const auto& t = c.metrics.tpl;
  if (t.segments < 2) throw UsageError("segments must be >= 2");
  if (!(t.threshold >= 0)) throw UsageError("tpl_threshold must be >= 0");
  if (t.num_base < 1) throw UsageError("num_base must be >= 1");
  if (!(t.hi > t.lo)) throw UsageError("metrics.hi must exceed metrics.lo");
  if (c.metrics.min_active < 0) throw UsageError("min_active must be >= 0");
  if (c.metrics.ppl_pairs < 1 || !(c.metrics.ppl_epsilon > 0)) {
    throw UsageError("ppl_pairs must be >= 1 and ppl_epsilon > 0");
  }
  if (c.traverse.steps < 2) throw UsageError("traverse.steps must be >= 2");
  if (!(c.traverse.hi > c.traverse.lo)) throw UsageError("traverse.hi must exceed traverse.lo");
  if (!(c.sweep.alpha_step > 0) || c.sweep.alpha_last < c.sweep.alpha_first) {
    throw UsageError("sweep needs alpha_step > 0 and alpha_last >= alpha_first");
  }
  if (c.sweep.segments && *c.sweep.segments < 1) throw UsageError("sweep.segments must be >= 1");
  if (c.sweep.dim_i == c.sweep.dim_j) throw UsageError("sweep dims must differ");
}

}  // namespace

std::optional<std::vector<int>> parse_dims(const std::string& text) {
  if (text == "all") return std::nullopt;
  std::vector<int> dims;
  if (text.empty() || text == "none") return dims;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      dims.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad dimension list '" + text + "' (expected all, none or e.g. 0,3,5)");
    }
  }
  return dims;
}

std::vector<int> resolve_dims(const std::optional<std::vector<int>>& dims, int latent_dim) {
  std::vector<int> out;
  if (!dims) {
    for (int i = 0; i < latent_dim; ++i) out.push_back(i);
    return out;
  }
  for (int d : *dims) {
    if (d < 0 || d >= latent_dim) {
      throw UsageError("dimension " + std::to_string(d) + " out of range for latent_dim " + std::to_string(latent_dim));
    }
    out.push_back(d);
  }
  return out;
}

RunConfig parse_run_config(const std::string& text) {
  try {
    const json j = json::parse(text);
    check_keys(j, "config",
               {"train", "dataset", "metrics", "traverse", "edit", "sweep", "checkpoint", "out", "seed"});
    RunConfig c;
    if (j.contains("train")) {
      try {
        c.train = train_config_from_json(j["train"].dump());
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("train: ") + e.what());
      }
    }
    if (j.contains("dataset")) c.dataset = parse_dataset(j["dataset"]);
    if (j.contains("metrics")) c.metrics = parse_metrics(j["metrics"]);
    if (j.contains("traverse")) c.traverse = parse_traverse(j["traverse"]);
    if (j.contains("edit")) c.edit = parse_edit(j["edit"]);
    if (j.contains("sweep")) c.sweep = parse_sweep(j["sweep"]);
    if (j.contains("checkpoint")) c.checkpoint = j["checkpoint"].get<std::string>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

FactorDataset load_dataset(const DatasetConfig& config) {
  switch (config.kind) {
    case DatasetConfig::Kind::procedural:
      return make_procedural_dataset(config.procedural);
    case DatasetConfig::Kind::dsprites:
      return load_dsprites(config.path);
    case DatasetConfig::Kind::none:
      break;
  }
  throw UsageError("this command needs a 'dataset' section");
}

}  // namespace pssc::cli
