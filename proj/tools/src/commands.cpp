#include "pssc_cli/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "json.hpp"
#include "pssc/checkpoint.hpp"
#include "pssc/error.hpp"
#include "pssc/image_io.hpp"

namespace fs = std::filesystem;

namespace pssc::cli {
namespace {

using json = nlohmann::json;

std::string require_out(const RunConfig& c) {
  if (c.out.empty()) throw UsageError("no output directory (set 'out' or pass --out)");
  fs::create_directories(c.out);
  return c.out;
}

std::string require_checkpoint(const RunConfig& c) {
  if (c.checkpoint.empty()) throw UsageError("no checkpoint given (positional argument or 'checkpoint' key)");
  return c.checkpoint;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot create " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

PerceptualDistance make_distance(const MetricConfig& m, const ModelBundle& bundle) {
  DistanceConfig dc = m.distance;
  dc.image_channels = bundle.arch.image_channels;
  return PerceptualDistance(dc);
}

Tensor<float> prior_code(int latent_dim, std::uint64_t seed, std::string_view stream) {
  RngStream rng = RngStream::derive(seed, stream);
  Tensor<float> c({1, latent_dim});
  for (int i = 0; i < latent_dim; ++i) c[static_cast<std::size_t>(i)] = static_cast<float>(rng.normal());
  return c;
}

Tensor<float> sample_slice(const Tensor<float>& batch, int index) {
  const int h = batch.dim(1), w = batch.dim(2);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  return Tensor<float>({h, w}, std::vector<float>(batch.data() + index * n, batch.data() + (index + 1) * n));
}

json tpl_json(const TplReport& r) {
  return {{"tpl_per_dim", r.tpl_per_dim}, {"active", r.active},       {"tpl_total", r.tpl_total},
          {"num_active", r.num_active},   {"threshold", r.threshold}, {"segments", r.segments},
          {"num_base", r.num_base}};
}

}  // namespace

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) {
    c.seed = *o.seed;
    if (c.train) c.train->seed = *o.seed;
  }
  if (o.out) c.out = *o.out;
  if (o.distance) {
    try {
      c.metrics.distance.kind = parse_distance_kind(*o.distance);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (o.tpl_threshold) {
    if (!(*o.tpl_threshold >= 0)) throw UsageError("--tpl-threshold must be >= 0");
    c.metrics.tpl.threshold = *o.tpl_threshold;
  }
  if (o.segments) {
    if (*o.segments < 2) throw UsageError("--segments must be >= 2");
    c.metrics.tpl.segments = *o.segments;
  }
  if (o.min_active) {
    if (*o.min_active < 0) throw UsageError("--min-active must be >= 0");
    c.metrics.min_active = *o.min_active;
  }
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.dataset) {
    const std::string& p = *o.dataset;
    if (fs::path(p).extension() == ".npz") {
      c.dataset.kind = DatasetConfig::Kind::dsprites;
      c.dataset.path = p;
    } else {
      std::ifstream in(p);
      if (!in) throw UsageError("cannot read dataset spec " + p);
      std::stringstream ss;
      ss << in.rdbuf();
      try {
        c.dataset.procedural = procedural_spec_from_json(ss.str());
      } catch (const std::exception& e) {
        throw UsageError("dataset spec " + p + ": " + e.what());
      }
      c.dataset.kind = DatasetConfig::Kind::procedural;
    }
  }
}

TplReport evaluate_tpl(const ModelBundle& bundle, const MetricConfig& metrics, std::uint64_t seed) {
  const PerceptualDistance dist = make_distance(metrics, bundle);
  RngStream rng = RngStream::derive(seed, "tpl");
  return tpl_total(bundle_generator(bundle), bundle.arch.latent_dim, dist, metrics.tpl, rng);
}

std::vector<int> order_by_tpl(const std::vector<int>& dims, const TplReport& report) {
  std::vector<int> out = dims;
  std::stable_sort(out.begin(), out.end(), [&](int a, int b) {
    return report.tpl_per_dim[static_cast<std::size_t>(a)] > report.tpl_per_dim[static_cast<std::size_t>(b)];
  });
  return out;
}

EditImages edit_images(const ModelBundle& bundle, std::uint64_t source_seed, std::uint64_t donor_seed,
                       const std::vector<int>& dims) {
  const int d = bundle.arch.latent_dim;
  EditImages e;
  e.source_code = prior_code(d, source_seed, "edit");
  e.donor_code = prior_code(d, donor_seed, "edit");
  e.result_code = e.source_code;
  for (int k : resolve_dims(dims, d)) e.result_code[static_cast<std::size_t>(k)] = e.donor_code[static_cast<std::size_t>(k)];
  e.source = generate(bundle, e.source_code);
  e.donor = generate(bundle, e.donor_code);
  e.result = generate(bundle, e.result_code);
  return e;
}

int cmd_train(const RunConfig& c, const std::string& resume_from, std::ostream& log) {
  if (!c.train) throw UsageError("train needs a 'train' section");
  const FactorDataset data = load_dataset(c.dataset);
  const std::string out = require_out(c);
  FitOptions opts;
  opts.out_dir = out;
  opts.resume_from = resume_from;
  const FitResult r = fit(*c.train, data, opts);
  const auto& last = r.log.empty() ? LogRecord{} : r.log.back();
  log << "trained " << c.train->total_images << " images; final " << log_record_json(last) << "\n";
  log << "checkpoint: " << (fs::path(out) / "final").string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& log) {
  const std::string ckpt = require_checkpoint(c);
  const std::string out = require_out(c);
  const ModelBundle bundle = load_bundle(ckpt);
  const TplReport tpl = evaluate_tpl(bundle, c.metrics, c.seed);
  const PerceptualDistance dist = make_distance(c.metrics, bundle);
  RngStream ppl_rng = RngStream::derive(c.seed, "ppl");
  const double ppl_value = ppl(bundle_generator(bundle), bundle.arch.latent_dim, dist, c.metrics.ppl_pairs,
                               c.metrics.ppl_epsilon, ppl_rng);
  json report = {{"checkpoint", ckpt},
                 {"distance", to_string(c.metrics.distance.kind)},
                 {"seed", c.seed},
                 {"tpl", tpl_json(tpl)},
                 {"ppl", ppl_value},
                 {"fvm", nullptr}};
  if (c.dataset.kind != DatasetConfig::Kind::none) {
    const FactorDataset data = load_dataset(c.dataset);
    RngStream fvm_rng = RngStream::derive(c.seed, "fvm");
    const FvmReport f = factorvae_metric(bundle_encoder(bundle), data, c.metrics.fvm, fvm_rng);
    report["fvm"] = {{"accuracy", f.accuracy},
                     {"train_accuracy", f.train_accuracy},
                     {"dim_to_factor", f.dim_to_factor},
                     {"active_dims", f.active_dims}};
    log << "fvm " << f.accuracy << "\n";
  }
  write_text(fs::path(out) / "report.json", report.dump(2) + "\n");
  log << "tpl_total " << tpl.tpl_total << " (" << tpl.num_active << " active), ppl " << ppl_value << "\n";
  return 0;
}

int cmd_rank(const RunConfig& c, const std::string& models_dir, std::ostream& log) {
  if (!fs::is_directory(models_dir)) throw IoError("not a directory: " + models_dir);
  std::vector<std::string> dirs;
  if (fs::exists(fs::path(models_dir) / "manifest.json")) dirs.push_back(models_dir);
  for (const auto& entry : fs::directory_iterator(models_dir)) {
    if (!entry.is_directory()) continue;
    if (fs::exists(entry.path() / "manifest.json")) {
      dirs.push_back(entry.path().string());
    } else if (fs::exists(entry.path() / "final" / "manifest.json")) {
      dirs.push_back((entry.path() / "final").string());
    }
  }
  if (dirs.empty()) throw IoError("no checkpoints found in " + models_dir);
  std::sort(dirs.begin(), dirs.end());
  const auto rows = rank_models(dirs, c.metrics.distance, c.metrics.tpl, c.metrics.min_active, c.seed);
  const std::string csv = ranking_csv(rows);
  if (!c.out.empty()) write_text(fs::path(require_out(c)) / "ranking.csv", csv);
  log << csv;
  return 0;
}

int cmd_traverse(const RunConfig& c, std::ostream& log) {
  const std::string ckpt = require_checkpoint(c);
  const ModelBundle bundle = load_bundle(ckpt);
  const int d = bundle.arch.latent_dim;
  const std::vector<int> dims = resolve_dims(c.traverse.dims, d);
  if (dims.empty()) throw UsageError("traverse needs at least one dimension");
  const std::string out = require_out(c);
  const TplReport tpl = evaluate_tpl(bundle, c.metrics, c.seed);
  const std::vector<int> rows = order_by_tpl(dims, tpl);

  const int steps = c.traverse.steps;
  const Tensor<float> base = prior_code(d, c.seed, "traverse");
  std::vector<double> values(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) values[static_cast<std::size_t>(s)] = c.traverse.lo + (c.traverse.hi - c.traverse.lo) * s / (steps - 1);

  std::vector<Image8> tiles, overlays;
  for (int dim : rows) {
    Tensor<float> codes({steps, d});
    for (int s = 0; s < steps; ++s) {
      std::copy(base.data(), base.data() + d, codes.data() + static_cast<std::size_t>(s) * d);
      codes[static_cast<std::size_t>(s) * d + dim] = static_cast<float>(values[static_cast<std::size_t>(s)]);
    }
    const Tensor<float> images = generate(bundle, codes);
    std::vector<Tensor<float>> masks;
    if (c.traverse.masks) masks = generate_masks(bundle, codes);
    for (int s = 0; s < steps; ++s) {
      tiles.push_back(to_image8(images, s));
      if (c.traverse.masks) overlays.push_back(overlay_mask(tiles.back(), sample_slice(masks[static_cast<std::size_t>(dim)], s)));
    }
  }
  const int nrows = static_cast<int>(rows.size());
  write_png((fs::path(out) / "traverse.png").string(), tile_grid(tiles, nrows, steps));
  if (c.traverse.masks) write_png((fs::path(out) / "traverse_masks.png").string(), tile_grid(overlays, nrows, steps));
  if (c.traverse.gif) {
    std::vector<Image8> frames;
    for (int s = 0; s < steps; ++s) {
      std::vector<Image8> column;
      for (int r = 0; r < nrows; ++r) column.push_back(tiles[static_cast<std::size_t>(r * steps + s)]);
      frames.push_back(tile_grid(column, nrows, 1));
    }
    write_gif((fs::path(out) / "traverse.gif").string(), frames);
  }
  json meta = {{"checkpoint", ckpt}, {"rows", rows}, {"values", values}, {"tpl", tpl_json(tpl)}};
  write_text(fs::path(out) / "traverse.json", meta.dump(2) + "\n");
  log << "traverse: " << nrows << " rows x " << steps << " steps\n";
  return 0;
}

int cmd_edit(const RunConfig& c, std::ostream& log) {
  const std::string ckpt = require_checkpoint(c);
  const ModelBundle bundle = load_bundle(ckpt);
  const std::vector<int> dims = resolve_dims(c.edit.dims, bundle.arch.latent_dim);
  const std::string out = require_out(c);
  const EditImages e = edit_images(bundle, c.edit.source_seed, c.edit.donor_seed, dims);
  write_png((fs::path(out) / "edit.png").string(),
            tile_grid({to_image8(e.source, 0), to_image8(e.donor, 0), to_image8(e.result, 0)}, 1, 3));
  auto row = [](const Tensor<float>& t) { return std::vector<float>(t.data(), t.data() + t.size()); };
  json meta = {{"checkpoint", ckpt},
               {"dims", dims},
               {"source_seed", c.edit.source_seed},
               {"donor_seed", c.edit.donor_seed},
               {"source_code", row(e.source_code)},
               {"donor_code", row(e.donor_code)},
               {"result_code", row(e.result_code)}};
  write_text(fs::path(out) / "edit.json", meta.dump(2) + "\n");
  log << "edit: copied " << dims.size() << " dims\n";
  return 0;
}

int cmd_rotate_sweep(const RunConfig& c, std::ostream& log) {
  const std::string ckpt = require_checkpoint(c);
  const ModelBundle bundle = load_bundle(ckpt);
  const int d = bundle.arch.latent_dim;
  resolve_dims(std::vector<int>{c.sweep.dim_i, c.sweep.dim_j}, d);
  const std::string out = require_out(c);
  const auto alphas = alpha_range(c.sweep.alpha_first, c.sweep.alpha_last, c.sweep.alpha_step);
  const PerceptualDistance dist = make_distance(c.metrics, bundle);
  const int segments = c.sweep.segments.value_or(c.metrics.tpl.segments);
  const auto values = dis_cum_sweep(bundle_generator(bundle), d, c.sweep.dim_i, c.sweep.dim_j, dist, segments, alphas,
                                    c.metrics.tpl.lo, c.metrics.tpl.hi);
  write_text(fs::path(out) / "sweep.csv", sweep_csv(alphas, values));
  write_png((fs::path(out) / "sweep.png").string(), plot_curve(alphas, values));
  log << "rotate-sweep: " << alphas.size() << " angles\n";
  return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatially constricted GAN training, TPL evaluation and model ranking", "pssc"};
  app.require_subcommand(1);

  std::string config_path, resume, models_dir, dims, sweep_dims;
  Overrides ov;
  std::uint64_t seed = 0;
  std::string out_dir, distance, checkpoint, dataset;
  double threshold = 0;
  int segments = 0, min_active = 0;
  int steps = 0;
  bool gif = false, no_masks = false;
  std::uint64_t source_seed = 0, donor_seed = 0;
  double alpha_first = 0, alpha_last = 0, alpha_step = 0;
  std::vector<CLI::Option*> seen;

  auto common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sc->add_option("--seed", seed, "Seed (overrides config)");
    sc->add_option("--out", out_dir, "Output directory");
    sc->add_option("--distance", distance, "Perceptual distance backend")
        ->check(CLI::IsMember({"pixel_l1", "pixel_l2", "random_features", "learned_features"}));
    sc->add_option("--tpl-threshold", threshold, "Active-dimension threshold S");
    sc->add_option("--segments", segments, "Traversal segments N");
    sc->add_option("--min-active", min_active, "Rank only models with more active dims than this");
  };
  CLI::App* train = app.add_subcommand("train", "Train a model");
  common(train);
  train->add_option("--resume", resume, "Checkpoint directory to continue from");
  train->add_option("--dataset", dataset, "DSprites .npz or procedural spec JSON");
  CLI::App* eval = app.add_subcommand("eval", "TPL, PPL and FVM report for a checkpoint");
  common(eval);
  eval->add_option("checkpoint", checkpoint, "Checkpoint directory");
  eval->add_option("--dataset", dataset, "DSprites .npz or procedural spec JSON");
  CLI::App* rank = app.add_subcommand("rank", "Rank every checkpoint in a directory by TPL");
  common(rank);
  rank->add_option("models", models_dir, "Directory of checkpoints")->required();
  CLI::App* traverse = app.add_subcommand("traverse", "Latent traversal grid ordered by tpl_i");
  common(traverse);
  traverse->add_option("checkpoint", checkpoint, "Checkpoint directory");
  traverse->add_option("--dims", dims, "all, none or a comma list");
  traverse->add_option("--steps", steps, "Columns per row");
  traverse->add_flag("--gif", gif, "Also write an animated GIF");
  traverse->add_flag("--no-masks", no_masks, "Skip the mask overlay grid");
  CLI::App* edit = app.add_subcommand("edit", "Copy latent dims from a donor code into a source code");
  common(edit);
  edit->add_option("checkpoint", checkpoint, "Checkpoint directory");
  edit->add_option("--source-seed", source_seed);
  edit->add_option("--donor-seed", donor_seed);
  edit->add_option("--dims", dims, "all, none or a comma list");
  CLI::App* sweep = app.add_subcommand("rotate-sweep", "dis_cum over rotations of a latent plane");
  common(sweep);
  sweep->add_option("checkpoint", checkpoint, "Checkpoint directory");
  sweep->add_option("--dims", sweep_dims, "Two dims, e.g. 0,1");
  sweep->add_option("--alpha-first", alpha_first);
  sweep->add_option("--alpha-last", alpha_last);
  sweep->add_option("--alpha-step", alpha_step);

  std::vector<const char*> argv{"pssc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sc = app.get_subcommands().front();
  auto given = [&](const std::string& name) {
    const CLI::Option* opt = sc->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (given("--seed")) ov.seed = seed;
    if (given("--out")) ov.out = out_dir;
    if (given("--distance")) ov.distance = distance;
    if (given("--tpl-threshold")) ov.tpl_threshold = threshold;
    if (given("--segments")) ov.segments = segments;
    if (given("--min-active")) ov.min_active = min_active;
    if (given("checkpoint")) ov.checkpoint = checkpoint;
    if (given("--dataset")) ov.dataset = dataset;
    apply_overrides(config, ov);
    if (given("--dims")) {
      if (sc == sweep) {
        const auto d = parse_dims(sweep_dims);
        if (!d || d->size() != 2) throw UsageError("rotate-sweep --dims needs exactly two dims");
        config.sweep.dim_i = (*d)[0];
        config.sweep.dim_j = (*d)[1];
        if (config.sweep.dim_i == config.sweep.dim_j) throw UsageError("rotate-sweep dims must differ");
      } else if (sc == traverse) {
        config.traverse.dims = parse_dims(dims);
      } else {
        config.edit.dims = parse_dims(dims);
      }
    }
    if (given("--steps")) {
      if (steps < 2) throw UsageError("--steps must be >= 2");
      config.traverse.steps = steps;
    }
    if (gif) config.traverse.gif = true;
    if (no_masks) config.traverse.masks = false;
    if (given("--source-seed")) config.edit.source_seed = source_seed;
    if (given("--donor-seed")) config.edit.donor_seed = donor_seed;
    if (given("--alpha-first")) config.sweep.alpha_first = alpha_first;
    if (given("--alpha-last")) config.sweep.alpha_last = alpha_last;
    if (given("--alpha-step")) config.sweep.alpha_step = alpha_step;
    if (!(config.sweep.alpha_step > 0) || config.sweep.alpha_last < config.sweep.alpha_first) {
      throw UsageError("sweep needs alpha-step > 0 and alpha-last >= alpha-first");
    }

    if (sc == train) return cmd_train(config, resume, out);
    if (sc == eval) return cmd_eval(config, out);
    if (sc == rank) return cmd_rank(config, models_dir, out);
    if (sc == traverse) return cmd_traverse(config, out);
    if (sc == edit) return cmd_edit(config, out);
    return cmd_rotate_sweep(config, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pssc::cli
