#include "pssc/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "pssc/checkpoint.hpp"
#include "pssc/error.hpp"
#include "pssc/ops.hpp"

namespace pssc {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kCodeStream = "code-sampling";
constexpr const char* kPerturbStream = "perturbation";
constexpr const char* kDataStream = "data";

Tensor<float> sample_codes(int n, int d, RngStream& rng) {
  Tensor<float> c({n, d});
  for (auto& v : c.storage()) v = static_cast<float>(rng.normal());
  return c;
}

double mean_of(const Tensor<float>& t) {
  double s = 0;
  for (float v : t.values()) s += v;
  return t.empty() ? 0.0 : s / static_cast<double>(t.size());
}

// Fields that must agree for a resumed run to continue the original one.
bool same_trajectory(const TrainConfig& a, const TrainConfig& b) {
  TrainConfig x = a, y = b;
  x.total_images = y.total_images = 0;
  x.checkpoint_every = y.checkpoint_every = 0;
  return x == y;
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << line << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

// Keeps log lines at or before `images_seen` (strictly before when a partial
// group was pending, since that record is regenerated).
std::vector<LogRecord> truncate_log(const fs::path& path, long images_seen, bool strict) {
  std::vector<LogRecord> kept;
  std::ifstream in(path);
  std::string line, body;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    LogRecord r{j.at("images_seen").get<long>(), j.at("loss_D").get<double>(), j.at("loss_G").get<double>(),
                j.at("loss_PS").get<double>()};
    if (r.images_seen > images_seen || (strict && r.images_seen == images_seen)) continue;
    kept.push_back(r);
    body += line + '\n';
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot rewrite " + path.string());
  out << body;
  return kept;
}

LogRecord flush_group(TrainState& st) {
  const double n = st.group_steps;
  LogRecord r{st.images_seen, st.group_loss_d / n, st.group_loss_g / n, st.group_loss_ps / n};
  st.group_steps = 0;
  st.group_loss_d = st.group_loss_g = st.group_loss_ps = 0;
  return r;
}

}  // namespace

std::string to_string(PsMode m) {
  switch (m) {
    case PsMode::ps: return "ps";
    case PsMode::info_mse: return "info_mse";
    case PsMode::off: return "off";
  }
  return "?";
}

PsMode parse_ps_mode(const std::string& s) {
  if (s == "ps") return PsMode::ps;
  if (s == "info_mse") return PsMode::info_mse;
  if (s == "off") return PsMode::off;
  throw std::invalid_argument("unknown ps_mode '" + s + "' (expected ps, info_mse or off)");
}

void TrainConfig::validate() const {
  arch.validate();
  if (arch.kind != ModelKind::network) throw std::invalid_argument("only network models can be trained");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= 0");
  if (!(p_var > 0) || !std::isfinite(p_var)) throw std::invalid_argument("p_var must be finite and > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (total_images != 0 && total_images < batch_size) {
    throw std::invalid_argument("total_images must be 0 or >= batch_size");
  }
  if (total_images < 0 || checkpoint_every < 0) throw std::invalid_argument("image counts must be >= 0");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (!(adam.lr > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 || !(adam.eps > 0)) {
    throw std::invalid_argument("invalid Adam settings");
  }
}

std::string train_config_to_json(const TrainConfig& c) {
  json j = {{"lambda", c.lambda},
            {"p_var", c.p_var},
            {"d", c.arch.latent_dim},
            {"J", c.arch.num_rects},
            {"mask_mode", to_string(c.arch.mask_mode)},
            {"ps_mode", to_string(c.ps_mode)},
            {"k_schedule", to_string(c.k_schedule)},
            {"batch_size", c.batch_size},
            {"total_images", c.total_images},
            {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"log_every", c.log_every},
            {"resolution", c.arch.resolution},
            {"base_channels", c.arch.base_channels},
            {"g_channels", c.arch.g_channels},
            {"d_channels", c.arch.d_channels},
            {"head_width", c.arch.head_width}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("training config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  TrainConfig c;
  try {
    for (auto& [key, v] : j.items()) {
      if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "p_var") c.p_var = v.get<double>();
      else if (key == "d") c.arch.latent_dim = v.get<int>();
      else if (key == "J") c.arch.num_rects = v.get<int>();
      else if (key == "mask_mode") c.arch.mask_mode = parse_mask_mode(v.get<std::string>());
      else if (key == "ps_mode") c.ps_mode = parse_ps_mode(v.get<std::string>());
      else if (key == "k_schedule") c.k_schedule = parse_k_schedule(v.get<std::string>());
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "total_images") c.total_images = v.get<long>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<long>();
      else if (key == "log_every") c.log_every = v.get<int>();
      else if (key == "resolution") c.arch.resolution = v.get<int>();
      else if (key == "base_channels") c.arch.base_channels = v.get<int>();
      else if (key == "g_channels") c.arch.g_channels = v.get<std::vector<int>>();
      else if (key == "d_channels") c.arch.d_channels = v.get<std::vector<int>>();
      else if (key == "head_width") c.arch.head_width = v.get<int>();
      else if (key == "adam") {
        if (!v.is_object()) throw std::invalid_argument("adam must be an object");
        for (auto& [ak, av] : v.items()) {
          if (ak == "lr") c.adam.lr = av.get<double>();
          else if (ak == "beta1") c.adam.beta1 = av.get<double>();
          else if (ak == "beta2") c.adam.beta2 = av.get<double>();
          else if (ak == "eps") c.adam.eps = av.get<double>();
          else throw std::invalid_argument("unknown adam key '" + ak + "'");
        }
      } else {
        throw std::invalid_argument("unknown training key '" + key + "'");
      }
    }
  } catch (const json::type_error& e) {
    throw std::invalid_argument(std::string("training config has a wrongly typed value: ") + e.what());
  }
  c.validate();
  return c;
}

void adam_step(ParameterTable<float>& params, AdamState& st, const AdamConfig& cfg) {
  if (st.m.size() == 0) {
    for (const auto& [name, p] : params) {
      st.m.add(name, Tensor<float>(p.value.shape()));
      st.v.add(name, Tensor<float>(p.value.shape()));
    }
  }
  ++st.t;
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const auto lr = static_cast<float>(cfg.lr), eps = static_cast<float>(cfg.eps);
  const auto c1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(st.t)));
  const auto c2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(st.t)));
  for (auto& [name, p] : params) {
    if (p.grad.size() != p.value.size()) continue;  // unused this step
    float* m = st.m.at(name).value.data();
    float* v = st.v.at(name).value.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float g = p.grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  params.zero_grad();
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState st;
  st.config = config;
  RngStream init = RngStream::derive(config.seed, "init");
  st.bundle = init_bundle(config.arch, init);
  st.rng_codes = RngStream::derive(config.seed, kCodeStream);
  st.rng_perturb = RngStream::derive(config.seed, kPerturbStream);
  st.rng_data = RngStream::derive(config.seed, kDataStream);
  return st;
}

StepRecord train_step(TrainState& st, const Tensor<float>& real) {
  const TrainConfig& cfg = st.config;
  const ArchConfig& arch = cfg.arch;
  const int b = real.dim(0), d = arch.latent_dim;
  if (real.rank() != 4 || real.dim(1) != arch.image_channels || real.dim(2) != arch.resolution ||
      real.dim(3) != arch.resolution) {
    throw std::invalid_argument("real batch " + shape_string(real.shape()) + " does not match the architecture");
  }
  StepRecord rec;
  rec.step = st.step + 1;

  // Discriminator update.
  {
    const Tensor<float> codes = sample_codes(b, d, st.rng_codes);
    Tensor<float> fake;
    {
      Tape<float> tape;
      ParamBinder<float> g(tape, std::as_const(st.bundle.generator));
      fake = generator_forward(arch, g, tape.constant(codes)).value();
    }
    Tape<float> tape;
    ParamBinder<float> dp(tape, st.bundle.discriminator);
    Var<float> real_logits = discriminator_forward(arch, dp, tape.constant(real));
    Var<float> fake_logits = discriminator_forward(arch, dp, tape.constant(fake));
    Var<float> loss = losses::discriminator_loss(real_logits, fake_logits);
    rec.loss_d = loss.value()[0];
    rec.real_logit_mean = mean_of(real_logits.value());
    rec.fake_logit_mean = mean_of(fake_logits.value());
    if (!std::isfinite(rec.loss_d)) {
      throw TrainingDiverged("discriminator loss became non-finite", rec.step, rec.loss_d, 0, 0);
    }
    tape.backward(loss);
    adam_step(st.bundle.discriminator, st.opt_d, cfg.adam);
  }

  // Joint generator + recognizer update.
  {
    const Tensor<float> codes = sample_codes(b, d, st.rng_codes);
    Tape<float> tape;
    ParamBinder<float> g(tape, st.bundle.generator);
    ParamBinder<float> dp(tape, std::as_const(st.bundle.discriminator));
    ParamBinder<float> q(tape, st.bundle.recognizer);
    Var<float> x = generator_forward(arch, g, tape.constant(codes));
    Var<float> loss_g = losses::generator_loss(discriminator_forward(arch, dp, x));
    Var<float> total = loss_g;
    if (cfg.ps_mode != PsMode::off) {
      PerturbationSchedule schedule{cfg.k_schedule, d};
      rec.k = schedule.next_k(st.images_seen, st.rng_perturb);
      Tensor<float> codes_p = codes;
      const double sd = std::sqrt(cfg.p_var);
      for (int n = 0; n < b; ++n) {
        codes_p[static_cast<std::size_t>(n) * d + rec.k] += static_cast<float>(st.rng_perturb.normal() * sd);
      }
      Var<float> xp = generator_forward(arch, g, tape.constant(codes_p));
      // Q sees the full reconstruction gradient; G receives it scaled by lambda.
      const auto lam = static_cast<float>(cfg.lambda);
      Var<float> c_hat = recognizer_forward(arch, q, ops::grad_scale(x, lam));
      Var<float> c_hat_p = recognizer_forward(arch, q, ops::grad_scale(xp, lam));
      Var<float> recon;
      if (cfg.ps_mode == PsMode::ps) {
        const std::vector<int> ks(static_cast<std::size_t>(b), rec.k);
        recon = losses::ps(c_hat, c_hat_p, codes, codes_p, ks);
      } else {
        recon = ops::add(losses::info_mse(c_hat, codes), losses::info_mse(c_hat_p, codes_p));
      }
      rec.loss_ps = recon.value()[0];
      total = ops::add(loss_g, recon);
    }
    rec.loss_g = loss_g.value()[0];
    if (!std::isfinite(rec.loss_g) || !std::isfinite(rec.loss_ps)) {
      throw TrainingDiverged("generator or reconstruction loss became non-finite", rec.step, rec.loss_d, rec.loss_g,
                             rec.loss_ps);
    }
    tape.backward(total);
    adam_step(st.bundle.generator, st.opt_g, cfg.adam);
    if (cfg.ps_mode != PsMode::off) adam_step(st.bundle.recognizer, st.opt_q, cfg.adam);
  }

  st.step = rec.step;
  st.images_seen += b;
  rec.images_seen = st.images_seen;
  return rec;
}

void save_train_state(const TrainState& st, const std::string& dir) {
  CheckpointContents c;
  c.bundle = st.bundle;
  const std::pair<const char*, const AdamState*> opts[] = {
      {"generator", &st.opt_g}, {"discriminator", &st.opt_d}, {"recognizer", &st.opt_q}};
  json adam_t = json::object();
  for (const auto& [group, opt] : opts) {
    adam_t[group] = opt->t;
    if (opt->m.size() == 0) continue;
    c.extra_tables[std::string("adam_m.") + group] = opt->m;
    c.extra_tables[std::string("adam_v.") + group] = opt->v;
  }
  c.rng_states = {{kCodeStream, st.rng_codes.serialize()},
                  {kPerturbStream, st.rng_perturb.serialize()},
                  {kDataStream, st.rng_data.serialize()}};
  c.step = st.step;
  c.images_seen = st.images_seen;
  c.seed = st.config.seed;
  c.train_config_json = train_config_to_json(st.config);
  c.extra_state_json = json{{"adam_t", adam_t},
                            {"group",
                             {{"steps", st.group_steps},
                              {"loss_D", st.group_loss_d},
                              {"loss_G", st.group_loss_g},
                              {"loss_PS", st.group_loss_ps}}}}
                           .dump();
  write_checkpoint(dir, c);
}

TrainState load_train_state(const std::string& dir) {
  CheckpointContents c = read_checkpoint(dir);
  if (c.train_config_json.empty() || c.extra_state_json.empty()) {
    throw IncompatibleCheckpoint(dir + ": inference-only bundle has no trainer state to resume");
  }
  TrainState st;
  try {
    st.config = train_config_from_json(c.train_config_json);
  } catch (const std::invalid_argument& e) {
    throw IncompatibleCheckpoint(dir + ": stored training config is invalid: " + e.what());
  }
  require_compatible(st.config.arch, c.bundle.arch);
  st.bundle = std::move(c.bundle);
  const json extra = json::parse(c.extra_state_json);
  std::pair<const char*, AdamState*> opts[] = {
      {"generator", &st.opt_g}, {"discriminator", &st.opt_d}, {"recognizer", &st.opt_q}};
  for (auto& [group, opt] : opts) {
    opt->t = extra.at("adam_t").at(group).get<long>();
    auto m = c.extra_tables.find(std::string("adam_m.") + group);
    auto v = c.extra_tables.find(std::string("adam_v.") + group);
    if ((m == c.extra_tables.end()) != (v == c.extra_tables.end())) {
      throw IncompatibleCheckpoint(dir + ": optimizer moments for " + group + " are incomplete");
    }
    if (m != c.extra_tables.end()) {
      opt->m = std::move(m->second);
      opt->v = std::move(v->second);
    }
  }
  try {
    st.rng_codes = RngStream::deserialize(c.rng_states.at(kCodeStream));
    st.rng_perturb = RngStream::deserialize(c.rng_states.at(kPerturbStream));
    st.rng_data = RngStream::deserialize(c.rng_states.at(kDataStream));
  } catch (const std::out_of_range&) {
    throw IncompatibleCheckpoint(dir + ": missing RNG stream state");
  }
  st.step = c.step;
  st.images_seen = c.images_seen;
  const json& grp = extra.at("group");
  st.group_steps = grp.at("steps").get<int>();
  st.group_loss_d = grp.at("loss_D").get<double>();
  st.group_loss_g = grp.at("loss_G").get<double>();
  st.group_loss_ps = grp.at("loss_PS").get<double>();
  return st;
}

std::string log_record_json(const LogRecord& r) {
  return json{{"images_seen", r.images_seen}, {"loss_D", r.loss_d}, {"loss_G", r.loss_g}, {"loss_PS", r.loss_ps}}
      .dump();
}

FitResult fit(const TrainConfig& config, const FactorDataset& dataset, const FitOptions& options) {
  config.validate();
  const ArchConfig& arch = config.arch;
  if (dataset.channels() != arch.image_channels || dataset.height() != arch.resolution ||
      dataset.width() != arch.resolution) {
    throw std::invalid_argument("dataset images do not match the configured resolution/channels");
  }
  TrainState st;
  if (options.resume_from.empty()) {
    st = init_train_state(config);
  } else {
    st = load_train_state(options.resume_from);
    if (!same_trajectory(st.config, config)) {
      throw IncompatibleCheckpoint("resume config differs from the checkpoint's training config");
    }
    st.config = config;
  }

  FitResult result;
  fs::path log_path;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir + ": " + ec.message());
    log_path = fs::path(options.out_dir) / "metrics.jsonl";
    if (options.resume_from.empty()) {
      std::ofstream(log_path, std::ios::trunc);
    } else {
      result.log = truncate_log(log_path, st.images_seen, st.group_steps > 0);
    }
  }
  auto emit = [&](const LogRecord& r) {
    result.log.push_back(r);
    if (!log_path.empty()) append_line(log_path, log_record_json(r));
  };

  while (st.images_seen < config.total_images) {
    const Tensor<float> real = sample_batch(dataset, config.batch_size, st.rng_data);
    const long before = st.images_seen;
    const StepRecord rec = train_step(st, real);
    result.steps.push_back(rec);
    if (options.on_step) options.on_step(rec);
    st.group_loss_d += rec.loss_d;
    st.group_loss_g += rec.loss_g;
    st.group_loss_ps += rec.loss_ps;
    if (++st.group_steps == config.log_every) emit(flush_group(st));
    if (config.checkpoint_every > 0 && !options.out_dir.empty() &&
        before / config.checkpoint_every != st.images_seen / config.checkpoint_every &&
        st.images_seen < config.total_images) {
      char name[48];
      std::snprintf(name, sizeof name, "images_%010ld", st.images_seen);
      save_train_state(st, (fs::path(options.out_dir) / "checkpoints" / name).string());
    }
  }
  if (!options.out_dir.empty()) save_train_state(st, (fs::path(options.out_dir) / "final").string());
  if (st.group_steps > 0) emit(flush_group(st));
  result.bundle = std::move(st.bundle);
  return result;
}

}  // namespace pssc
