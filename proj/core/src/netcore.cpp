#include "pssc/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <stdexcept>

#include "pssc/ops.hpp"

namespace pssc {
namespace {

constexpr double kLeakySlope = 0.2;
constexpr double kAdainEps = 1e-8;

using nlohmann::json;

std::string stage_name(int s) { return "stage" + std::to_string(s); }
std::string sc_name(int dim) { return "sc" + std::to_string(dim); }

Tensor<float> normal_tensor(Shape shape, RngStream& rng, double stddev = 1.0) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

// Gate biases start as a soft rectangle that covers the interior: the lower
// cumax rises within the first few cells and the upper one near the end.
Tensor<float> ramp_bias(int rects, int len, bool rising) {
  Tensor<float> b({rects * len});
  const double slope = 16.0 / len;
  for (int j = 0; j < rects; ++j) {
    for (int i = 0; i < len; ++i) {
      b[static_cast<std::size_t>(j) * len + i] =
          static_cast<float>(rising ? slope * (i - (len - 1)) : -slope * i);
    }
  }
  return b;
}

void init_encoder(ParameterTable<float>& table, const ArchConfig& arch, int out_dim, RngStream& rng) {
  int prev = arch.image_channels;
  for (int s = 0; s < arch.num_stages(); ++s) {
    const int ch = arch.d_channels[s];
    table.add(stage_name(s) + ".conv.weight", normal_tensor({ch, prev, 3, 3}, rng));
    table.add(stage_name(s) + ".conv.bias", Tensor<float>({ch}));
    prev = ch;
  }
  table.add("fc.weight", normal_tensor({arch.head_width, prev * 16}, rng));
  table.add("fc.bias", Tensor<float>({arch.head_width}));
  table.add("out.weight", normal_tensor({out_dim, arch.head_width}, rng));
  table.add("out.bias", Tensor<float>({out_dim}));
}

template <typename T>
T conv_gain(int fan_in) {
  return static_cast<T>(std::sqrt(2.0 / fan_in));
}

template <typename T>
T linear_gain(int fan_in) {
  return static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
}

template <typename T>
Var<T> encoder_forward(const ArchConfig& arch, ParamBinder<T>& p, Var<T> images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != arch.image_channels || s[2] != arch.resolution || s[3] != arch.resolution) {
    throw std::invalid_argument("expected images [N, " + std::to_string(arch.image_channels) + ", " +
                                std::to_string(arch.resolution) + ", " + std::to_string(arch.resolution) + "], got " +
                                shape_string(s));
  }
  Var<T> x = images;
  int prev = arch.image_channels;
  for (int st = 0; st < arch.num_stages(); ++st) {
    x = ops::conv2d(x, p(stage_name(st) + ".conv.weight"), p(stage_name(st) + ".conv.bias"), conv_gain<T>(prev * 9));
    x = ops::leaky_relu(x, static_cast<T>(kLeakySlope));
    x = ops::avgpool2x(x);
    prev = arch.d_channels[st];
  }
  const int n = s[0];
  x = ops::reshape(x, {n, prev * 16});
  x = ops::leaky_relu(ops::linear(x, p("fc.weight"), p("fc.bias"), linear_gain<T>(prev * 16)),
                      static_cast<T>(kLeakySlope));
  return ops::linear(x, p("out.weight"), p("out.bias"), linear_gain<T>(arch.head_width));
}

void require_codes(const ArchConfig& arch, const Shape& s) {
  if (s.size() != 2 || s[1] != arch.latent_dim) {
    throw std::invalid_argument("expected codes [N, " + std::to_string(arch.latent_dim) + "], got " + shape_string(s));
  }
}

template <typename T>
Tensor<T> block_oracle_images(const ArchConfig& arch, const Tensor<T>& codes) {
  const int n = codes.dim(0), d = codes.dim(1), r = arch.resolution, ch = arch.image_channels;
  const double a = arch.oracle_rotation_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  Tensor<T> img({n, ch, r, r});
  for (int i = 0; i < n; ++i) {
    const double c1 = codes[static_cast<std::size_t>(i) * d];
    const double c2 = codes[static_cast<std::size_t>(i) * d + 1];
    const auto left = static_cast<T>(ca * c1 - sa * c2);
    const auto right = static_cast<T>(sa * c1 + ca * c2);
    for (int c = 0; c < ch; ++c) {
      for (int y = 0; y < r; ++y) {
        for (int x = 0; x < r; ++x) img.at(i, c, y, x) = x < r / 2 ? left : right;
      }
    }
  }
  return img;
}

void require_images(const ArchConfig& arch, const Tensor<float>& images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != arch.image_channels || s[2] != arch.resolution || s[3] != arch.resolution) {
    throw std::invalid_argument("image batch " + shape_string(s) + " does not match resolution " +
                                std::to_string(arch.resolution) + " with " + std::to_string(arch.image_channels) +
                                " channel(s)");
  }
}

}  // namespace

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::sc: return "sc";
    case MaskMode::softmax: return "softmax";
    case MaskMode::none: return "none";
  }
  return "?";
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::network: return "network";
    case ModelKind::block_oracle: return "block_oracle";
    case ModelKind::constant: return "constant";
  }
  return "?";
}

std::string to_string(EncoderKind k) { return k == EncoderKind::network ? "network" : "moment"; }

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "sc") return MaskMode::sc;
  if (s == "softmax") return MaskMode::softmax;
  if (s == "none") return MaskMode::none;
  throw std::invalid_argument("unknown mask mode '" + s + "' (expected sc, softmax or none)");
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "network") return ModelKind::network;
  if (s == "block_oracle") return ModelKind::block_oracle;
  if (s == "constant") return ModelKind::constant;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "network") return EncoderKind::network;
  if (s == "moment") return EncoderKind::moment;
  throw std::invalid_argument("unknown encoder kind '" + s + "'");
}

void ArchConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (image_channels < 1) throw std::invalid_argument("image_channels must be >= 1");
  if (kind == ModelKind::block_oracle) {
    if (latent_dim < 2) throw std::invalid_argument("block oracle needs latent_dim >= 2");
    if (resolution < 2 || resolution % 2) throw std::invalid_argument("block oracle needs an even resolution");
    return;
  }
  if (kind == ModelKind::constant) {
    if (resolution < 1) throw std::invalid_argument("resolution must be positive");
    return;
  }
  if (num_rects < 1 || num_rects > 9) throw std::invalid_argument("num_rects (J) must be in 1..9");
  if (g_channels.empty() || g_channels.size() != d_channels.size()) {
    throw std::invalid_argument("g_channels and d_channels must be non-empty and equally long");
  }
  if (resolution != (4 << num_stages())) {
    throw std::invalid_argument("resolution " + std::to_string(resolution) + " does not match " +
                                std::to_string(num_stages()) + " upsample stages from 4x4");
  }
  for (int c : g_channels) {
    if (c < 1) throw std::invalid_argument("channel counts must be positive");
  }
  for (int c : d_channels) {
    if (c < 1) throw std::invalid_argument("channel counts must be positive");
  }
  if (base_channels < 1 || head_width < 1) throw std::invalid_argument("channel counts must be positive");
}

std::string arch_to_json(const ArchConfig& a) {
  json j = {{"kind", to_string(a.kind)},
            {"encoder", to_string(a.encoder)},
            {"latent_dim", a.latent_dim},
            {"num_rects", a.num_rects},
            {"mask_mode", to_string(a.mask_mode)},
            {"resolution", a.resolution},
            {"image_channels", a.image_channels},
            {"base_channels", a.base_channels},
            {"g_channels", a.g_channels},
            {"d_channels", a.d_channels},
            {"head_width", a.head_width},
            {"oracle_rotation_deg", a.oracle_rotation_deg},
            {"constant_value", a.constant_value}};
  return j.dump();
}

ArchConfig arch_from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("architecture config must be a JSON object");
  ArchConfig a;
  for (auto& [key, v] : j.items()) {
    if (key == "kind") a.kind = parse_model_kind(v.get<std::string>());
    else if (key == "encoder") a.encoder = parse_encoder_kind(v.get<std::string>());
    else if (key == "latent_dim") a.latent_dim = v.get<int>();
    else if (key == "num_rects") a.num_rects = v.get<int>();
    else if (key == "mask_mode") a.mask_mode = parse_mask_mode(v.get<std::string>());
    else if (key == "resolution") a.resolution = v.get<int>();
    else if (key == "image_channels") a.image_channels = v.get<int>();
    else if (key == "base_channels") a.base_channels = v.get<int>();
    else if (key == "g_channels") a.g_channels = v.get<std::vector<int>>();
    else if (key == "d_channels") a.d_channels = v.get<std::vector<int>>();
    else if (key == "head_width") a.head_width = v.get<int>();
    else if (key == "oracle_rotation_deg") a.oracle_rotation_deg = v.get<double>();
    else if (key == "constant_value") a.constant_value = v.get<double>();
    else throw std::invalid_argument("unknown architecture key '" + key + "'");
  }
  a.validate();
  return a;
}

ModelBundle init_bundle(const ArchConfig& arch, RngStream& rng) {
  arch.validate();
  ModelBundle b;
  b.arch = arch;
  if (arch.kind != ModelKind::network) return b;

  auto& g = b.generator;
  g.add("const", normal_tensor({1, arch.base_channels, 4, 4}, rng));
  int prev = arch.base_channels;
  for (int s = 0; s < arch.num_stages(); ++s) {
    const int ch = arch.g_channels[s];
    g.add(stage_name(s) + ".conv.weight", normal_tensor({ch, prev, 3, 3}, rng));
    g.add(stage_name(s) + ".conv.bias", Tensor<float>({ch}));
    prev = ch;
  }
  for (int dim = 0; dim < arch.latent_dim; ++dim) {
    const int s = arch.block_stage(dim);
    const int ch = arch.g_channels[s];
    const int len = arch.stage_resolution(s);
    const std::string p = sc_name(dim);
    g.add(p + ".style_mean.weight", normal_tensor({ch, 1}, rng));
    g.add(p + ".style_mean.bias", Tensor<float>({ch}));
    g.add(p + ".style_std.weight", normal_tensor({ch, 1}, rng));
    g.add(p + ".style_std.bias", Tensor<float>({ch}, 1.0f));
    if (arch.mask_mode == MaskMode::none) continue;
    const int rl = arch.num_rects * len;
    // Softmax masks start uniform; cumax gates start as an interior rectangle.
    const bool soft = arch.mask_mode == MaskMode::softmax;
    g.add(p + ".gate_h1.weight", normal_tensor({rl, ch}, rng));
    g.add(p + ".gate_h1.bias", soft ? Tensor<float>({rl}) : ramp_bias(arch.num_rects, len, false));
    g.add(p + ".gate_w1.weight", normal_tensor({rl, ch}, rng));
    g.add(p + ".gate_w1.bias", soft ? Tensor<float>({rl}) : ramp_bias(arch.num_rects, len, false));
    if (arch.mask_mode == MaskMode::sc) {
      g.add(p + ".gate_h2.weight", normal_tensor({rl, ch}, rng));
      g.add(p + ".gate_h2.bias", ramp_bias(arch.num_rects, len, true));
      g.add(p + ".gate_w2.weight", normal_tensor({rl, ch}, rng));
      g.add(p + ".gate_w2.bias", ramp_bias(arch.num_rects, len, true));
    }
  }
  g.add("to_image.weight", normal_tensor({arch.image_channels, prev, 1, 1}, rng));
  g.add("to_image.bias", Tensor<float>({arch.image_channels}));

  init_encoder(b.discriminator, arch, 1, rng);
  init_encoder(b.recognizer, arch, arch.latent_dim, rng);
  return b;
}

template <typename T>
Var<T> ParamBinder<T>::operator()(std::string_view name) {
  if (mutable_ != nullptr) return tape_.parameter(mutable_->at(name), true);
  return tape_.constant(view_->at(name).value);
}

template <typename T>
Var<T> sc_block(const ArchConfig& arch, ParamBinder<T>& p, const std::string& prefix, Var<T> gamma, Var<T> code,
                const ForwardOptions& opts, Var<T>* mask_out) {
  Tape<T>& tape = p.tape();
  const Shape& gs = gamma.shape();
  if (gs.size() != 4) throw std::invalid_argument("sc_block: gamma must be [N,C,H,W]");
  const int n = gs[0], h = gs[2], w = gs[3];
  if (code.shape() != Shape{n, 1}) throw std::invalid_argument("sc_block: code must be [N,1]");

  const T one = T(1);
  Var<T> style_mean = ops::linear(code, p(prefix + ".style_mean.weight"), p(prefix + ".style_mean.bias"), T(0.5));
  Var<T> style_std = ops::linear(code, p(prefix + ".style_std.weight"), p(prefix + ".style_std.bias"), T(0.5));
  Var<T> styled = ops::adain(gamma, style_mean, style_std, static_cast<T>(kAdainEps));

  Var<T> mask;
  if (opts.forced_mask) {
    mask = tape.constant(Tensor<T>({n, h, w}, static_cast<T>(*opts.forced_mask)));
  } else if (arch.mask_mode == MaskMode::none) {
    if (mask_out) *mask_out = tape.constant(Tensor<T>({n, h, w}, one));
    return styled;
  } else {
    const int c = gs[1];
    const int rects = arch.num_rects;
    Var<T> pooled = ops::global_avg_pool(gamma);
    auto logits = [&](const char* which, int len) {
      Var<T> l = ops::linear(pooled, p(prefix + ".gate_" + which + ".weight"), p(prefix + ".gate_" + which + ".bias"),
                             linear_gain<T>(c));
      return ops::reshape(l, {n, rects, len});
    };
    Var<T> gh, gw;
    if (arch.mask_mode == MaskMode::sc) {
      gh = ops::mul(ops::cumax_last(logits("h1", h)), ops::one_minus(ops::cumax_last(logits("h2", h))));
      gw = ops::mul(ops::cumax_last(logits("w1", w)), ops::one_minus(ops::cumax_last(logits("w2", w))));
    } else {
      gh = ops::normalize_max_last(ops::softmax_last(logits("h1", h)));
      gw = ops::normalize_max_last(ops::softmax_last(logits("w1", w)));
    }
    mask = ops::mean_rects(ops::outer_rects(gh, gw));
  }
  if (mask.shape() != Shape{n, h, w}) {
    throw std::invalid_argument("sc_block: mask " + shape_string(mask.shape()) + " does not match feature map " +
                                shape_string(gs));
  }
  if (mask_out) *mask_out = mask;
  return ops::mask_blend(gamma, styled, mask);
}

template <typename T>
Var<T> generator_forward(const ArchConfig& arch, ParamBinder<T>& p, Var<T> codes, const ForwardOptions& opts,
                         std::vector<Var<T>>* masks_out) {
  if (arch.kind != ModelKind::network) throw std::invalid_argument("generator_forward needs a network bundle");
  require_codes(arch, codes.shape());
  const int n = codes.dim(0);
  if (masks_out) masks_out->assign(static_cast<std::size_t>(arch.latent_dim), Var<T>{});
  Var<T> x = ops::broadcast_batch(p("const"), n);
  int prev = arch.base_channels;
  for (int s = 0; s < arch.num_stages(); ++s) {
    x = ops::upsample2x(x);
    x = ops::conv2d(x, p(stage_name(s) + ".conv.weight"), p(stage_name(s) + ".conv.bias"), conv_gain<T>(prev * 9));
    x = ops::leaky_relu(x, static_cast<T>(kLeakySlope));
    for (int dim = s; dim < arch.latent_dim; dim += arch.num_stages()) {
      Var<T> code = ops::select_column(codes, dim);
      Var<T>* slot = masks_out ? &(*masks_out)[static_cast<std::size_t>(dim)] : nullptr;
      x = sc_block(arch, p, sc_name(dim), x, code, opts, slot);
    }
    prev = arch.g_channels[s];
  }
  x = ops::conv2d(x, p("to_image.weight"), p("to_image.bias"), linear_gain<T>(prev));
  return ops::tanh(x);
}

template <typename T>
Var<T> discriminator_forward(const ArchConfig& arch, ParamBinder<T>& p, Var<T> images) {
  return encoder_forward(arch, p, images);
}

template <typename T>
Var<T> recognizer_forward(const ArchConfig& arch, ParamBinder<T>& p, Var<T> images) {
  return encoder_forward(arch, p, images);
}

Tensor<float> generate(const ModelBundle& bundle, const Tensor<float>& codes, const ForwardOptions& opts) {
  const ArchConfig& arch = bundle.arch;
  require_codes(arch, codes.shape());
  const int n = codes.dim(0);
  switch (arch.kind) {
    case ModelKind::block_oracle:
      return block_oracle_images(arch, codes);
    case ModelKind::constant:
      return Tensor<float>({n, arch.image_channels, arch.resolution, arch.resolution},
                           static_cast<float>(arch.constant_value));
    case ModelKind::network:
      break;
  }
  Tape<float> tape;
  ParamBinder<float> p(tape, std::as_const(bundle.generator));
  return generator_forward(arch, p, tape.constant(codes), opts).value();
}

Tensor<double> generate_f64(const ModelBundle& bundle, const Tensor<double>& codes, const ForwardOptions& opts) {
  const ArchConfig& arch = bundle.arch;
  require_codes(arch, codes.shape());
  switch (arch.kind) {
    case ModelKind::block_oracle:
      return block_oracle_images(arch, codes);
    case ModelKind::constant:
      return Tensor<double>({codes.dim(0), arch.image_channels, arch.resolution, arch.resolution},
                            arch.constant_value);
    case ModelKind::network:
      break;
  }
  return generate(bundle, codes.cast<float>(), opts).cast<double>();
}

std::vector<Tensor<float>> generate_masks(const ModelBundle& bundle, const Tensor<float>& codes) {
  const ArchConfig& arch = bundle.arch;
  require_codes(arch, codes.shape());
  const int n = codes.dim(0);
  std::vector<Tensor<float>> out;
  if (arch.kind != ModelKind::network) {
    out.assign(static_cast<std::size_t>(arch.latent_dim), Tensor<float>({n, arch.resolution, arch.resolution}, 1.0f));
    return out;
  }
  Tape<float> tape;
  ParamBinder<float> p(tape, std::as_const(bundle.generator));
  std::vector<Var<float>> masks;
  generator_forward(arch, p, tape.constant(codes), {}, &masks);
  for (auto& m : masks) out.push_back(m.value());
  return out;
}

Tensor<float> discriminate(const ModelBundle& bundle, const Tensor<float>& images) {
  require_images(bundle.arch, images);
  if (bundle.arch.kind != ModelKind::network) {
    throw std::invalid_argument("fixture bundles have no discriminator");
  }
  Tape<float> tape;
  ParamBinder<float> p(tape, std::as_const(bundle.discriminator));
  Tensor<float> logits = discriminator_forward(bundle.arch, p, tape.constant(images)).value();
  return logits.reshaped({images.dim(0)});
}

Tensor<float> recognize(const ModelBundle& bundle, const Tensor<float>& images) {
  const ArchConfig& arch = bundle.arch;
  require_images(arch, images);
  const int n = images.dim(0), d = arch.latent_dim;
  if (arch.encoder == EncoderKind::moment) {
    Tensor<float> f = moment_features(images);
    Tensor<float> out({n, d});
    const int k = std::min(d, f.dim(1));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * d + j] = f[static_cast<std::size_t>(i) * f.dim(1) + j];
    }
    return out;
  }
  switch (arch.kind) {
    case ModelKind::block_oracle: {
      // Inverse of the oracle: half means, rotated back.
      const int r = arch.resolution;
      const double a = arch.oracle_rotation_deg * std::numbers::pi / 180.0;
      Tensor<float> out({n, d});
      for (int i = 0; i < n; ++i) {
        double left = 0, right = 0;
        for (int y = 0; y < r; ++y) {
          for (int x = 0; x < r; ++x) (x < r / 2 ? left : right) += images.at(i, 0, y, x);
        }
        left /= (r * r / 2.0);
        right /= (r * r / 2.0);
        out[static_cast<std::size_t>(i) * d] = static_cast<float>(std::cos(a) * left + std::sin(a) * right);
        out[static_cast<std::size_t>(i) * d + 1] = static_cast<float>(-std::sin(a) * left + std::cos(a) * right);
      }
      return out;
    }
    case ModelKind::constant:
      return Tensor<float>({n, d});
    case ModelKind::network:
      break;
  }
  Tape<float> tape;
  ParamBinder<float> p(tape, std::as_const(bundle.recognizer));
  return recognizer_forward(arch, p, tape.constant(images)).value();
}

Tensor<float> moment_features(const Tensor<float>& images) {
  if (images.rank() != 4) throw std::invalid_argument("moment_features: expected [N,C,H,W]");
  const int n = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor<float> out({n, 6});
  std::vector<double> plane(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < n; ++i) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double v = 0;
        for (int c = 0; c < ch; ++c) v += images.at(i, c, y, x);
        plane[static_cast<std::size_t>(y) * w + x] = v / ch;
      }
    }
    const auto [lo_it, hi_it] = std::minmax_element(plane.begin(), plane.end());
    const double bg = *lo_it, fg = *hi_it;
    double mass = 0, mx = 0, my = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double m = plane[static_cast<std::size_t>(y) * w + x] - bg;
        mass += m;
        mx += m * x;
        my += m * y;
      }
    }
    float* row = out.data() + static_cast<std::size_t>(i) * 6;
    row[4] = static_cast<float>(fg);
    row[5] = static_cast<float>(bg);
    if (mass <= 1e-12) continue;
    mx /= mass;
    my /= mass;
    double vx = 0, vy = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double m = plane[static_cast<std::size_t>(y) * w + x] - bg;
        vx += m * (x - mx) * (x - mx);
        vy += m * (y - my) * (y - my);
      }
    }
    vx = std::max(vx / mass, 1e-12);
    vy = std::max(vy / mass, 1e-12);
    row[0] = static_cast<float>(mx);
    row[1] = static_cast<float>(my);
    row[2] = static_cast<float>(0.25 * std::log(vx * vy));
    row[3] = static_cast<float>(0.5 * std::log(vx / vy));
  }
  return out;
}

template class ParamBinder<float>;
template class ParamBinder<double>;

#define PSSC_INSTANTIATE_NET(T)                                                                                     \
  template Var<T> sc_block(const ArchConfig&, ParamBinder<T>&, const std::string&, Var<T>, Var<T>,                 \
                           const ForwardOptions&, Var<T>*);                                                         \
  template Var<T> generator_forward(const ArchConfig&, ParamBinder<T>&, Var<T>, const ForwardOptions&,             \
                                    std::vector<Var<T>>*);                                                          \
  template Var<T> discriminator_forward(const ArchConfig&, ParamBinder<T>&, Var<T>);                               \
  template Var<T> recognizer_forward(const ArchConfig&, ParamBinder<T>&, Var<T>);

PSSC_INSTANTIATE_NET(float)
PSSC_INSTANTIATE_NET(double)

}  // namespace pssc
