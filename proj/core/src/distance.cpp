#include "pssc/distance.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pssc/checkpoint.hpp"
#include "pssc/error.hpp"
#include "pssc/ops.hpp"
#include "pssc/rng.hpp"

namespace pssc {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kFeatureChannels[] = {8, 16};

std::string layer(int i) { return "conv" + std::to_string(i); }

Tensor<double> as_batch(const Tensor<double>& t) {
  if (t.rank() == 3) return t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
  if (t.rank() == 4 && t.dim(0) == 1) return t;
  throw std::invalid_argument("expected a single image [C,H,W] or [1,C,H,W], got " + shape_string(t.shape()));
}

}  // namespace

std::string to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::pixel_l1: return "pixel_l1";
    case DistanceKind::pixel_l2: return "pixel_l2";
    case DistanceKind::random_features: return "random_features";
    case DistanceKind::learned_features: return "learned_features";
  }
  return "?";
}

DistanceKind parse_distance_kind(const std::string& s) {
  if (s == "pixel_l1") return DistanceKind::pixel_l1;
  if (s == "pixel_l2") return DistanceKind::pixel_l2;
  if (s == "random_features") return DistanceKind::random_features;
  if (s == "learned_features") return DistanceKind::learned_features;
  throw std::invalid_argument("unknown distance '" + s +
                              "' (expected pixel_l1, pixel_l2, random_features or learned_features)");
}

ParameterTable<float> random_feature_weights(int image_channels, std::uint64_t seed) {
  if (image_channels < 1) throw std::invalid_argument("image_channels must be >= 1");
  RngStream rng = RngStream::derive(seed, "random-features");
  ParameterTable<float> t;
  int prev = image_channels;
  int i = 0;
  for (int ch : kFeatureChannels) {
    Tensor<float> w({ch, prev, 3, 3});
    const double sd = std::sqrt(2.0 / (prev * 9));
    for (auto& v : w.storage()) v = static_cast<float>(rng.normal() * sd);
    t.add(layer(i) + ".weight", std::move(w));
    t.add(layer(i) + ".bias", Tensor<float>({ch}));
    prev = ch;
    ++i;
  }
  return t;
}

void save_feature_weights(const ParameterTable<float>& weights, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  json tensors = json::array();
  for (const auto& [name, p] : weights) {
    const std::string file = name + ".bin";
    write_raw_f32((fs::path(dir) / file).string(), p.value);
    tensors.push_back({{"name", name}, {"file", file}, {"shape", p.value.shape()}});
  }
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write feature manifest in " + dir);
  out << json{{"format", "pssc-features"}, {"dtype", "float32"}, {"tensors", tensors}}.dump(2) << '\n';
}

ParameterTable<float> load_feature_weights(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("feature weights not found: " + dir + "/manifest.json");
  std::stringstream ss;
  ss << in.rdbuf();
  ParameterTable<float> t;
  try {
    const json m = json::parse(ss.str());
    if (m.at("format") != "pssc-features") throw IoError(dir + ": not a feature-weights manifest");
    for (const auto& e : m.at("tensors")) {
      t.add(e.at("name").get<std::string>(),
            read_raw_f32((fs::path(dir) / e.at("file").get<std::string>()).string(), e.at("shape").get<Shape>()));
    }
  } catch (const json::exception& e) {
    throw IoError(dir + ": malformed feature manifest: " + e.what());
  }
  for (int i = 0; t.contains(layer(i) + ".weight"); ++i) {
    const auto& w = t.at(layer(i) + ".weight").value;
    if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0 || !t.contains(layer(i) + ".bias")) {
      throw IoError(dir + ": layer " + layer(i) + " is not an odd square conv with bias");
    }
  }
  if (!t.contains("conv0.weight")) throw IoError(dir + ": feature weights need at least conv0");
  return t;
}

PerceptualDistance::PerceptualDistance(const DistanceConfig& config) : config_(config) {
  ParameterTable<float> w;
  if (config.kind == DistanceKind::random_features) {
    w = random_feature_weights(config.image_channels, config.seed);
  } else if (config.kind == DistanceKind::learned_features) {
    if (config.weights_path.empty()) throw std::invalid_argument("learned_features needs a weights path");
    w = load_feature_weights(config.weights_path);
  } else {
    return;
  }
  net_ = w.cast<double>();
  while (net_.contains(layer(num_layers_) + ".weight")) ++num_layers_;
}

Tensor<double> PerceptualDistance::features(const Tensor<double>& images) const {
  Tape<double> tape;
  Var<double> x = tape.constant(images);
  for (int i = 0; i < num_layers_; ++i) {
    const auto& w = net_.at(layer(i) + ".weight").value;
    if (w.dim(1) != x.dim(1)) {
      throw std::invalid_argument("feature layer " + layer(i) + " expects " + std::to_string(w.dim(1)) +
                                  " input channels, got " + std::to_string(x.dim(1)));
    }
    x = ops::conv2d(x, tape.constant(w), tape.constant(net_.at(layer(i) + ".bias").value), 1.0);
    x = ops::leaky_relu(x, 0.2);
    if (x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0) x = ops::avgpool2x(x);
  }
  return x.value();
}

std::vector<double> PerceptualDistance::batch(const Tensor<double>& a, const Tensor<double>& b) const {
  if (a.shape() != b.shape() || a.rank() != 4) {
    throw std::invalid_argument("distance inputs must be equally shaped [N,C,H,W] batches, got " +
                                shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const int n = a.dim(0);
  std::vector<double> out(static_cast<std::size_t>(n));
  if (n == 0) return out;
  const bool pixel = config_.kind == DistanceKind::pixel_l1 || config_.kind == DistanceKind::pixel_l2;
  const Tensor<double> fa = pixel ? a : features(a);
  const Tensor<double> fb = pixel ? b : features(b);
  const std::size_t per = fa.size() / static_cast<std::size_t>(n);
  for (int i = 0; i < n; ++i) {
    const double* pa = fa.data() + static_cast<std::size_t>(i) * per;
    const double* pb = fb.data() + static_cast<std::size_t>(i) * per;
    double acc = 0;
    if (config_.kind == DistanceKind::pixel_l1) {
      for (std::size_t k = 0; k < per; ++k) acc += std::abs(pa[k] - pb[k]);
      out[static_cast<std::size_t>(i)] = acc / static_cast<double>(per);
    } else {
      for (std::size_t k = 0; k < per; ++k) acc += (pa[k] - pb[k]) * (pa[k] - pb[k]);
      out[static_cast<std::size_t>(i)] = std::sqrt(acc / static_cast<double>(per));
    }
  }
  return out;
}

double PerceptualDistance::operator()(const Tensor<double>& a, const Tensor<double>& b) const {
  return batch(as_batch(a), as_batch(b))[0];
}

double random_features_distance(const Tensor<double>& a, const Tensor<double>& b, std::uint64_t seed) {
  const int channels = a.rank() == 4 ? a.dim(1) : a.dim(0);
  return PerceptualDistance({DistanceKind::random_features, seed, {}, channels})(a, b);
}

}  // namespace pssc
