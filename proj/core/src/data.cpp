#include "pssc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "json.hpp"
#include "pssc/error.hpp"
#include "pssc/npz.hpp"

namespace pssc {
namespace {

using json = nlohmann::json;

constexpr const char* kKnownFactors[] = {"x_position", "y_position", "scale", "intensity", "aspect", "background"};
constexpr long kMaxLookup = 1L << 26;

// Fraction in [0,1] for level v of a factor with `size` levels (0.5 if constant).
double level(int v, int size) { return size > 1 ? static_cast<double>(v) / (size - 1) : 0.5; }

// Area of [lo,hi] covered by the unit pixel [p, p+1].
double coverage(double lo, double hi, int p) {
  return std::clamp(std::min(hi, p + 1.0) - std::max(lo, static_cast<double>(p)), 0.0, 1.0);
}

}  // namespace

FactorDataset::FactorDataset(int channels, int height, int width, std::vector<std::uint8_t> pixels)
    : channels_(channels), height_(height), width_(width), pixels_(std::move(pixels)) {
  const std::size_t per = static_cast<std::size_t>(channels) * height * width;
  if (per == 0 || pixels_.size() % per != 0) throw std::invalid_argument("pixel buffer does not match image shape");
  num_images_ = static_cast<int>(pixels_.size() / per);
}

FactorDataset::FactorDataset(int channels, int height, int width, std::vector<std::uint8_t> pixels,
                             std::vector<std::string> factor_names, std::vector<int> factor_sizes,
                             std::vector<std::int32_t> factor_values)
    : FactorDataset(channels, height, width, std::move(pixels)) {
  factor_names_ = std::move(factor_names);
  factor_sizes_ = std::move(factor_sizes);
  factor_values_ = std::move(factor_values);
  const std::size_t f = factor_sizes_.size();
  if (f == 0 || factor_names_.size() != f) throw std::invalid_argument("factor names and sizes disagree");
  if (factor_values_.size() != static_cast<std::size_t>(num_images_) * f) {
    throw std::invalid_argument("factor value table must be N x F");
  }
  long grid = 1;
  for (int s : factor_sizes_) {
    if (s < 1) throw std::invalid_argument("factor sizes must be positive");
    grid *= s;
    if (grid > kMaxLookup) throw std::invalid_argument("factor grid too large to index");
  }
  lookup_.assign(static_cast<std::size_t>(grid), -1);
  std::vector<int> vals(f);
  for (int i = 0; i < num_images_; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      vals[j] = factor_values_[static_cast<std::size_t>(i) * f + j];
      if (vals[j] < 0 || vals[j] >= factor_sizes_[j]) throw std::invalid_argument("factor value out of range");
    }
    long code = 0;
    for (std::size_t j = 0; j < f; ++j) code = code * factor_sizes_[j] + vals[j];
    if (lookup_[static_cast<std::size_t>(code)] < 0) lookup_[static_cast<std::size_t>(code)] = i;
  }
}

int FactorDataset::factor_value(int image, int factor) const {
  return factor_values_.at(static_cast<std::size_t>(image) * factor_sizes_.size() + factor);
}

int FactorDataset::find(const std::vector<int>& values) const {
  if (values.size() != factor_sizes_.size()) throw std::invalid_argument("factor tuple has wrong length");
  long code = 0;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j] < 0 || values[j] >= factor_sizes_[j]) return -1;
    code = code * factor_sizes_[j] + values[j];
  }
  return lookup_[static_cast<std::size_t>(code)];
}

Tensor<float> FactorDataset::images(const std::vector<int>& indices) const {
  const std::size_t per = static_cast<std::size_t>(channels_) * height_ * width_;
  Tensor<float> out({static_cast<int>(indices.size()), channels_, height_, width_});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const int i = indices[b];
    if (i < 0 || i >= num_images_) throw std::out_of_range("image index out of range");
    const std::uint8_t* src = pixels_.data() + static_cast<std::size_t>(i) * per;
    float* dst = out.data() + b * per;
    for (std::size_t p = 0; p < per; ++p) dst[p] = static_cast<float>(src[p]) / 127.5f - 1.0f;
  }
  return out;
}

FactorDataset load_dsprites(const std::string& path) {
  auto arrays = read_npz(path, {"imgs", "latents_classes"});
  NpyArray& imgs = arrays.at("imgs");
  const NpyArray& lat = arrays.at("latents_classes");
  const std::string want = "expected imgs uint8 [N,64,64] and latents_classes int64 [N,6]";
  if (imgs.descr != "|u1" || imgs.shape.size() != 3 || imgs.shape[1] != 64 || imgs.shape[2] != 64 ||
      imgs.fortran_order) {
    throw IoError(path + ": bad imgs array; " + want);
  }
  if (lat.descr != "<i8" || lat.shape.size() != 2 || lat.shape[1] != 6 || lat.shape[0] != imgs.shape[0] ||
      lat.fortran_order) {
    throw IoError(path + ": bad latents_classes array; " + want);
  }
  const std::size_t n = imgs.shape[0];
  std::vector<std::int32_t> values(n * 5);
  std::vector<int> sizes(5, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < 5; ++j) {
      std::int64_t v;
      std::memcpy(&v, lat.bytes.data() + (i * 6 + j + 1) * 8, 8);
      if (v < 0 || v > 1000) throw IoError(path + ": latent class out of range");
      values[i * 5 + j] = static_cast<std::int32_t>(v);
      sizes[j] = std::max(sizes[j], static_cast<int>(v) + 1);
    }
  }
  for (auto& p : imgs.bytes) {
    if (p > 1) throw IoError(path + ": imgs must be binary {0,1}");
    p = p ? 255 : 0;
  }
  return FactorDataset(1, 64, 64, std::move(imgs.bytes), {"shape", "scale", "orientation", "x_position", "y_position"},
                       std::move(sizes), std::move(values));
}

ProceduralSpec procedural_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("dataset spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("dataset spec must be a JSON object");
  ProceduralSpec s;
  for (auto& [key, v] : j.items()) {
    if (key == "factors") {
      if (!v.is_array()) throw std::invalid_argument("dataset spec: factors must be an array");
      for (auto& f : v) {
        FactorSpec fs;
        for (auto& [fk, fv] : f.items()) {
          if (fk == "name") fs.name = fv.get<std::string>();
          else if (fk == "size") fs.size = fv.get<int>();
          else throw std::invalid_argument("dataset spec: unknown factor key '" + fk + "'");
        }
        s.factors.push_back(fs);
      }
    } else if (key == "image_size") {
      s.image_size = v.get<int>();
    } else if (key == "seed") {
      s.seed = v.get<std::uint64_t>();
    } else if (key == "max_images") {
      s.max_images = v.get<long>();
    } else {
      throw std::invalid_argument("dataset spec: unknown key '" + key + "'");
    }
  }
  return s;
}

std::string procedural_spec_to_json(const ProceduralSpec& s) {
  json factors = json::array();
  for (const auto& f : s.factors) factors.push_back({{"name", f.name}, {"size", f.size}});
  return json{{"factors", factors}, {"image_size", s.image_size}, {"seed", s.seed}, {"max_images", s.max_images}}
      .dump();
}

FactorDataset make_procedural_dataset(const ProceduralSpec& spec) {
  const int nf = static_cast<int>(spec.factors.size());
  if (nf < 3 || nf > 6) throw std::invalid_argument("procedural dataset needs 3 to 6 factors");
  if (spec.image_size < 16) throw std::invalid_argument("procedural image_size must be >= 16");
  int slot[6];
  std::fill(std::begin(slot), std::end(slot), -1);
  long total = 1;
  for (int j = 0; j < nf; ++j) {
    const auto& f = spec.factors[j];
    const auto it = std::find(std::begin(kKnownFactors), std::end(kKnownFactors), f.name);
    if (it == std::end(kKnownFactors)) throw std::invalid_argument("unknown procedural factor '" + f.name + "'");
    const auto k = static_cast<std::size_t>(it - std::begin(kKnownFactors));
    if (slot[k] >= 0) throw std::invalid_argument("duplicate procedural factor '" + f.name + "'");
    if (f.size < 1) throw std::invalid_argument("factor '" + f.name + "' needs size >= 1");
    slot[k] = j;
    total *= f.size;
    if (total > spec.max_images) {
      throw std::invalid_argument("factor grid exceeds the cap of " + std::to_string(spec.max_images) + " images");
    }
  }

  const int s = spec.image_size;
  const int n = static_cast<int>(total);
  std::vector<int> sizes(nf);
  std::vector<std::string> names(nf);
  for (int j = 0; j < nf; ++j) {
    sizes[j] = spec.factors[j].size;
    names[j] = spec.factors[j].name;
  }
  std::vector<std::int32_t> values(static_cast<std::size_t>(n) * nf);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * s * s);
  RngStream jitter = RngStream::derive(spec.seed, "procedural-jitter");

  // Largest half-extent over all scale/aspect levels keeps shapes in frame.
  const double side_min = 0.12 * s, side_max = 0.28 * s;
  const double aspect_max = 1.5;
  const double half_max = 0.5 * side_max * std::sqrt(aspect_max) + 1.0;
  std::vector<int> v(nf);
  std::vector<double> row_cov(s), col_cov(s);
  for (int i = 0; i < n; ++i) {
    int rem = i;
    for (int j = nf - 1; j >= 0; --j) {
      v[j] = rem % sizes[j];
      rem /= sizes[j];
    }
    std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(i) * nf);
    auto frac = [&](int k) { return slot[k] >= 0 ? level(v[slot[k]], sizes[slot[k]]) : 0.5; };
    const double side = side_min + (side_max - side_min) * frac(2);
    const double aspect = std::pow(aspect_max, 2.0 * frac(4) - 1.0);
    const double fg = 0.45 + 0.55 * frac(3);
    const double bg = slot[5] >= 0 ? 0.3 * frac(5) : 0.0;
    // Sub-pixel jitter makes the rendering depend on the seed without
    // moving any factor level across its neighbours.
    const double jx = 0.25 * (2 * jitter.uniform() - 1), jy = 0.25 * (2 * jitter.uniform() - 1);
    const double cx = half_max + (s - 2 * half_max) * frac(0) + jx;
    const double cy = half_max + (s - 2 * half_max) * frac(1) + jy;
    const double hw = 0.5 * side * std::sqrt(aspect), hh = 0.5 * side / std::sqrt(aspect);
    for (int p = 0; p < s; ++p) {
      col_cov[p] = coverage(cx - hw, cx + hw, p);
      row_cov[p] = coverage(cy - hh, cy + hh, p);
    }
    std::uint8_t* img = pixels.data() + static_cast<std::size_t>(i) * s * s;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double a = row_cov[y] * col_cov[x];
        img[y * s + x] = static_cast<std::uint8_t>(std::lround(255.0 * (bg + (fg - bg) * a)));
      }
    }
  }
  return FactorDataset(1, s, s, std::move(pixels), std::move(names), std::move(sizes), std::move(values));
}

std::vector<int> sample_indices(const FactorDataset& dataset, int batch_size, RngStream& rng) {
  if (dataset.size() == 0) throw std::invalid_argument("sample_batch: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  std::vector<int> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = rng.uniform_int(dataset.size());
  return idx;
}

Tensor<float> sample_batch(const FactorDataset& dataset, int batch_size, RngStream& rng) {
  return dataset.images(sample_indices(dataset, batch_size, rng));
}

FixedFactorBatch fix_factor_batch(const FactorDataset& dataset, int factor_index, RngStream& rng, int batch_size) {
  if (!dataset.has_factors()) throw UnsupportedOperation("dataset has no factor metadata");
  if (factor_index < 0 || factor_index >= dataset.num_factors()) {
    throw std::invalid_argument("factor index out of range");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  const auto& sizes = dataset.factor_sizes();
  FixedFactorBatch out;
  out.fixed_value = rng.uniform_int(sizes[static_cast<std::size_t>(factor_index)]);
  std::vector<int> vals(sizes.size());
  constexpr int kMaxAttempts = 1000;
  for (int b = 0; b < batch_size; ++b) {
    int idx = -1;
    for (int attempt = 0; attempt < kMaxAttempts && idx < 0; ++attempt) {
      for (std::size_t j = 0; j < sizes.size(); ++j) vals[j] = rng.uniform_int(sizes[j]);
      vals[static_cast<std::size_t>(factor_index)] = out.fixed_value;
      idx = dataset.find(vals);
    }
    if (idx < 0) throw UnsupportedOperation("factor grid too sparse to draw a fixed-factor batch");
    out.indices.push_back(idx);
  }
  out.images = dataset.images(out.indices);
  return out;
}

}  // namespace pssc
