#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <set>

#include "pssc/data.hpp"
#include "pssc/error.hpp"
#include "pssc/npz.hpp"
#include "test_util.hpp"

using namespace pssc;
using namespace pssc::testing;

namespace {

const std::string kData = PSSC_TEST_DATA;

template <typename T>
std::vector<T> as_values(const NpyArray& a) {
  std::vector<T> out(a.num_elements());
  std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
  return out;
}

void check_tiny(const std::map<std::string, NpyArray>& arrays) {
  const auto& a = arrays.at("a");
  EXPECT_EQ(a.descr, "<f4");
  EXPECT_EQ(a.shape, (std::vector<std::size_t>{2, 3, 4}));
  const auto av = as_values<float>(a);
  for (int i = 0; i < 24; ++i) EXPECT_EQ(av[static_cast<std::size_t>(i)], 0.5f * i);
  const auto& b = arrays.at("b");
  EXPECT_EQ(b.descr, "<i8");
  EXPECT_EQ(as_values<std::int64_t>(b), (std::vector<std::int64_t>{1, -2, 3, 4}));
}

ProceduralSpec spec_8844(std::uint64_t seed = 3) {
  return ProceduralSpec{{{"x_position", 8}, {"y_position", 8}, {"scale", 4}, {"intensity", 4}}, 64, seed};
}

double centroid_x(const Tensor<float>& img) {
  double m = 0, mx = 0;
  for (int y = 0; y < img.dim(2); ++y) {
    for (int x = 0; x < img.dim(3); ++x) {
      const double w = img.at(0, 0, y, x) + 1.0;
      m += w;
      mx += w * x;
    }
  }
  return mx / m;
}

}  // namespace

TEST(Npz, ReadsNumpyStoredAndDeflated) {
  check_tiny(read_npz(kData + "/tiny_stored.npz"));
  check_tiny(read_npz(kData + "/tiny_deflate.npz"));
  EXPECT_EQ(read_npz(kData + "/tiny_deflate.npz", {"b"}).size(), 1u);
}

TEST(Npz, MissingKeyOrFile) {
  EXPECT_THROW(read_npz(kData + "/tiny_stored.npz", {"zz"}), IoError);
  EXPECT_THROW(read_npz(kData + "/nope.npz"), IoError);
}

TEST(Npz, CorruptedMemberFailsCrc) {
  const auto dir = temp_dir();
  std::string bytes = read_file(kData + "/tiny_stored.npz");
  // The first member's payload ends with the float data of `a`; flip a byte in it.
  const auto pos = bytes.find("NUMPY");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 200] = static_cast<char>(bytes[pos + 200] ^ 0x5a);
  write_file(dir / "bad.npz", bytes);
  EXPECT_THROW(read_npz((dir / "bad.npz").string()), IoError);
  write_file(dir / "trunc.npz", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_npz((dir / "trunc.npz").string()), IoError);
}

TEST(Npz, WriteReadRoundTrip) {
  const auto dir = temp_dir();
  auto arrays = read_npz(kData + "/tiny_stored.npz");
  for (bool compress : {false, true}) {
    const auto path = (dir / (compress ? "c.npz" : "s.npz")).string();
    write_npz(path, arrays, compress);
    check_tiny(read_npz(path));
  }
  EXPECT_EQ(read_file(dir / "c.npz"), (write_npz((dir / "c2.npz").string(), arrays, true), read_file(dir / "c2.npz")));
}

TEST(Npy, EncodeParseRoundTrip) {
  NpyArray a{"<i8", {2, 1}, false, std::vector<std::uint8_t>(16, 7)};
  const auto b = parse_npy(encode_npy(a));
  EXPECT_EQ(b.descr, a.descr);
  EXPECT_EQ(b.shape, a.shape);
  EXPECT_EQ(b.bytes, a.bytes);
  EXPECT_THROW(parse_npy({'x', 'y'}), IoError);
}

TEST(DSprites, LoadsPublishedLayout) {
  const auto d = load_dsprites(kData + "/dsprites_tiny.npz");
  EXPECT_EQ(d.size(), 24);
  EXPECT_EQ(d.factor_sizes(), (std::vector<int>{3, 2, 1, 2, 2}));
  EXPECT_EQ(d.factor_names()[3], "x_position");
  int prod = 1;
  for (int s : d.factor_sizes()) prod *= s;
  EXPECT_EQ(d.size(), prod);
  std::vector<int> all(24);
  for (int i = 0; i < 24; ++i) all[static_cast<std::size_t>(i)] = i;
  std::set<float> levels;
  const auto imgs = d.images(all);
  for (float v : imgs.storage()) levels.insert(v);
  EXPECT_EQ(levels, (std::set<float>{-1.0f, 1.0f}));
  // shape 2, scale 1, x 1, y 0 was drawn at (x0=40, y0=10) with side 12.
  const int idx = d.find({2, 1, 0, 1, 0});
  ASSERT_GE(idx, 0);
  const auto img = d.images({idx});
  EXPECT_EQ(img.at(0, 0, 10, 40), 1.0f);
  EXPECT_EQ(img.at(0, 0, 21, 51), 1.0f);
  EXPECT_EQ(img.at(0, 0, 22, 51), -1.0f);
}

TEST(DSprites, WrongLayoutIsIoError) {
  EXPECT_THROW(load_dsprites(kData + "/tiny_stored.npz"), IoError);
  EXPECT_THROW(load_dsprites(kData + "/missing.npz"), IoError);
}

TEST(DSprites, FullArchiveWhenAvailable) {
  const char* path = std::getenv("PSSC_DSPRITES_NPZ");
  if (path == nullptr) GTEST_SKIP() << "set PSSC_DSPRITES_NPZ to the published archive to run";
  const auto d = load_dsprites(path);
  EXPECT_EQ(d.size(), 737280);
  EXPECT_EQ(d.factor_sizes(), (std::vector<int>{3, 6, 40, 32, 32}));
}

TEST(Procedural, GridSizeAndFactorConsistency) {
  const auto d = make_procedural_dataset(spec_8844());
  EXPECT_EQ(d.size(), 1024);
  EXPECT_EQ(d.factor_sizes(), (std::vector<int>{8, 8, 4, 4}));
  std::set<std::vector<int>> seen;
  for (int i = 0; i < d.size(); ++i) {
    std::vector<int> v;
    for (int f = 0; f < 4; ++f) v.push_back(d.factor_value(i, f));
    ASSERT_EQ(d.find(v), i);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 1024u);
}

TEST(Procedural, DeterministicBytes) {
  const auto a = make_procedural_dataset(spec_8844(9));
  const auto b = make_procedural_dataset(spec_8844(9));
  EXPECT_EQ(a.pixels(), b.pixels());
  EXPECT_NE(a.pixels(), make_procedural_dataset(spec_8844(10)).pixels());
}

TEST(Procedural, XPositionMovesTheShapeRight) {
  const auto d = make_procedural_dataset(spec_8844());
  for (int y : {0, 7}) {
    for (int s : {0, 3}) {
      const auto left = d.images({d.find({0, y, s, 2})});
      const auto right = d.images({d.find({7, y, s, 2})});
      EXPECT_GT(centroid_x(right), centroid_x(left) + 5.0);
    }
  }
}

TEST(Procedural, PixelsInRange) {
  const auto d = make_procedural_dataset(ProceduralSpec{{{"x_position", 3}, {"scale", 2}, {"background", 2}}, 32, 1});
  EXPECT_EQ(d.height(), 32);
  std::vector<int> all(static_cast<std::size_t>(d.size()));
  for (int i = 0; i < d.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  const auto imgs = d.images(all);
  for (float v : imgs.storage()) {
    ASSERT_GE(v, -1.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Procedural, Validation) {
  auto s = spec_8844();
  s.max_images = 1000;
  EXPECT_THROW(make_procedural_dataset(s), std::invalid_argument);
  EXPECT_THROW(make_procedural_dataset(ProceduralSpec{{{"x_position", 4}, {"y_position", 4}}, 64, 0}),
               std::invalid_argument);
  EXPECT_THROW(make_procedural_dataset(ProceduralSpec{{{"x_position", 4}, {"hue", 4}, {"scale", 2}}, 64, 0}),
               std::invalid_argument);
}

TEST(Procedural, SpecJson) {
  const auto s = procedural_spec_from_json(
      R"({"factors": [{"name": "x_position", "size": 5}, {"name": "scale", "size": 2}, {"name": "intensity", "size": 3}], "image_size": 32, "seed": 4})");
  EXPECT_EQ(s.factors.size(), 3u);
  EXPECT_EQ(s.factors[0].size, 5);
  EXPECT_EQ(s.image_size, 32);
  EXPECT_EQ(s.seed, 4u);
  const auto r = procedural_spec_from_json(procedural_spec_to_json(s));
  EXPECT_EQ(r.factors[2].name, "intensity");
  EXPECT_THROW(procedural_spec_from_json(R"({"factors": [], "colour": 1})"), std::invalid_argument);
  EXPECT_THROW(procedural_spec_from_json("{not json"), std::invalid_argument);
}

TEST(SampleBatch, ShapeDeterminismAndUniformity) {
  const auto d = make_procedural_dataset(ProceduralSpec{{{"x_position", 2}, {"y_position", 2}, {"scale", 2}}, 16, 0});
  RngStream a(5), b(5);
  const auto x = sample_batch(d, 6, a);
  EXPECT_EQ(x.shape(), (Shape{6, 1, 16, 16}));
  EXPECT_EQ(x, sample_batch(d, 6, b));

  RngStream r(6);
  std::vector<int> counts(8, 0);
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(sample_indices(d, 1, r)[0])];
  const double sigma = std::sqrt(10000 * (1.0 / 8) * (7.0 / 8));
  for (int c : counts) EXPECT_LT(std::abs(c - 1250.0), 3 * sigma);

  EXPECT_THROW(sample_batch(FactorDataset(), 2, r), std::invalid_argument);
}

TEST(FixFactorBatch, SharedValueOthersVary) {
  const auto d = make_procedural_dataset(spec_8844());
  RngStream rng(7);
  std::vector<int> fixed_counts(4, 0);
  for (int call = 0; call < 400; ++call) {
    const int f = call % 4;
    const auto fb = fix_factor_batch(d, f, rng, 16);
    ASSERT_EQ(fb.images.dim(0), 16);
    ASSERT_EQ(fb.indices.size(), 16u);
    std::vector<std::set<int>> distinct(4);
    for (int idx : fb.indices) {
      ASSERT_EQ(d.factor_value(idx, f), fb.fixed_value);
      for (int g = 0; g < 4; ++g) distinct[static_cast<std::size_t>(g)].insert(d.factor_value(idx, g));
    }
    for (int g = 0; g < 4; ++g) {
      if (g != f) ASSERT_GE(distinct[static_cast<std::size_t>(g)].size(), 2u);
    }
    if (f == 2) ++fixed_counts[static_cast<std::size_t>(fb.fixed_value)];
  }
  // 100 draws of a 4-valued factor.
  const double sigma = std::sqrt(100 * 0.25 * 0.75);
  for (int c : fixed_counts) EXPECT_LT(std::abs(c - 25.0), 3 * sigma);
}

TEST(FixFactorBatch, NeedsMetadata) {
  FactorDataset plain(1, 2, 2, std::vector<std::uint8_t>(8, 0));
  RngStream rng(0);
  EXPECT_THROW(fix_factor_batch(plain, 0, rng, 4), UnsupportedOperation);
}
