#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "pssc/checkpoint.hpp"
#include "pssc/error.hpp"
#include "pssc/metrics.hpp"
#include "test_util.hpp"

using namespace pssc;
using namespace pssc::testing;

namespace {

ModelBundle fixture(const ArchConfig& arch) {
  RngStream rng(0);
  return init_bundle(arch, rng);
}

TplReport tpl_of(const ModelBundle& b, TplOptions opts = {}, std::uint64_t seed = 1) {
  RngStream rng(seed);
  return tpl_total(bundle_generator(b), b.arch.latent_dim, PerceptualDistance(), opts, rng);
}

// Rank of each value: number of smaller entries plus the mean position
// among equal ones (1-based).
std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r;
  for (double x : v) {
    int less = 0, equal = 0;
    for (double y : v) {
      less += y < x;
      equal += y == x;
    }
    r.push_back(less + (equal + 1) / 2.0);
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

// ---- TPL ------------------------------------------------------------------

TEST(Tpl, BlockOracleAxisAligned) {
  const auto rep = tpl_of(fixture(block_oracle_arch(0)));
  ASSERT_EQ(rep.tpl_per_dim.size(), 2u);
  EXPECT_NEAR(rep.tpl_per_dim[0], 4.0, 1e-9);
  EXPECT_NEAR(rep.tpl_per_dim[1], 4.0, 1e-9);
  EXPECT_NEAR(rep.tpl_total, 8.0, 1e-6);
  EXPECT_EQ(rep.num_active, 2);
  EXPECT_EQ(rep.segments, 50);
  EXPECT_EQ(rep.threshold, 0.01);
}

TEST(Tpl, BlockOracleRotated45) {
  const auto rep = tpl_of(fixture(block_oracle_arch(45)));
  EXPECT_NEAR(rep.tpl_total, 8.0 * std::numbers::sqrt2, 1e-6);
  EXPECT_GT(rep.tpl_total, 8.0);
}

TEST(Tpl, ConstantGeneratorIsZero) {
  const auto rep = tpl_of(fixture(constant_arch(3)));
  EXPECT_EQ(rep.tpl_total, 0.0);
  EXPECT_EQ(rep.num_active, 0);
  for (double t : rep.tpl_per_dim) EXPECT_EQ(t, 0.0);
}

TEST(Tpl, InvariantToNumBaseAndSegmentDoubling) {
  const auto b = fixture(block_oracle_arch(30));
  TplOptions o;
  const PerceptualDistance dist;
  RngStream r1(1), r2(2), r3(3);
  const double ref = tpl_dim(bundle_generator(b), 2, 0, dist, o, r1);
  o.num_base = 3;
  EXPECT_NEAR(tpl_dim(bundle_generator(b), 2, 0, dist, o, r2), ref, 1e-9);
  o.segments = 100;
  EXPECT_NEAR(tpl_dim(bundle_generator(b), 2, 0, dist, o, r3), ref, 1e-9);
}

TEST(Tpl, ArbitraryRotationClosedForm) {
  for (double deg : {10.0, 60.0, 135.0, -20.0}) {
    const double a = deg * std::numbers::pi / 180;
    EXPECT_NEAR(tpl_of(fixture(block_oracle_arch(deg))).tpl_total, 8 * (std::abs(std::cos(a)) + std::abs(std::sin(a))),
                1e-6)
        << deg;
  }
}

TEST(Tpl, MonotoneInThreshold) {
  RngStream init(4);
  const auto net = init_bundle(tiny_arch(4), init);
  double prev = std::numeric_limits<double>::infinity();
  for (double s : {0.0, 0.01, 0.05, 0.2, 0.5, 1.0, 5.0}) {
    TplOptions o;
    o.threshold = s;
    o.num_base = 2;
    o.segments = 8;
    const auto rep = tpl_of(net, o);
    EXPECT_LE(rep.tpl_total, prev) << s;
    double check = 0;
    for (std::size_t i = 0; i < rep.tpl_per_dim.size(); ++i) {
      EXPECT_EQ(rep.active[i], rep.tpl_per_dim[i] >= s);
      if (rep.active[i]) check += rep.tpl_per_dim[i];
    }
    EXPECT_NEAR(rep.tpl_total, check, 1e-12);
    prev = rep.tpl_total;
  }
}

TEST(Tpl, Preconditions) {
  const auto b = fixture(block_oracle_arch());
  TplOptions o;
  o.segments = 1;
  RngStream rng(1);
  EXPECT_THROW(tpl_dim(bundle_generator(b), 2, 0, PerceptualDistance(), o, rng), std::invalid_argument);
  o.segments = 50;
  o.threshold = -1;
  EXPECT_THROW(tpl_total(bundle_generator(b), 2, PerceptualDistance(), o, rng), std::invalid_argument);
}

// ---- dis_cum ----------------------------------------------------------------

TEST(DisCum, BlockOracleShape) {
  const auto b = fixture(block_oracle_arch());
  const auto alphas = alpha_range(-175, 180, 5);
  ASSERT_EQ(alphas.size(), 72u);
  const auto curve = dis_cum_sweep(bundle_generator(b), 2, 0, 1, PerceptualDistance(), 50, alphas);
  std::vector<double> minima;
  for (auto i : circular_local_minima(curve)) minima.push_back(alphas[i]);
  EXPECT_EQ(minima, (std::vector<double>{-90, 0, 90, 180}));
  const auto at = [&](double deg) {
    return curve[static_cast<std::size_t>(std::find(alphas.begin(), alphas.end(), deg) - alphas.begin())];
  };
  EXPECT_NEAR(at(45) / at(0), std::numbers::sqrt2, 1e-3);
  // 50 x 50 pairs, each a mean-abs step of (|cos|+|sin|) * 0.16 / 2.
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double a = alphas[i] * std::numbers::pi / 180;
    EXPECT_NEAR(curve[i], 2500 * 0.08 * (std::abs(std::cos(a)) + std::abs(std::sin(a))), 1e-8) << alphas[i];
  }
  for (double deg = -175; deg <= 0; deg += 5) EXPECT_NEAR(at(deg), at(deg + 180), 1e-9 * at(deg));
  // maxima at the odd multiples of 45 degrees
  EXPECT_GT(at(45), at(40));
  EXPECT_GT(at(45), at(50));
  EXPECT_GT(at(-135), at(-130));
}

TEST(DisCum, ConstantIsZeroAndErrors) {
  const auto b = fixture(constant_arch(3));
  const auto curve = dis_cum_sweep(bundle_generator(b), 3, 0, 2, PerceptualDistance(), 10, {0, 30, 60});
  for (double v : curve) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(dis_cum_sweep(bundle_generator(b), 3, 1, 1, PerceptualDistance(), 10, {0}), std::invalid_argument);
  EXPECT_THROW(dis_cum_sweep(bundle_generator(b), 3, 0, 3, PerceptualDistance(), 10, {0}), std::invalid_argument);
  EXPECT_THROW(dis_cum_sweep(bundle_generator(b), 3, 0, 1, PerceptualDistance(), 1, {0}), std::invalid_argument);
}

TEST(DisCum, AlphaRangeAndMinima) {
  EXPECT_EQ(alpha_range(-10, 10, 5), (std::vector<double>{-10, -5, 0, 5, 10}));
  EXPECT_EQ(alpha_range(0, 1, 0.25).size(), 5u);
  EXPECT_THROW(alpha_range(0, 10, 0), std::invalid_argument);
  EXPECT_EQ(circular_local_minima({3, 1, 2, 0, 4}), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(circular_local_minima({0, 1, 2, 1}), (std::vector<std::size_t>{0}));
  EXPECT_TRUE(circular_local_minima({1, 1, 1}).empty());
}

// ---- PPL --------------------------------------------------------------------

TEST(Ppl, ConstantIsZero) {
  RngStream rng(1);
  EXPECT_EQ(ppl(bundle_generator(fixture(constant_arch())), 3, PerceptualDistance(), 16, 1e-4, rng), 0.0);
}

TEST(Ppl, LinearGeneratorClosedForm) {
  // The block oracle is linear in the code; with RMS pixel distance each pair
  // contributes |b - a| / sqrt(2) / eps regardless of t.
  const auto b = fixture(block_oracle_arch());
  std::vector<Tensor<double>> seen;
  const GeneratorFn spy = [&](const Tensor<double>& codes) {
    seen.push_back(codes);
    return generate_f64(b, codes);
  };
  DistanceConfig l2;
  l2.kind = DistanceKind::pixel_l2;
  const double eps = 1e-3;
  RngStream rng(7);
  const double value = ppl(spy, 2, PerceptualDistance(l2), 32, eps, rng);
  ASSERT_EQ(seen.size(), 2u);
  double expected = 0;
  for (int p = 0; p < 32; ++p) {
    const double d0 = (seen[1][p * 2] - seen[0][p * 2]) / eps, d1 = (seen[1][p * 2 + 1] - seen[0][p * 2 + 1]) / eps;
    expected += std::hypot(d0, d1) / std::numbers::sqrt2 / eps;
  }
  EXPECT_NEAR(value, expected / 32, 1e-6 * value);

  // Same pair, different t: identical contribution.
  RngStream again(7);
  EXPECT_EQ(ppl(bundle_generator(b), 2, PerceptualDistance(l2), 32, eps, again), value);
}

TEST(Ppl, StabilizesWithMorePairs) {
  RngStream init(2);
  const auto net = init_bundle(tiny_arch(4), init);
  RngStream r1(5), r2(6);
  const double a = ppl(bundle_generator(net), 4, PerceptualDistance(), 512, 1e-2, r1);
  const double b = ppl(bundle_generator(net), 4, PerceptualDistance(), 1024, 1e-2, r2);
  EXPECT_GT(a, 0);
  EXPECT_LT(std::abs(a - b) / b, 0.05);
}

TEST(Ppl, RejectsBadEpsilon) {
  RngStream rng(1);
  EXPECT_THROW(ppl(bundle_generator(fixture(constant_arch())), 3, PerceptualDistance(), 4, 0.0, rng),
               std::invalid_argument);
}

// ---- FactorVAE metric -----------------------------------------------------

namespace {

struct OracleEncoder {
  const FactorDataset* data;
  std::map<std::vector<std::uint8_t>, int> index;
  std::vector<int> perm;
  double noise;
  RngStream rng{17};

  explicit OracleEncoder(const FactorDataset& d, std::vector<int> p, double sigma)
      : data(&d), perm(std::move(p)), noise(sigma) {
    const std::size_t per = static_cast<std::size_t>(d.channels()) * d.height() * d.width();
    for (int i = 0; i < d.size(); ++i) {
      std::vector<std::uint8_t> px(d.pixels().begin() + static_cast<long>(i * per),
                                   d.pixels().begin() + static_cast<long>((i + 1) * per));
      index.emplace(std::move(px), i);
    }
  }

  Tensor<double> operator()(const Tensor<float>& images) {
    const int n = images.dim(0), f = data->num_factors();
    const std::size_t per = images.size() / static_cast<std::size_t>(n);
    Tensor<double> out({n, f});
    for (int i = 0; i < n; ++i) {
      std::vector<std::uint8_t> px(per);
      for (std::size_t k = 0; k < per; ++k) {
        px[k] = static_cast<std::uint8_t>(std::lround((images[i * per + k] + 1.0) * 127.5));
      }
      const int img = index.at(px);
      for (int j = 0; j < f; ++j) {
        out[static_cast<std::size_t>(i) * f + j] =
            data->factor_value(img, perm[static_cast<std::size_t>(j)]) + noise * rng.normal();
      }
    }
    return out;
  }
};

FactorDataset fvm_data() {
  return make_procedural_dataset(ProceduralSpec{{{"x_position", 5}, {"y_position", 5}, {"scale", 3}, {"intensity", 3}}, 32, 4});
}

}  // namespace

TEST(Fvm, PermutedOracleScoresOne) {
  const auto data = fvm_data();
  OracleEncoder enc(data, {2, 0, 3, 1}, 0.01);
  ASSERT_EQ(enc.index.size(), static_cast<std::size_t>(data.size())) << "procedural images must be distinct";
  FvmOptions o;
  o.train_votes = 200;
  o.eval_votes = 100;
  o.global_samples = 2000;
  RngStream rng(3);
  const auto rep = factorvae_metric(std::ref(enc), data, o, rng);
  EXPECT_EQ(rep.accuracy, 1.0);
  EXPECT_EQ(rep.train_accuracy, 1.0);
  EXPECT_EQ(rep.dim_to_factor, (std::vector<int>{2, 0, 3, 1}));
}

TEST(Fvm, NoiseEncoderAtChance) {
  const auto data = fvm_data();
  RngStream noise(21);
  const EncoderFn enc = [&](const Tensor<float>& images) {
    Tensor<double> out({images.dim(0), 6});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = noise.normal();
    return out;
  };
  FvmOptions o;
  o.eval_votes = 400;
  o.global_samples = 2000;
  RngStream rng(4);
  const double p = 0.25, sigma = std::sqrt(p * (1 - p) / o.eval_votes);
  EXPECT_NEAR(factorvae_metric(enc, data, o, rng).accuracy, p, 3 * sigma);
}

TEST(Fvm, CollapsedDimsExcluded) {
  const auto data = fvm_data();
  OracleEncoder inner(data, {0, 1, 2, 3}, 0.01);
  const EncoderFn enc = [&](const Tensor<float>& images) {
    const auto codes = inner(images);
    Tensor<double> out({codes.dim(0), 5});
    for (int i = 0; i < codes.dim(0); ++i) {
      for (int j = 0; j < 4; ++j) out[static_cast<std::size_t>(i) * 5 + j] = codes[static_cast<std::size_t>(i) * 4 + j];
      out[static_cast<std::size_t>(i) * 5 + 4] = 3.0;  // collapsed
    }
    return out;
  };
  FvmOptions o;
  o.train_votes = 100;
  o.eval_votes = 50;
  o.global_samples = 1000;
  RngStream rng(5);
  const auto rep = factorvae_metric(enc, data, o, rng);
  EXPECT_EQ(rep.accuracy, 1.0);
  EXPECT_FALSE(rep.active_dims[4]);
  EXPECT_EQ(rep.dim_to_factor[4], -1);
}

TEST(Fvm, FixtureEncodersAreUsable) {
  const auto data = make_procedural_dataset(ProceduralSpec{{{"x_position", 4}, {"y_position", 2}, {"scale", 3}}, 16, 1});
  FvmOptions o;
  o.train_votes = 50;
  o.eval_votes = 20;
  o.global_samples = 500;
  RngStream rng(1);
  const auto rep = factorvae_metric(bundle_encoder(fixture(block_oracle_arch())), data, o, rng);
  EXPECT_GE(rep.accuracy, 0.0);
  EXPECT_LE(rep.accuracy, 1.0);
}

TEST(Fvm, NeedsFactors) {
  const FactorDataset bare(1, 4, 4, std::vector<std::uint8_t>(32, 0));
  RngStream rng(1);
  EXPECT_THROW(factorvae_metric(bundle_encoder(fixture(constant_arch())), bare, {}, rng), UnsupportedOperation);
}

// ---- Spearman ---------------------------------------------------------------

TEST(Spearman, Orderings) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_THROW(spearman({1, 2}, {1}), std::invalid_argument);
  EXPECT_TRUE(std::isnan(spearman({1, 1, 1}, {1, 2, 3})));
}

TEST(Spearman, TiedExampleMatchesBruteForce) {
  const std::vector<double> x{3, 1, 4, 1, 5}, y{2, 7, 1, 8, 2};
  EXPECT_NEAR(spearman(x, y), pearson(brute_ranks(x), brute_ranks(y)), 1e-12);
  // ranks x = 3, 1.5, 4, 1.5, 5; y = 2.5, 4, 1, 5, 2.5 -> rho = -7.5 / 9.5 by hand
  EXPECT_NEAR(spearman(x, y), -15.0 / 19.0, 1e-12);
}

TEST(Spearman, RandomVectorsMatchBruteForce) {
  RngStream rng(12);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x, y;
    for (int i = 0; i < 9; ++i) {
      x.push_back(rng.uniform_int(4));
      y.push_back(rng.normal());
    }
    const double rho = spearman(x, y);
    if (std::isnan(rho)) continue;
    EXPECT_NEAR(rho, pearson(brute_ranks(x), brute_ranks(y)), 1e-12);
    EXPECT_LE(std::abs(rho), 1.0 + 1e-12);
  }
}

// ---- ranking ----------------------------------------------------------------

class Ranking : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = temp_dir();
    save_bundle(fixture(block_oracle_arch(0)), path("axis"));
    save_bundle(fixture(block_oracle_arch(45)), path("rot45"));
    save_bundle(fixture(constant_arch(3)), path("flat"));
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::filesystem::path dir_;
};

TEST_F(Ranking, AxisAlignedRanksFirst) {
  const auto rows = rank_models({path("rot45"), path("axis")}, {}, {}, 0, 1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].model_dir, path("axis"));
  EXPECT_EQ(rows[0].rank, 1);
  EXPECT_EQ(rows[1].rank, 2);
  EXPECT_NEAR(rows[0].tpl_total, 8, 1e-6);
  EXPECT_NEAR(rows[1].tpl_total, 8 * std::numbers::sqrt2, 1e-6);
}

TEST_F(Ranking, SingleModelAndErrors) {
  const auto rows = rank_models({path("missing"), path("axis"), path("flat")}, {}, {}, 0, 1);
  EXPECT_EQ(rows[0].model_dir, path("axis"));
  EXPECT_EQ(rows[0].rank, 1);
  EXPECT_EQ(rows[1].model_dir, path("flat"));
  EXPECT_EQ(rows[1].status, "filtered");
  EXPECT_EQ(rows[2].status.rfind("error", 0), 0u);
  EXPECT_EQ(rows[2].rank, 0);
}

TEST_F(Ranking, MinActiveFilter) {
  auto arch = tiny_arch(3);
  arch.mask_mode = MaskMode::none;
  RngStream rng(3);
  save_bundle(init_bundle(arch, rng), path("net3"));
  const auto open = rank_models({path("net3")}, {}, {}, 0, 1);
  ASSERT_EQ(open[0].num_active, 3);
  EXPECT_EQ(open[0].status, "ok");
  EXPECT_EQ(rank_models({path("net3")}, {}, {}, 2, 1)[0].status, "ok");
  EXPECT_EQ(rank_models({path("net3")}, {}, {}, 3, 1)[0].status, "filtered");
  EXPECT_EQ(rank_models({path("net3")}, {}, {}, 4, 1)[0].status, "filtered");
}

TEST_F(Ranking, CsvLayout) {
  const auto csv = ranking_csv(rank_models({path("axis"), path("missing")}, {}, {}, 0, 1));
  std::stringstream s(csv);
  std::string header, first, second;
  std::getline(s, header);
  std::getline(s, first);
  std::getline(s, second);
  EXPECT_EQ(header, "model_dir,tpl_total,num_active,tpl_0,tpl_1,status");
  EXPECT_EQ(first, path("axis") + ",8,2,4,4,ok");
  EXPECT_EQ(second.rfind(path("missing") + ",,,,,", 0), 0u);
  EXPECT_EQ(sweep_csv({0, 5}, {1.5, 2}), "alpha_degrees,dis_cum\n0,1.5\n5,2\n");
}
