#include <gtest/gtest.h>

#include <filesystem>

#include "json.hpp"
#include "pssc/checkpoint.hpp"
#include "pssc/error.hpp"
#include "pssc/train.hpp"
#include "test_util.hpp"

using namespace pssc;
using namespace pssc::testing;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

ModelBundle bundle_for(std::uint64_t seed) {
  RngStream rng(seed);
  return init_bundle(tiny_arch(), rng);
}

void edit_manifest(const fs::path& dir, const std::function<void(json&)>& fn) {
  json m = json::parse(read_file(dir / "manifest.json"));
  fn(m);
  write_file(dir / "manifest.json", m.dump());
}

}  // namespace

TEST(Checkpoint, BundleRoundTripIsBitExact) {
  const auto dir = temp_dir();
  const auto b = bundle_for(3);
  save_bundle(b, (dir / "m").string());
  const auto r = load_bundle((dir / "m").string());
  EXPECT_EQ(r.arch, b.arch);
  EXPECT_TRUE(r.generator.same_values(b.generator));
  EXPECT_TRUE(r.discriminator.same_values(b.discriminator));
  EXPECT_TRUE(r.recognizer.same_values(b.recognizer));
}

TEST(Checkpoint, RawFilesAreLittleEndianFloat32) {
  const auto dir = temp_dir();
  write_raw_f32((dir / "t.bin").string(), Tensor<float>({2}, {1.0f, -2.0f}));
  const std::string bytes = read_file(dir / "t.bin");
  ASSERT_EQ(bytes.size(), 8u);
  const unsigned char want[8] = {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  for (int i = 0; i < 8; ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]), want[i]);
  EXPECT_EQ(read_raw_f32((dir / "t.bin").string(), {2}), Tensor<float>({2}, {1.0f, -2.0f}));
  EXPECT_THROW(read_raw_f32((dir / "t.bin").string(), {3}), IoError);
}

TEST(Checkpoint, ManifestDescribesEveryTensor) {
  const auto dir = temp_dir();
  const auto b = bundle_for(4);
  save_bundle(b, (dir / "m").string());
  const json m = json::parse(read_file(dir / "m" / "manifest.json"));
  EXPECT_EQ(m["dtype"], "float32");
  EXPECT_EQ(m["byte_order"], "little");
  EXPECT_EQ(m["arch"]["latent_dim"], 4);
  std::size_t count = 0;
  for (const auto& entry : m["tensors"]["generator"]) {
    const auto& p = b.generator.at(entry["name"].get<std::string>());
    EXPECT_EQ(entry["shape"].get<Shape>(), p.value.shape());
    EXPECT_EQ(fs::file_size(dir / "m" / entry["file"].get<std::string>()), 4 * p.value.size());
    ++count;
  }
  EXPECT_EQ(count, b.generator.size());
}

TEST(Checkpoint, TamperedArchitectureRejected) {
  const auto dir = temp_dir();
  save_bundle(bundle_for(5), (dir / "m").string());
  edit_manifest(dir / "m", [](json& m) { m["arch"]["latent_dim"] = 5; });
  EXPECT_THROW(load_bundle((dir / "m").string()), IncompatibleCheckpoint);
}

TEST(Checkpoint, TamperedShapeRejected) {
  const auto dir = temp_dir();
  save_bundle(bundle_for(5), (dir / "m").string());
  edit_manifest(dir / "m", [](json& m) { m["tensors"]["generator"][0]["shape"] = json::array({1, 2}); });
  EXPECT_THROW(load_bundle((dir / "m").string()), IncompatibleCheckpoint);
}

TEST(Checkpoint, TamperedNumRectsRejected) {
  const auto dir = temp_dir();
  save_bundle(bundle_for(5), (dir / "m").string());
  edit_manifest(dir / "m", [](json& m) { m["arch"]["num_rects"] = 3; });
  EXPECT_THROW(load_bundle((dir / "m").string()), IncompatibleCheckpoint);
}

TEST(Checkpoint, TruncatedOrMissingFilesAreIoErrors) {
  const auto dir = temp_dir();
  save_bundle(bundle_for(6), (dir / "m").string());
  fs::resize_file(dir / "m" / "generator.const.bin", 12);
  EXPECT_THROW(load_bundle((dir / "m").string()), IoError);
  EXPECT_THROW(load_bundle((dir / "absent").string()), IoError);
  save_bundle(bundle_for(6), (dir / "n").string());
  fs::remove(dir / "n" / "recognizer.out.weight.bin");
  EXPECT_THROW(load_bundle((dir / "n").string()), IoError);
}

TEST(Checkpoint, RewriteReplacesDirectory) {
  const auto dir = temp_dir();
  save_bundle(bundle_for(7), (dir / "m").string());
  write_file(dir / "m" / "stray.txt", "x");
  const auto b = bundle_for(8);
  save_bundle(b, (dir / "m").string());
  EXPECT_FALSE(fs::exists(dir / "m" / "stray.txt"));
  EXPECT_TRUE(load_bundle((dir / "m").string()).generator.same_values(b.generator));
  EXPECT_FALSE(fs::exists(dir / "m.partial"));
}

TEST(Checkpoint, RequireCompatibleNamesDifferences) {
  ArchConfig a = tiny_arch(), b = tiny_arch();
  EXPECT_NO_THROW(require_compatible(a, b));
  b.latent_dim = 6;
  b.resolution = 32;
  b.g_channels = {6, 4, 2};
  b.d_channels = {4, 6, 8};
  try {
    require_compatible(a, b);
    FAIL() << "expected IncompatibleCheckpoint";
  } catch (const IncompatibleCheckpoint& e) {
    EXPECT_NE(std::string(e.what()).find("latent_dim"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("resolution"), std::string::npos);
  }
}

TEST(Checkpoint, FixtureBundlesHaveNoTensors) {
  const auto dir = temp_dir();
  RngStream rng(0);
  const auto b = init_bundle(block_oracle_arch(30.0), rng);
  save_bundle(b, (dir / "f").string());
  const auto r = load_bundle((dir / "f").string());
  EXPECT_EQ(r.arch, b.arch);
  EXPECT_EQ(r.generator.size(), 0u);
}

TEST(TrainCheckpoint, StateRoundTripCoversOptimizerAndRng) {
  const auto dir = temp_dir();
  TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.batch_size = 4;
  cfg.total_images = 8;
  cfg.seed = 12;
  auto st = init_train_state(cfg);
  ProceduralSpec spec{{{"x_position", 3}, {"y_position", 3}, {"scale", 2}}, 16, 1};
  const auto data = make_procedural_dataset(spec);
  for (int i = 0; i < 2; ++i) train_step(st, sample_batch(data, 4, st.rng_data));
  save_train_state(st, (dir / "s").string());
  const auto r = load_train_state((dir / "s").string());
  EXPECT_EQ(r.config, st.config);
  EXPECT_EQ(r.step, st.step);
  EXPECT_EQ(r.images_seen, st.images_seen);
  EXPECT_TRUE(r.bundle.generator.same_values(st.bundle.generator));
  EXPECT_TRUE(r.opt_g.m.same_values(st.opt_g.m));
  EXPECT_TRUE(r.opt_d.v.same_values(st.opt_d.v));
  EXPECT_TRUE(r.opt_q.m.same_values(st.opt_q.m));
  EXPECT_EQ(r.opt_g.t, st.opt_g.t);
  EXPECT_TRUE(r.rng_codes == st.rng_codes);
  EXPECT_TRUE(r.rng_perturb == st.rng_perturb);
  EXPECT_TRUE(r.rng_data == st.rng_data);

  // A trainer checkpoint serves inference; an inference bundle cannot resume.
  EXPECT_TRUE(load_bundle((dir / "s").string()).generator.same_values(st.bundle.generator));
  save_bundle(st.bundle, (dir / "b").string());
  EXPECT_THROW(load_train_state((dir / "b").string()), IncompatibleCheckpoint);
}
