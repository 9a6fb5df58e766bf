// Copyright 2026 The voxtopo Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "train_fixtures.hpp"
#include "voxtopo/neural.hpp"

namespace voxtopo::nn {
namespace {

using testing_support::scratch_dir;
using testing_support::toy_data;

TEST(Losses, BceFromLogits) {
  Tensor<double> z({1, 1, 1, 1, 3});
  z[0] = 0.0;
  z[1] = 2.0;
  z[2] = -3.0;
  Tensor<double> g;
  const double l1 = bce_with_logits(z, 1.0, &g);
  const double expected = (std::log(2.0) + std::log1p(std::exp(-2.0)) + std::log1p(std::exp(3.0))) / 3;
  EXPECT_NEAR(l1, expected, 1e-12);
  EXPECT_NEAR(g[0], (0.5 - 1.0) / 3, 1e-12);
  EXPECT_NEAR(bce_with_logits(z, 0.0),
              (std::log(2.0) + std::log1p(std::exp(2.0)) + std::log1p(std::exp(-3.0))) / 3, 1e-12);
  z[0] = 500.0;  // no overflow
  EXPECT_TRUE(std::isfinite(bce_with_logits(z, 0.0)));
}

TEST(Losses, L1IsZeroForExactOutput) {
  Tensor<float> y({1, 2, 2, 2, 2}, 0.25f);
  EXPECT_EQ(l1_loss(y, y), 0.0);
  Tensor<float> t({1, 2, 2, 2, 2}, 0.75f);
  EXPECT_NEAR(l1_loss(y, t), 0.5, 1e-7);
}

TEST(Gan, UntrainedDiscriminatorLossNearChance) {
  auto data = toy_data({16}, 4, 1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto gan = GanTrainer::fresh(2, {}, seed);
    std::vector<const VoxelGrid*> b, t;
    for (auto& p : data[16]) {
      b.push_back(&p.blob);
      t.push_back(&p.target);
    }
    const auto l = gan.train_step(stack_channels(b), stack_channels(t));
    EXPECT_NEAR(l.d_loss, 2 * std::numbers::ln2, std::numbers::ln2);
    EXPECT_TRUE(std::isfinite(l.g_adv) && std::isfinite(l.g_l1));
  }
}

TEST(Gan, SmokeTrainingReducesL1) {
  auto data = toy_data({16}, 10, 7);
  TrainConfig cfg;
  cfg.stages = {{16, 2, 1000, 200}};
  cfg.seed = 5;
  auto dir = scratch_dir("smoke_train");
  auto report = train(cfg, data, dir);
  ASSERT_EQ(report.losses.size(), 200u);
  const double first = report.losses.front().g_l1, last = report.losses.back().g_l1;
  EXPECT_LE(last, 0.5 * first) << "first " << first << " last " << last;
  std::filesystem::remove_all(dir);
}

TEST(Gan, TwoStageScheduleTransfersWeights) {
  auto data = toy_data({16, 32}, 3, 2);
  TrainConfig cfg;
  cfg.stages = {{16, 2, 1}, {32, 1, 1}};
  cfg.seed = 9;
  cfg.checkpoint_every = 2;
  auto dir = scratch_dir("two_stage");
  auto report = train(cfg, data, dir);
  EXPECT_EQ(report.final_step, 2 + 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "final.v2vw"));
  EXPECT_TRUE(std::filesystem::exists(dir / "stage0_final.v2vw"));
  EXPECT_TRUE(std::filesystem::exists(dir / "step_00000004.v2vw"));
  std::ifstream csv(dir / "losses.csv");
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 5);
  auto g = load_generator(dir / "final.v2vw");
  VoxelGrid blob({32, 32, 32}, 1);
  EXPECT_EQ(infer(g, blob).dims(), (GridDims{32, 32, 32}));
  std::filesystem::remove_all(dir);
}

TEST(Gan, ResumeReproducesNextLossBitForBit) {
  auto data = toy_data({16}, 5, 3);
  TrainConfig cfg;
  cfg.stages = {{16, 2, 3}};
  cfg.seed = 21;
  cfg.checkpoint_every = 4;
  auto dir_a = scratch_dir("resume_a"), dir_b = scratch_dir("resume_b");
  auto full = train(cfg, data, dir_a);
  ASSERT_EQ(full.losses.size(), 9u);
  auto resumed = train(cfg, data, dir_b, load_checkpoint(dir_a / "step_00000004.v2vw"));
  ASSERT_EQ(resumed.losses.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(resumed.losses[i].d_loss, full.losses[4 + i].d_loss);
    EXPECT_EQ(resumed.losses[i].g_adv, full.losses[4 + i].g_adv);
    EXPECT_EQ(resumed.losses[i].g_l1, full.losses[4 + i].g_l1);
  }
  EXPECT_EQ(read_file_bytes(dir_a / "final.v2vw"), read_file_bytes(dir_b / "final.v2vw"));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST(Gan, TrajectoryIndependentOfThreadCount) {
  auto data = toy_data({16}, 4, 4);
  TrainConfig cfg;
  cfg.stages = {{16, 2, 2}};
  cfg.seed = 3;
  auto run = [&](int threads) {
    set_thread_count(threads);
    auto dir = scratch_dir("threads_" + std::to_string(threads));
    train(cfg, data, dir);
    auto bytes = read_file_bytes(dir / "final.v2vw");
    std::filesystem::remove_all(dir);
    set_thread_count(0);
    return bytes;
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Gan, StageResolutionMismatchIsConfigError) {
  auto data = toy_data({16}, 2, 1);
  TrainConfig cfg;
  cfg.stages = {{16, 1, 1}, {32, 1, 1}};
  auto dir = scratch_dir("mismatch");
  EXPECT_THROW(train(cfg, data, dir), ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "losses.csv"));
  cfg.stages = {{24, 1, 1}};
  data[24] = {};
  EXPECT_THROW(train(cfg, data, dir), ConfigError);
  cfg.stages = {{16, 0, 1}};
  EXPECT_THROW(train(cfg, data, dir), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto g = build_generator<float>(2);
  g.init(4);
  auto bytes = checkpoint_bytes(&g, nullptr);
  auto back = parse_checkpoint(bytes);
  ASSERT_TRUE(back.generator.has_value());
  EXPECT_FALSE(back.discriminator.has_value());
  EXPECT_EQ(checkpoint_bytes(&*back.generator, nullptr), bytes);
  EXPECT_EQ(back.manifest["models"]["generator"]["parameter_count"], 4076226);
  EXPECT_EQ(back.manifest["payload_floats"], 4076226);
}

TEST(Checkpoint, RunningStatisticsRoundTrip) {
  auto gan = GanTrainer::fresh(2, {}, 8);
  auto data = toy_data({16}, 2, 8);
  gan.train_step(grid_to_tensor(data[16][0].blob), grid_to_tensor(data[16][0].target));
  auto dir = scratch_dir("ckpt_stats");
  save_checkpoint(dir / "g.v2vw", &gan.generator(), &gan.discriminator());
  auto g2 = load_generator(dir / "g.v2vw", 2);
  auto p1 = gan.generator().params();
  auto p2 = g2.params();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(*p1[i].value, *p2[i].value) << p1[i].name;
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ArchitectureMismatchIsReported) {
  auto dir = scratch_dir("ckpt_mismatch");
  auto g = build_generator<float>(2);
  save_checkpoint(dir / "g.v2vw", &g, nullptr);
  EXPECT_THROW(load_discriminator(dir / "g.v2vw"), CheckpointError);
  EXPECT_THROW(load_generator(dir / "g.v2vw", 1), CheckpointError);

  auto bytes = read_file_bytes(dir / "g.v2vw");
  // Corrupt the declared width of the first convolution inside the manifest.
  std::string text(bytes.begin(), bytes.end());
  const auto pos = text.find("\"out\":32");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 8, "\"out\":33");
  std::vector<unsigned char> tampered(text.begin(), text.end());
  EXPECT_THROW(parse_checkpoint(tampered), CheckpointError);

  bytes[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bytes), FormatError);
  auto truncated = read_file_bytes(dir / "g.v2vw");
  truncated.resize(truncated.size() - 4);
  EXPECT_THROW(parse_checkpoint(truncated), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Infer, ShapesAndPaddingMessage) {
  auto g = build_generator<float>(2);
  g.init(2);
  VoxelGrid blob({64, 64, 64}, 1, 0.0f, 0.5);
  auto out = infer(g, blob);
  EXPECT_EQ(out.dims(), (GridDims{64, 64, 64}));
  EXPECT_EQ(out.channels(), 2);
  EXPECT_EQ(out.voxel_size(), 0.5);
  for (float v : out.data()) ASSERT_TRUE(v >= 0 && v <= 1);

  VoxelGrid odd({60, 64, 70}, 1);
  try {
    infer(g, odd);
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("(4,0,10)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(infer(g, VoxelGrid({16, 16, 16}, 2)), InvalidInput);
}

}  // namespace
}  // namespace voxtopo::nn
