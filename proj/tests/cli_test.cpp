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

// Runs the built voxtopo executable end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mesh_fixtures.hpp"
#include "test_support.hpp"
#include "voxtopo/pipeline.hpp"

#ifndef VOXTOPO_CLI
#error "VOXTOPO_CLI must name the voxtopo executable"
#endif

namespace voxtopo {
namespace {

namespace fs = std::filesystem;
using testing_support::scratch_dir;

struct CliRun {
  int status = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

CliRun cli(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(VOXTOPO_CLI) + "' " + args + " > '" +
                          out.string() + "' 2> '" + err.string() + "'";
  const int raw = std::system(cmd.c_str());
  CliRun r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch_dir("cli");
    std::ofstream(dir_ / "cube.obj") << testing_support::cube_obj();
    save_mesh(testing_support::uv_sphere(1.0, 16, 24), dir_ / "ball.obj");
    auto g = nn::build_generator<float>(2);
    g.init(7);
    nn::save_checkpoint(dir_ / "g.v2vw", &g, nullptr);
    auto g1 = nn::build_generator<float>(1);
    g1.init(7);
    nn::save_checkpoint(dir_ / "g1.v2vw", &g1, nullptr);
  }
  static fs::path dir_;
};
fs::path Cli::dir_;

TEST_F(Cli, VoxelizeCube) {
  auto r = cli(dir_, "voxelize cube.obj --res 64 -o cube.vgrid");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto g = load_vgrid((dir_ / "cube.vgrid").string());
  EXPECT_EQ(g.dims(), (GridDims{64, 64, 64}));
  EXPECT_GT(std::count(g.data().begin(), g.data().end(), 1.0f), 0);
  EXPECT_TRUE(fs::exists(dir_ / "cube.vgrid.run.toml"));
  // Every stderr line is a JSON record.
  std::istringstream lines(r.err);
  for (std::string line; std::getline(lines, line);) EXPECT_NO_THROW((void)nlohmann::json::parse(line)) << line;
}

TEST_F(Cli, BaselineGives300Nodes) {
  ASSERT_EQ(cli(dir_, "voxelize cube.obj --res 32 -o cube32.vgrid").status, 0);
  auto r = cli(dir_, "baseline cube32.vgrid --capsules-unknown -o x.obj");
  EXPECT_EQ(r.status, 2);
  r = cli(dir_, "baseline cube32.vgrid -o cube_base.obj");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto g = load_graph((dir_ / "cube_base.graph.json").string());
  EXPECT_EQ(g.nodes.size(), 300u);
  EXPECT_NE(r.err.find("\"k_links\":15000"), std::string::npos);
  EXPECT_GT(load_mesh(dir_ / "cube_base.obj").triangles.size(), 0u);
}

TEST_F(Cli, PipelineEqualsManualComposition) {
  auto r = cli(dir_, "--seed 5 pipeline ball.obj --style network3d --ckpt g.v2vw --res 32 -o ball_net.obj");
  ASSERT_EQ(r.status, 0) << r.err;
  ASSERT_TRUE(fs::exists(dir_ / "ball_net.graph.json"));
  ASSERT_EQ(cli(dir_, "voxelize ball.obj --res 32 -o m_blob.vgrid").status, 0);
  ASSERT_EQ(cli(dir_, "--seed 5 infer m_blob.vgrid --ckpt g.v2vw -o m_out.vgrid").status, 0);
  ASSERT_EQ(cli(dir_, "--seed 5 extract m_out.vgrid --style network3d -o m_graph.json").status, 0);
  ASSERT_EQ(cli(dir_, "export m_graph.json --style network3d -o m_net.obj").status, 0);
  EXPECT_EQ(slurp(dir_ / "ball_net.graph.json"), slurp(dir_ / "m_graph.json"));
  EXPECT_EQ(slurp(dir_ / "ball_net.obj"), slurp(dir_ / "m_net.obj"));

  // Thread count does not change the artifacts.
  r = cli(dir_, "--seed 5 --threads 1 --deterministic pipeline ball.obj --ckpt g.v2vw --res 32 -o t1.obj");
  ASSERT_EQ(r.status, 0) << r.err;
  r = cli(dir_, "--seed 5 --threads 3 --deterministic pipeline ball.obj --ckpt g.v2vw --res 32 -o t3.obj");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "t1.obj"), slurp(dir_ / "ball_net.obj"));
  EXPECT_EQ(slurp(dir_ / "t1.graph.json"), slurp(dir_ / "t3.graph.json"));
  EXPECT_EQ(slurp(dir_ / "t1.obj"), slurp(dir_ / "t3.obj"));
}

TEST_F(Cli, DoodlePipelineHasNoSpheres) {
  auto r = cli(dir_, "pipeline ball.obj --style ghirigoro --ckpt g1.v2vw --res 32 --max-link 24 -o doodle.obj");
  ASSERT_EQ(r.status, 0) << r.err;
  const auto g = load_graph((dir_ / "doodle.graph.json").string());
  EXPECT_EQ(g.nodes.size(), 30u);
  for (const auto& n : g.nodes) EXPECT_EQ(n.radius, 0.0);
  // Wrong channel count for the style is a config error.
  r = cli(dir_, "pipeline ball.obj --style ghirigoro --ckpt g.v2vw --res 32 -o bad.obj");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("config:"), std::string::npos) << r.err;
}

TEST_F(Cli, ErrorsAreReportedBeforeWork) {
  auto r = cli(dir_, "pipeline ball.obj --ckpt g.v2vw --res 40 -o x.obj");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("multiple of 16"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "x.obj"));
  r = cli(dir_, "voxelize missing.obj -o y.vgrid");
  EXPECT_NE(r.status, 0);
  r = cli(dir_, "voxelize cube.obj -o y.vgrid --bogus 3");
  EXPECT_EQ(r.status, 2);
  r = cli(dir_, "frobnicate");
  EXPECT_NE(r.status, 0);
  std::ofstream(dir_ / "broken.obj") << "v 0 0 0\nf 1 2 3\n";
  r = cli(dir_, "voxelize broken.obj -o z.vgrid");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("voxelize:"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
  ASSERT_EQ(cli(dir_, "voxelize cube.obj --res 32 -o c32.vgrid").status, 0);
  std::ofstream(dir_ / "run.toml") << "seed = 4\n[baseline]\nk-nodes = 20\nlink-mult = 5\n";
  auto r = cli(dir_, "--config run.toml baseline c32.vgrid -o cfg.json");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(load_graph((dir_ / "cfg.json").string()).nodes.size(), 20u);
  r = cli(dir_, "--config run.toml baseline c32.vgrid --k-nodes 12 -o flag.json");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(load_graph((dir_ / "flag.json").string()).nodes.size(), 12u);
  // The emitted config reproduces the run.
  r = cli(dir_, "--config flag.json.run.toml baseline -o flag2.json");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "flag.json"), slurp(dir_ / "flag2.json"));
}

TEST_F(Cli, DatasetTrainInspect) {
  auto r = cli(dir_, "--seed 3 gen-data --res 32 --networks 2 --augment 2 --n-min 6 --n-max 8 -o ds");
  ASSERT_EQ(r.status, 0) << r.err;
  r = cli(dir_, "inspect ds");
  ASSERT_EQ(r.status, 0) << r.err;
  auto info = nlohmann::json::parse(r.out);
  EXPECT_EQ(info["type"], "dataset");
  EXPECT_EQ(info["sample_count"], 4);

  r = cli(dir_, "--seed 3 train ds --stages 16:2:1:2 -o run");
  ASSERT_EQ(r.status, 0) << r.err;
  ASSERT_TRUE(fs::exists(dir_ / "run" / "final.v2vw"));
  r = cli(dir_, "inspect run/final.v2vw");
  ASSERT_EQ(r.status, 0) << r.err;
  info = nlohmann::json::parse(r.out);
  EXPECT_EQ(info["models"]["generator"]["parameter_count"], 4076226);
  EXPECT_EQ(info["models"]["discriminator"]["parameter_count"], 199793);
  EXPECT_EQ(info["training"]["step"], 2);

  r = cli(dir_, "train ds --stages 24:2:1 -o run2");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("train:"), std::string::npos);

  ASSERT_EQ(cli(dir_, "voxelize cube.obj --res 16 -o c16.vgrid").status, 0);
  r = cli(dir_, "inspect c16.vgrid");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out)["dims"], nlohmann::json::array({16, 16, 16}));
}

}  // namespace
}  // namespace voxtopo
