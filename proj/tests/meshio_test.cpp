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
#include <cstring>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "mesh_fixtures.hpp"
#include "test_support.hpp"
#include "voxtopo/meshio.hpp"

namespace voxtopo {
namespace {

using namespace testing_support;

std::string binary_stl(const TriMesh& m) {
  std::string s(80, '\0');
  const std::uint32_t n = static_cast<std::uint32_t>(m.triangles.size());
  s.append(reinterpret_cast<const char*>(&n), 4);
  for (const auto& t : m.triangles) {
    float rec[12] = {};
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) rec[3 + 3 * c + k] = float(m.vertices[t[c]][k]);
    s.append(reinterpret_cast<const char*>(rec), sizeof rec);
    s.append(2, '\0');
  }
  return s;
}

TEST(ParseMesh, ObjCube) {
  auto m = parse_mesh(cube_obj(), MeshFormat::obj);
  EXPECT_EQ(m.vertices.size(), 8u);
  EXPECT_EQ(m.triangles.size(), 12u);
  EXPECT_NO_THROW(m.validate());
}

TEST(ParseMesh, ObjPolygonsFanAndNegativeIndices) {
  auto m = parse_mesh("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0.5 0.5 1\nf -5 -4 -3 -2\nf 1 2 5\n", MeshFormat::obj);
  ASSERT_EQ(m.triangles.size(), 3u);
  EXPECT_EQ(m.triangles[0], (Triangle{0, 1, 2}));
  EXPECT_EQ(m.triangles[1], (Triangle{0, 2, 3}));
}

TEST(ParseMesh, ObjErrorsCarryLineNumbers) {
  try {
    parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 0 1 2\n", MeshFormat::obj);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location(), 5);
    EXPECT_NE(std::string(e.what()).find("1-based"), std::string::npos);
  }
  try {
    parse_mesh("v 0 0 0\nv 1 zero 0\n", MeshFormat::obj);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location(), 2);
  }
  EXPECT_THROW(parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", MeshFormat::obj), ParseError);
  EXPECT_THROW(parse_mesh("v 0 0 0\n# nothing else\n", MeshFormat::obj), InvalidInput);
}

TEST(ParseMesh, BinaryStlWeldsSharedCorners) {
  const auto cube = box_mesh(Vec3(0, 0, 0), Vec3(1, 2, 3));
  const std::string bytes = binary_stl(cube);
  // Oracle: distinct corner triples by raw float bits.
  std::set<std::array<std::uint32_t, 3>> distinct;
  for (std::size_t f = 0; f < 12; ++f)
    for (int c = 0; c < 3; ++c) {
      std::array<std::uint32_t, 3> key;
      std::memcpy(key.data(), bytes.data() + 84 + f * 50 + 12 + 12 * c, 12);
      distinct.insert(key);
    }
  auto m = parse_mesh(bytes, MeshFormat::stl_binary);
  EXPECT_EQ(m.triangles.size(), 12u);
  EXPECT_EQ(m.vertices.size(), distinct.size());
  EXPECT_EQ(m.vertices.size(), 8u);
  EXPECT_EQ(detect_stl_format(bytes), MeshFormat::stl_binary);

  std::string cut = bytes.substr(0, bytes.size() - 7);
  try {
    parse_mesh(cut, MeshFormat::stl_binary);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location(), long(cut.size()));
  }
}

TEST(ParseMesh, AsciiStl) {
  const std::string src =
      "solid tri\n facet normal 0 0 1\n  outer loop\n   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n"
      "  endloop\n endfacet\n facet normal 0 0 1\n  outer loop\n   vertex 1 0 0\n   vertex 1 1 0\n   vertex 0 1 0\n"
      "  endloop\n endfacet\nendsolid tri\n";
  EXPECT_EQ(detect_stl_format(src), MeshFormat::stl_ascii);
  auto m = parse_mesh(src, MeshFormat::stl_ascii);
  EXPECT_EQ(m.triangles.size(), 2u);
  EXPECT_EQ(m.vertices.size(), 4u);
  std::string bad = src;
  bad.replace(bad.find("vertex 1 1 0"), 12, "vertex 1 x 0");
  try {
    parse_mesh(bad, MeshFormat::stl_ascii);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location(), 12);
  }
}

TEST(WriteMesh, RoundTripsEveryFormat) {
  const auto sphere = uv_sphere(3.7, 50, 101);
  ASSERT_GE(sphere.triangles.size(), 9800u);
  for (auto f : {MeshFormat::obj, MeshFormat::stl_binary, MeshFormat::stl_ascii}) {
    std::ostringstream os;
    write_mesh(sphere, os, f);
    auto back = parse_mesh(os.str(), f);
    ASSERT_EQ(back.triangles.size(), sphere.triangles.size()) << format_name(f);
    ASSERT_EQ(back.vertices.size(), sphere.vertices.size()) << format_name(f);
    double worst = 0;
    for (std::size_t t = 0; t < sphere.triangles.size(); ++t)
      for (int c = 0; c < 3; ++c)
        worst = std::max(worst, (back.vertices[back.triangles[t][c]] - sphere.vertices[sphere.triangles[t][c]]).norm());
    EXPECT_LT(worst, 1e-5) << format_name(f);
  }
  std::ostringstream os;
  EXPECT_THROW(write_mesh(TriMesh{}, os, MeshFormat::obj), InvalidInput);
}

TEST(WriteMesh, FilesByExtension) {
  auto dir = scratch_dir("meshio_files");
  const auto cube = box_mesh(Vec3(-1, -1, -1), Vec3(1, 1, 1));
  for (std::string name : {"c.obj", "c.stl", "C.STL"}) {
    save_mesh(cube, dir / name);
    auto back = load_mesh(dir / name);
    EXPECT_EQ(back.vertices.size(), 8u) << name;
    EXPECT_EQ(back.triangles.size(), 12u) << name;
  }
  save_mesh(cube, dir / "a.stl", true);
  EXPECT_EQ(load_mesh(dir / "a.stl").triangles.size(), 12u);
  EXPECT_THROW(save_mesh(cube, dir / "c.ply"), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

// Dense-sampling oracle: a sample point inside the box proves overlap; SAT
// overlap must come with some sample near the box.
TEST(Voxelize, TriangleBoxTestAgreesWithSampling) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  int overlaps = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    Vec3 v[3];
    for (auto& p : v) p = Vec3(u(rng), u(rng), u(rng));
    const bool sat = detail::triangle_box_overlap(v[0], v[1], v[2], 0.5);
    double nearest = 1e9;
    bool inside = false;
    const int N = 60;
    for (int i = 0; i <= N; ++i)
      for (int j = 0; i + j <= N; ++j) {
        const Vec3 p = v[0] + (v[1] - v[0]) * (double(i) / N) + (v[2] - v[0]) * (double(j) / N);
        const Vec3 outside = (p.cwiseAbs() - Vec3::Constant(0.5)).cwiseMax(0.0);
        nearest = std::min(nearest, outside.norm());
        inside |= outside.norm() == 0.0;
      }
    if (inside) EXPECT_TRUE(sat) << trial;
    if (sat) {
      ++overlaps;
      const double edge = std::max({(v[1] - v[0]).norm(), (v[2] - v[0]).norm(), (v[2] - v[1]).norm()});
      EXPECT_LE(nearest, 2 * edge / N) << trial;
    }
  }
  EXPECT_GT(overlaps, 300);
}

TEST(Voxelize, SolidCubeOccupancy) {
  const auto r = voxelize_mesh_detailed(box_mesh(Vec3(0, 0, 0), Vec3(5, 5, 5)), 64, 2);
  const double expected = 60.0 * 60.0 * 60.0;
  EXPECT_NEAR(double(r.grid.occupied(0)), expected, 0.05 * expected);
  EXPECT_GT(r.fill.gained, 0u);
  EXPECT_DOUBLE_EQ(r.grid.voxel_size(), 5.0 / 59.0);
}

TEST(Voxelize, SphereOccupancyNearAnalyticVolume) {
  const auto g = voxelize_mesh(uv_sphere(1.0, 64, 128), 64, 2);
  const double expected = 4.0 / 3.0 * std::numbers::pi * 30.0 * 30.0 * 30.0;
  EXPECT_NEAR(double(g.occupied(0)), expected, 0.10 * expected);
}

bool boundary_empty(const VoxelGrid& g) {
  const auto d = g.dims();
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x)
        if ((z == 0 || y == 0 || x == 0 || z == d.d - 1 || y == d.h - 1 || x == d.w - 1) && g.at(0, z, y, x) != 0.0f)
          return false;
  return true;
}

TEST(Voxelize, MarginAndLeakFreeFill) {
  for (const auto& mesh : {uv_sphere(2.0, 24, 48), torus(3.0, 1.0, 48, 24), box_mesh(Vec3(0, 0, 0), Vec3(1, 3, 2))}) {
    for (int margin : {1, 3}) {
      const auto r = voxelize_mesh_detailed(mesh, 40, margin);
      EXPECT_TRUE(boundary_empty(r.grid)) << "margin " << margin;
      EXPECT_GT(r.fill.gained, 0u);
      // Nothing outside the margin band at all.
      for (int z = 0; z < 40; ++z)
        for (int y = 0; y < 40; ++y)
          for (int x = 0; x < 40; ++x)
            if (r.grid.at(0, z, y, x) != 0.0f) {
              ASSERT_GE(std::min({x, y, z}), margin);
              ASSERT_LE(std::max({x, y, z}), 39 - margin);
            }
    }
  }
}

TEST(Voxelize, TorusKeepsItsHole) {
  const auto g = voxelize_mesh(torus(3.0, 1.0, 96, 48), 64, 2);
  EXPECT_EQ(g.at(0, 32, 32, 32), 0.0f);  // center of the hole
  // Outer diameter 8 r maps onto 59 voxels. Every voxel touching the surface
  // has its center within sqrt(3)/2 of it, so occupancy lies between the solid
  // torus volume and that of the torus with tube radius r + sqrt(3)/2
  // (2 pi^2 R r^2 each).
  const double r = 59.0 / 8.0, R = 3 * r, pi2 = std::numbers::pi * std::numbers::pi;
  const double lower = 2 * pi2 * R * r * r, upper = 2 * pi2 * R * std::pow(r + std::sqrt(3.0) / 2, 2);
  EXPECT_GT(double(g.occupied(0)), 0.99 * lower);
  EXPECT_LT(double(g.occupied(0)), upper);
}

TEST(Voxelize, EveryVertexLandsInAnOccupiedVoxel) {
  const auto mesh = torus(2.0, 0.7, 40, 20);
  const int res = 48, margin = 2;
  const auto g = voxelize_mesh(mesh, res, margin);
  // Independent fit: longest side onto res - 2*margin - 1 voxel spacings.
  Vec3 lo = mesh.vertices[0], hi = lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double s = (res - 2 * margin - 1) / (hi - lo).maxCoeff();
  for (const auto& v : mesh.vertices) {
    const Vec3 p = (v - 0.5 * (lo + hi)) * s + Vec3::Constant((res - 1) / 2.0);
    EXPECT_EQ(g.at(0, int(std::lround(p.z())), int(std::lround(p.y())), int(std::lround(p.x()))), 1.0f);
  }
}

TEST(Voxelize, ScaleInvariant) {
  auto mesh = torus(2.0, 0.6, 40, 20);
  auto big = mesh;
  for (auto& v : big.vertices) v *= 10.0;
  auto shifted = mesh;
  for (auto& v : shifted.vertices) v += Vec3(100, -7, 3);
  const auto a = voxelize_mesh(mesh, 48, 2);
  const auto b = voxelize_mesh(big, 48, 2);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a.data()[i] != b.data()[i];
  EXPECT_EQ(diff, 0u);
  EXPECT_EQ(voxelize_mesh(shifted, 48, 2).occupied(0), a.occupied(0));
}

TEST(Voxelize, RotationRobust) {
  auto mesh = torus(2.0, 0.8, 60, 30);
  for (auto& v : mesh.vertices) v = Vec3(v.x(), 0.7 * v.y() + 0.3 * v.z(), v.z() - 0.2 * v.y());  // skew
  auto rotated = mesh;
  for (auto& v : rotated.vertices) v = Vec3(v.x(), -v.z(), v.y());  // 90 degrees about x
  const double a = double(voxelize_mesh(mesh, 64, 2).occupied(0));
  const double b = double(voxelize_mesh(rotated, 64, 2).occupied(0));
  EXPECT_LT(std::abs(a - b) / a, 0.02);
}

TEST(Voxelize, Errors) {
  TriMesh point;
  point.vertices = {Vec3(1, 1, 1), Vec3(1, 1, 1), Vec3(1, 1, 1)};
  point.triangles = {{0, 1, 2}};
  EXPECT_THROW(voxelize_mesh(point, 32, 2), InvalidInput);
  EXPECT_THROW(voxelize_mesh(TriMesh{}, 32, 2), InvalidInput);
  const auto cube = box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1));
  EXPECT_THROW(voxelize_mesh(cube, 4, 1), std::invalid_argument);
  EXPECT_THROW(voxelize_mesh(cube, 32, 0), std::invalid_argument);
  // A flat square still voxelizes: only its surface, nothing to fill.
  TriMesh square;
  square.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  square.triangles = {{0, 1, 2}, {0, 2, 3}};
  const auto r = voxelize_mesh_detailed(square, 16, 1);
  // The plane sits on the face between voxel layers 7 and 8 and touches both.
  EXPECT_EQ(r.grid.occupied(0), 2u * 14u * 14u);
  EXPECT_EQ(r.fill.gained, 0u);
}

// ---------------------------------------------------------------------------

TEST(Export, SingleNodeIsOneIcosphere) {
  SpatialGraph g;
  g.nodes.push_back({Vec3(1, 2, 3), 2.0, 0});
  for (int s : {0, 1, 2, 3}) {
    MeshStyle st;
    st.node_subdivision = s;
    auto m = network_to_mesh(g, st);
    const std::size_t f = 20u << (2 * s);
    EXPECT_EQ(m.vertices.size(), 10u * (1u << (2 * s)) + 2u);
    EXPECT_EQ(m.triangles.size(), f);
    for (const auto& v : m.vertices) EXPECT_NEAR((v - Vec3(1, 2, 3)).norm(), 2.0, 1e-12);
    // Closed surface: V - E + F = 2 with E = 3F/2.
    EXPECT_EQ(long(m.vertices.size()) - long(3 * f / 2) + long(f), 2);
  }
}

TEST(Export, LinkSpansItsNodes) {
  SpatialGraph g;
  g.nodes = {{Vec3(0, 0, 0), 1.5, 1}, {Vec3(10, 4, 0), 1.0, 1}};
  g.links.push_back({0, 1, {Vec3(0, 0, 0), Vec3(10, 4, 0)}});
  for (bool capsules : {false, true}) {
    MeshStyle st;
    st.capsules = capsules;
    st.link_radius = 0.5;
    auto m = network_to_mesh(g, st);
    auto [lo, hi] = m.bounds();
    EXPECT_LE(lo.x(), 0.0);
    EXPECT_LE(lo.y(), 0.0);
    EXPECT_GE(hi.x(), 10.0);
    EXPECT_GE(hi.y(), 4.0);
    EXPECT_NO_THROW(m.validate());
  }
}

TEST(Export, TriangleCountIsAdditive) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 60);
  SpatialGraph g;
  for (int i = 0; i < 300; ++i) g.nodes.push_back({Vec3(u(rng), u(rng), u(rng)), 1.0 + (i % 4), 0});
  for (int i = 0; i + 1 < 300; i += 2) {
    std::vector<Vec3> path{g.nodes[i].position, 0.5 * (g.nodes[i].position + g.nodes[i + 1].position) + Vec3(1, 1, 0),
                           g.nodes[i + 1].position};
    g.links.push_back({i, i + 1, path});
  }
  MeshStyle st;
  st.link_radius = 0.8;
  const std::size_t node_tris = 20 * 16, link_tris = 20 * 4;
  std::size_t expected = 300 * node_tris, expected_capsule = 300 * node_tris;
  for (const auto& l : g.links) {
    double len = 0;
    for (std::size_t k = 1; k < l.path.size(); ++k) len += (l.path[k] - l.path[k - 1]).norm();
    expected += (std::size_t(std::ceil(len / st.link_radius)) + 1) * link_tris;
    expected_capsule += l.path.size() * link_tris + (l.path.size() - 1) * 2 * st.capsule_sides;
  }
  EXPECT_EQ(network_to_mesh(g, st).triangles.size(), expected);
  st.capsules = true;
  EXPECT_EQ(network_to_mesh(g, st).triangles.size(), expected_capsule);
  st.capsules = false;
  st.draw_nodes = false;
  EXPECT_EQ(network_to_mesh(g, st).triangles.size(), expected - 300 * node_tris);
}

TEST(Export, SphereSpacingNeverExceedsTubeRadius) {
  std::vector<Vec3> path{Vec3(0, 0, 0), Vec3(3.3, 0, 0), Vec3(3.3, 7.1, 0), Vec3(3.3, 7.1, 0.2)};
  for (double r : {0.3, 1.0, 2.5}) {
    auto s = sample_polyline(path, r);
    EXPECT_EQ((s.front() - path.front()).norm(), 0.0);
    EXPECT_NEAR((s.back() - path.back()).norm(), 0.0, 1e-12);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LE((s[i] - s[i - 1]).norm(), r + 1e-12);
  }
}

TEST(Export, Errors) {
  EXPECT_THROW(network_to_mesh(SpatialGraph{}), std::invalid_argument);
  SpatialGraph g;
  g.nodes.push_back({Vec3(0, 0, 0), 0.0, 0});
  EXPECT_THROW(network_to_mesh(g), std::invalid_argument);
  MeshStyle doodle;
  doodle.draw_nodes = false;
  EXPECT_NO_THROW(network_to_mesh(g, doodle));
  g.nodes[0].radius = 1;
  MeshStyle bad;
  bad.link_radius = -1;
  EXPECT_THROW(network_to_mesh(g, bad), std::invalid_argument);
}

TEST(GraphJson, RoundTripAndValidation) {
  SpatialGraph g;
  g.nodes = {{Vec3(0, 0, 0), 1.5, 1}, {Vec3(1.25, 2, 3), 2.0, 1}};
  g.links.push_back({0, 1, {Vec3(0, 0, 0), Vec3(0.1, 1.0 / 3.0, 2), Vec3(1.25, 2, 3)}});
  auto back = graph_from_json(nlohmann::json::parse(to_json(g).dump()));
  ASSERT_EQ(back.links.size(), 1u);
  EXPECT_EQ(back.links[0].path[1], g.links[0].path[1]);
  EXPECT_EQ(to_json(back), to_json(g));
  g.links.push_back({1, 0, {Vec3(1.25, 2, 3), Vec3(0, 0, 0)}});
  EXPECT_THROW(g.validate(), InvalidInput);
  g.links.pop_back();
  g.links[0].path.back() = Vec3(9, 9, 9);
  EXPECT_THROW(g.validate(), InvalidInput);
}

}  // namespace
}  // namespace voxtopo
