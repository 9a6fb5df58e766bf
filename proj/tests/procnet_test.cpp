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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <functional>
#include <numeric>
#include <random>
#include <set>

#include "test_support.hpp"
#include "voxtopo/netgen.hpp"
#include "voxtopo/procnet.hpp"

namespace voxtopo {
namespace {

using testing_support::dijkstra_length;
using testing_support::point_segment_distance;

struct Blobs {
  std::vector<Vec3> pts;
  std::vector<double> w;
  std::vector<Vec3> means;  // exact weighted means of the generated points
};

// Three separated clouds, uniform weights, means computed from the samples.
Blobs three_blobs(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.5);
  const Vec3 planted[3] = {{10, 10, 10}, {40, 12, 30}, {20, 45, 50}};
  Blobs b;
  for (int c = 0; c < 3; ++c) {
    Vec3 sum = Vec3::Zero();
    for (int i = 0; i < 400; ++i) {
      const Vec3 p = planted[c] + Vec3(nd(gen), nd(gen), nd(gen));
      b.pts.push_back(p);
      b.w.push_back(1.0);
      sum += p;
    }
    b.means.push_back(sum / 400.0);
  }
  return b;
}

double nearest_distance(const Vec3& q, const std::vector<Vec3>& set) {
  double best = 1e300;
  for (const auto& p : set) best = std::min(best, (p - q).norm());
  return best;
}

TEST(KMeans, RecoversPlantedBlobMeans) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto b = three_blobs(seed);
    auto r = weighted_kmeans(b.pts, b.w, 3, seed);
    ASSERT_EQ(r.centers.size(), 3u);
    for (const auto& m : b.means) EXPECT_LT(nearest_distance(m, r.centers), 0.5) << "seed " << seed;
    for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LE(r.objective[i], r.objective[i - 1]);
  }
}

TEST(KMeans, ObjectiveNonIncreasingOnUniformCloud) {
  Rng rng(5);
  std::vector<Vec3> pts;
  std::vector<double> w;
  for (int i = 0; i < 3000; ++i) {
    pts.emplace_back(rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(0, 30));
    w.push_back(rng.uniform(0.1, 1.0));
  }
  auto r = weighted_kmeans(pts, w, 120, 9);
  ASSERT_GE(r.objective.size(), 2u);
  for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LE(r.objective[i], r.objective[i - 1] * (1 + 1e-12));
  EXPECT_LE(r.iterations, 100);
  // Final assignment is the brute-force nearest center.
  for (std::size_t i = 0; i < pts.size(); i += 7) {
    int best = 0;
    for (int c = 1; c < 120; ++c)
      if ((pts[i] - r.centers[c]).squaredNorm() < (pts[i] - r.centers[best]).squaredNorm()) best = c;
    EXPECT_EQ(r.assignment[i], best);
  }
}

TEST(KMeans, KEqualsPointCount) {
  std::vector<Vec3> pts = {{0, 0, 0}, {5, 1, 2}, {3, 3, 3}, {9, 0, 4}, {1, 7, 7}};
  std::vector<double> w(pts.size(), 2.0);
  auto r = weighted_kmeans(pts, w, 5, 3);
  EXPECT_EQ(r.objective.back(), 0.0);
  auto key = [](const Vec3& v) { return std::array<double, 3>{v.x(), v.y(), v.z()}; };
  std::set<std::array<double, 3>> a, b;
  for (auto& p : pts) a.insert(key(p));
  for (auto& c : r.centers) b.insert(key(c));
  EXPECT_EQ(a, b);
}

TEST(KMeans, WeightScalingInvariant) {
  auto b = three_blobs(11);
  Rng rng(4);
  for (auto& x : b.w) x = rng.uniform(0.2, 3.0);
  auto w2 = b.w;
  for (auto& x : w2) x *= 2;
  auto r1 = weighted_kmeans(b.pts, b.w, 17, 8);
  auto r2 = weighted_kmeans(b.pts, w2, 17, 8);
  ASSERT_EQ(r1.centers.size(), r2.centers.size());
  for (std::size_t c = 0; c < r1.centers.size(); ++c) EXPECT_EQ(r1.centers[c], r2.centers[c]);
}

TEST(KMeans, ThreadCountDoesNotMatter) {
  auto b = three_blobs(21);
  set_thread_count(1);
  auto r1 = weighted_kmeans(b.pts, b.w, 40, 2);
  set_thread_count(4);
  auto r2 = weighted_kmeans(b.pts, b.w, 40, 2);
  set_thread_count(0);
  EXPECT_EQ(r1.centers, r2.centers);
  EXPECT_EQ(r1.assignment, r2.assignment);
}

TEST(KMeans, Errors) {
  std::vector<Vec3> pts = {{0, 0, 0}, {1, 0, 0}};
  std::vector<double> w = {1, 1};
  try {
    weighted_kmeans(pts, w, 3, 1);
    FAIL();
  } catch (const InvalidInput& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos);
    EXPECT_NE(msg.find('3'), std::string::npos);
  }
  EXPECT_THROW(weighted_kmeans(pts, {1, 0}, 1, 1), std::invalid_argument);
  EXPECT_THROW(weighted_kmeans(pts, {1}, 1, 1), std::invalid_argument);
}

TEST(Proximity, CutoffAndNesting) {
  Rng rng(3);
  std::vector<Vec3> pts;
  for (int i = 0; i < 800; ++i) pts.emplace_back(rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(0, 20));
  const double s = 2.0;
  auto r1 = proximity_graph(pts, s, 1, 77);
  auto r4 = proximity_graph(pts, s, 4, 77);
  EXPECT_TRUE(std::includes(r4.edges.begin(), r4.edges.end(), r1.edges.begin(), r1.edges.end()));
  EXPECT_GT(r4.edges.size(), r1.edges.size());
  for (auto [a, b] : r4.edges) {
    EXPECT_LT(a, b);
    EXPECT_LE((pts[a] - pts[b]).norm(), s * std::sqrt(3.0) + 1e-12);
  }
  EXPECT_EQ(proximity_graph(pts, s, 4, 77).edges, r4.edges);

  std::vector<Vec3> far = {{0, 0, 0}, {2.0 * std::sqrt(3.0) + 0.01, 0, 0}};
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_TRUE(proximity_graph(far, 2.0, 8, seed).edges.empty());
}

// Per round, two points with offset d share a cell with probability
// prod_k (1 - |d_k|/s); rounds are independent.
TEST(Proximity, CoResidenceMatchesAnalyticRate) {
  const double s = 3.0;
  const double dk = (s / 2) / std::sqrt(3.0);  // diagonal pair at distance s/2
  const std::vector<Vec3> pts = {{1.3, 2.1, 0.4}, Vec3(1.3, 2.1, 0.4) + Vec3::Constant(dk)};
  const double hit = std::pow(1 - dk / s, 3);
  const int trials = 400;
  for (int rounds : {1, 2, 4}) {
    int missed = 0;
    for (int t = 0; t < trials; ++t) missed += proximity_graph(pts, s, rounds, 1000 + t).edges.empty();
    const double expect = std::pow(1 - hit, rounds);
    const double sigma = std::sqrt(expect * (1 - expect) / trials);
    EXPECT_NEAR(double(missed) / trials, expect, 4 * sigma + 1e-9) << rounds << " rounds";
  }
  // Close pairs: an axis offset of s/16 misses a round with probability 1/16.
  const std::vector<Vec3> close = {{0.2, 0.2, 0.2}, {0.2 + s / 16, 0.2, 0.2}};
  int missed = 0;
  for (int t = 0; t < 100; ++t) missed += proximity_graph(close, s, 4, t).edges.empty();
  EXPECT_EQ(missed, 0);
}

TEST(Proximity, PerCellCapKeepsNearestPairs) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 30; ++i) pts.emplace_back(0.01 * i, 0.0, 0.0);
  auto r = proximity_graph(pts, 1000.0, 1, 5, 64);
  EXPECT_EQ(r.edges.size(), 64u);
  EXPECT_EQ(r.truncated_cells, 1);
  // The 29 adjacent pairs (spacing 0.01) and the 28 at spacing 0.02 are nearest.
  for (int i = 0; i + 1 < 30; ++i) EXPECT_TRUE(std::binary_search(r.edges.begin(), r.edges.end(), std::make_pair(i, i + 1)));
}

TEST(AStar, MatchesDijkstraOnRandomProximityGraphs) {
  for (int g = 0; g < 50; ++g) {
    Rng rng(derive_seed(31, g));
    std::vector<Vec3> pts;
    const int n = 150 + int(rng.below(150));
    for (int i = 0; i < n; ++i) pts.emplace_back(rng.uniform(0, 16), rng.uniform(0, 16), rng.uniform(0, 16));
    auto prox = proximity_graph(pts, 2.5, 4, g);
    Adjacency adj(pts, prox.edges);
    for (int q = 0; q < 5; ++q) {
      const int a = int(rng.below(n)), b = int(rng.below(n));
      const double ref = dijkstra_length(pts, prox.edges, a, b);
      auto path = astar(pts, adj, a, b);
      if (!std::isfinite(ref)) {
        EXPECT_FALSE(path.has_value());
        continue;
      }
      ASSERT_TRUE(path.has_value());
      EXPECT_NEAR(path->length, ref, 1e-9);
      double walked = 0;
      for (std::size_t i = 1; i < path->points.size(); ++i) walked += (pts[path->points[i]] - pts[path->points[i - 1]]).norm();
      EXPECT_NEAR(walked, path->length, 1e-9);
      EXPECT_EQ(path->points.front(), a);
      EXPECT_EQ(path->points.back(), b);
    }
  }
}

TEST(AStar, TrivialCasesAndConstraints) {
  std::vector<Vec3> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {1, 1, 0}, {9, 9, 9}};
  std::vector<std::pair<int, int>> edges = {{0, 1}, {1, 2}, {0, 3}, {3, 2}};
  Adjacency adj(pts, edges);
  auto self = astar(pts, adj, 2, 2);
  ASSERT_TRUE(self);
  EXPECT_EQ(self->length, 0.0);
  EXPECT_FALSE(astar(pts, adj, 0, 4));
  EXPECT_NEAR(astar(pts, adj, 0, 2)->length, 2.0, 1e-12);
  std::vector<char> blocked = {0, 1, 0, 0, 0};
  auto detour = astar(pts, adj, 0, 2, &blocked);
  ASSERT_TRUE(detour);
  EXPECT_EQ(detour->points, (std::vector<int>{0, 3, 2}));
  EXPECT_FALSE(astar(pts, adj, 0, 2, &blocked, 2.5));
  EXPECT_THROW(astar(pts, adj, 0, 7), std::invalid_argument);
  EXPECT_THROW(astar(pts, adj, -1, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------

void paint_ball(VoxelGrid& g, int c, const Vec3& center, double r) {
  const auto d = g.dims();
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x)
        if ((Vec3(x, y, z) - center).norm() <= r) g.at(c, z, y, x) = 1.0f;
}

void paint_tube(VoxelGrid& g, int c, const Vec3& a, const Vec3& b, double r) {
  const auto d = g.dims();
  for (int z = 0; z < d.d; ++z)
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x)
        if (point_segment_distance(Vec3(x, y, z), a, b) <= r) g.at(c, z, y, x) = 1.0f;
}

void check_graph_invariants(const SpatialGraph& g) {
  EXPECT_NO_THROW(g.validate());
  std::set<std::pair<int, int>> seen;
  std::vector<int> degree(g.nodes.size(), 0);
  for (const auto& l : g.links) {
    EXPECT_TRUE(seen.emplace(std::min(l.a, l.b), std::max(l.a, l.b)).second);
    EXPECT_EQ(l.path.front(), g.nodes[l.a].position);
    EXPECT_EQ(l.path.back(), g.nodes[l.b].position);
    ++degree[l.a];
    ++degree[l.b];
    for (std::size_t q = 1; q + 1 < l.path.size(); ++q)
      for (std::size_t m = 0; m < g.nodes.size(); ++m)
        if (int(m) != l.a && int(m) != l.b)
          EXPECT_GE((l.path[q] - g.nodes[m].position).norm(), g.nodes[m].radius);
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i) EXPECT_EQ(g.nodes[i].degree, degree[i]);
}

std::size_t components(const SpatialGraph& g) {
  std::vector<int> parent(g.nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
  for (const auto& l : g.links) parent[find(l.a)] = find(l.b);
  std::set<int> roots;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) roots.insert(find(int(i)));
  return roots.size();
}

TEST(Extract, IsolatedSpheresGiveNodesOnly) {
  VoxelGrid nodes({48, 48, 48}, 1), links({48, 48, 48}, 1);
  const std::vector<Vec3> centers = {{8, 8, 8}, {38, 10, 12}, {24, 24, 24}, {10, 36, 30}, {36, 36, 38}};
  for (const auto& c : centers) paint_ball(nodes, 0, c, 1.0);
  auto p = ExtractParams::for_mode(ExtractMode::network3d);
  p.k_nodes = int(centers.size());
  auto g = extract_network(nodes, 0, links, 0, p);
  EXPECT_EQ(g.nodes.size(), centers.size());
  EXPECT_TRUE(g.links.empty());
  for (const auto& c : centers) EXPECT_LT(nearest_distance(c, [&] {
    std::vector<Vec3> v;
    for (auto& n : g.nodes) v.push_back(n.position);
    return v;
  }()), 1e-9);
}

TEST(Extract, TubeBetweenTwoBlobsGivesOneContainedLink) {
  VoxelGrid grid({32, 32, 64}, 2);
  const Vec3 a(14, 16, 16), b(50, 16, 16);
  paint_ball(grid, 0, a, 3.0);
  paint_ball(grid, 0, b, 3.0);
  const double tube_r = 2.5;
  paint_tube(grid, 1, a, b, tube_r);
  auto p = ExtractParams::for_mode(ExtractMode::network3d);
  p.k_nodes = 2;
  p.max_link_length = 48;
  ExtractStats st;
  auto g = extract_network(grid, 0, grid, 1, p, &st);
  ASSERT_EQ(g.nodes.size(), 2u);
  ASSERT_EQ(g.links.size(), 1u) << st.candidate_pairs << " " << st.unreachable;
  check_graph_invariants(g);
  for (const auto& q : g.links[0].path) EXPECT_LE(point_segment_distance(q, a, b), tube_r + 1.0);
  EXPECT_EQ(g.nodes[0].degree, 1);
}

TEST(Extract, SynthesizedNetworkInvariantsAndDeterminism) {
  DatasetConfig cfg;
  cfg.n_min = 20;
  cfg.n_max = 30;
  cfg.resolution = 48;
  cfg.seed = 12;
  auto pair = make_base_pair(cfg, 0);
  auto p = ExtractParams::for_mode(ExtractMode::network3d);
  p.k_nodes = 40;
  set_thread_count(1);
  auto g1 = extract_network(pair.target, 0, pair.target, 1, p);
  set_thread_count(3);
  auto g2 = extract_network(pair.target, 0, pair.target, 1, p);
  set_thread_count(0);
  EXPECT_EQ(to_json(g1).dump(), to_json(g2).dump());
  check_graph_invariants(g1);
  EXPECT_GT(g1.links.size(), 10u);
  // All points within the bounding box of each source channel.
  auto bbox = [&](int c) {
    auto s = threshold_points(pair.target, c, p.tau);
    Vec3 lo = s.points[0], hi = s.points[0];
    for (auto& q : s.points) {
      lo = lo.cwiseMin(q);
      hi = hi.cwiseMax(q);
    }
    return std::make_pair(lo, hi);
  };
  auto [nlo, nhi] = bbox(0);
  auto [llo, lhi] = bbox(1);
  for (const auto& n : g1.nodes) EXPECT_TRUE((n.position.array() >= nlo.array()).all() && (n.position.array() <= nhi.array()).all());
  for (const auto& l : g1.links)
    for (std::size_t q = 1; q + 1 < l.path.size(); ++q)
      EXPECT_TRUE((l.path[q].array() >= llo.array()).all() && (l.path[q].array() <= lhi.array()).all());
}

TEST(Extract, EmptyChannelsAreReported) {
  VoxelGrid empty({16, 16, 16}, 2);
  try {
    extract_network(empty, 0, empty, 1, ExtractParams{});
    FAIL();
  } catch (const ExtractionError& e) {
    EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
  }
  EXPECT_THROW(extract_ghirigoro(empty, 0, ExtractParams::for_mode(ExtractMode::ghirigoro)), ExtractionError);
  EXPECT_THROW(baseline_extract(VoxelGrid({8, 8, 8}, 1), ExtractParams{}), ExtractionError);
  VoxelGrid other({16, 16, 8}, 1);
  EXPECT_THROW(extract_network(empty, 0, other, 0, ExtractParams{}), InvalidInput);
}

TEST(Extract, HelixDoodleIsOneComponentWithoutSpheres) {
  VoxelGrid g({64, 64, 64}, 1);
  std::vector<Vec3> helix;
  for (int i = 0; i <= 600; ++i) {
    const double t = i / 600.0;
    const double ang = 2 * std::numbers::pi * 3 * t;
    helix.emplace_back(32 + 14 * std::cos(ang), 32 + 14 * std::sin(ang), 8 + 48 * t);
  }
  for (std::size_t i = 1; i < helix.size(); ++i) paint_tube(g, 0, helix[i - 1], helix[i], 1.5);
  ExtractStats st;
  auto out = extract_ghirigoro(g, 0, ExtractParams::for_mode(ExtractMode::ghirigoro), &st);
  EXPECT_EQ(out.nodes.size(), 30u);
  EXPECT_EQ(st.k_links, 600);
  EXPECT_EQ(components(out), 1u);
  for (const auto& n : out.nodes) EXPECT_EQ(n.radius, 0.0);
  check_graph_invariants(out);
}

TEST(Extract, BaselineOnSolidSphere) {
  VoxelGrid g({40, 40, 40}, 1);
  const Vec3 c(19.5, 19.5, 19.5);
  paint_ball(g, 0, c, 18);
  ExtractStats st;
  auto a = baseline_extract(g, ExtractParams{}, &st);
  EXPECT_EQ(a.nodes.size(), 300u);
  EXPECT_EQ(st.k_links, 15000);
  for (const auto& n : a.nodes) EXPECT_LE((n.position - c).norm(), 18.0);
  auto b = baseline_extract(g, ExtractParams{}, nullptr);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  check_graph_invariants(a);
}

}  // namespace
}  // namespace voxtopo
