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

// Independent oracles shared by the test binaries. Nothing here calls into
// the code paths it is used to check.

#pragma once

#include <algorithm>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "voxtopo/voxgrid.hpp"

namespace voxtopo::testing_support {

using Cell = std::array<int, 3>;  // z, y, x

inline std::set<Cell> occupied_set(const VoxelGrid& g, int c) {
  std::set<Cell> out;
  for (int z = 0; z < g.dims().d; ++z)
    for (int y = 0; y < g.dims().h; ++y)
      for (int x = 0; x < g.dims().w; ++x)
        if (g.at(c, z, y, x) >= 0.5f) out.insert({z, y, x});
  return out;
}

/// Number of 6-connected components among voxels >= 0.5 (plain BFS).
inline std::size_t count_components6(const VoxelGrid& g, int c) {
  auto cells = occupied_set(g, c);
  std::size_t comps = 0;
  while (!cells.empty()) {
    ++comps;
    std::queue<Cell> q;
    q.push(*cells.begin());
    cells.erase(cells.begin());
    while (!q.empty()) {
      Cell cur = q.front();
      q.pop();
      static constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      for (auto& o : off) {
        Cell n{cur[0] + o[0], cur[1] + o[1], cur[2] + o[2]};
        auto it = cells.find(n);
        if (it != cells.end()) {
          cells.erase(it);
          q.push(n);
        }
      }
    }
  }
  return comps;
}

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("voxtopo_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Plain Dijkstra over an explicit weighted edge list.
inline double dijkstra_length(const std::vector<Vec3>& pts, const std::vector<std::pair<int, int>>& edges, int src,
                              int dst) {
  const int n = static_cast<int>(pts.size());
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (auto [a, b] : edges) {
    const double w = (pts[a] - pts[b]).norm();
    adj[a].push_back({b, w});
    adj[b].push_back({a, w});
  }
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[src] = 0;
  pq.push({0, src});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (auto [v, w] : adj[u])
      if (d + w < dist[v]) {
        dist[v] = d + w;
        pq.push({dist[v], v});
      }
  }
  return dist[dst];
}

}  // namespace voxtopo::testing_support
