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

// Network extraction from voxel distributions: weighted k-means for node and
// link points, a randomized shifted-lattice proximity graph, and A* between
// nearby nodes.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "voxtopo/common.hpp"
#include "voxtopo/error.hpp"
#include "voxtopo/netgen.hpp"
#include "voxtopo/parallel.hpp"
#include "voxtopo/spatial_graph.hpp"
#include "voxtopo/voxgrid.hpp"

namespace voxtopo {

namespace detail {

// Uniform bucket grid over a fixed point set.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec3>& pts, double cell) : pts_(pts), cell_(cell) {
    lo_ = pts.empty() ? Vec3::Zero() : pts[0];
    Vec3 hi = lo_;
    for (const auto& p : pts) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    for (int k = 0; k < 3; ++k) n_[k] = std::max(1, static_cast<int>(std::floor((hi[k] - lo_[k]) / cell_)) + 1);
    start_.assign(cells() + 1, 0);
    for (const auto& p : pts) ++start_[cell_of(p) + 1];
    std::partial_sum(start_.begin(), start_.end(), start_.begin());
    items_.resize(pts.size());
    std::vector<int> fill(start_.begin(), start_.end() - 1);
    for (int i = 0; i < int(pts.size()); ++i) items_[fill[cell_of(pts[i])]++] = i;
  }

  std::size_t cells() const { return std::size_t(n_[0]) * n_[1] * n_[2]; }
  int dim(int k) const { return n_[k]; }
  double cell() const { return cell_; }

  std::array<int, 3> coord(const Vec3& p) const {
    std::array<int, 3> c;
    for (int k = 0; k < 3; ++k)
      c[k] = static_cast<int>(std::clamp(std::floor((p[k] - lo_[k]) / cell_), 0.0, double(n_[k] - 1)));
    return c;
  }
  std::size_t index(int x, int y, int z) const { return (std::size_t(z) * n_[1] + y) * n_[0] + x; }
  std::size_t cell_of(const Vec3& p) const {
    auto c = coord(p);
    return index(c[0], c[1], c[2]);
  }
  std::span<const int> bucket(std::size_t cell) const {
    return std::span<const int>(items_).subspan(start_[cell], start_[cell + 1] - start_[cell]);
  }

  /// Squared distance from p to the box of cell (x, y, z).
  double cell_dist2(const Vec3& p, int x, int y, int z) const {
    double d2 = 0;
    const int c[3] = {x, y, z};
    for (int k = 0; k < 3; ++k) {
      const double a = lo_[k] + c[k] * cell_, b = a + cell_;
      const double d = p[k] < a ? a - p[k] : (p[k] > b ? p[k] - b : 0.0);
      d2 += d * d;
    }
    return d2;
  }

  /// Nearest point to q by (distance, index); -1 if empty.
  std::pair<int, double> nearest(const Vec3& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    const auto c = coord(q);
    const int max_ring = std::max({n_[0], n_[1], n_[2]});
    for (int r = 0; r <= max_ring; ++r) {
      for (int z = c[2] - r; z <= c[2] + r; ++z) {
        if (z < 0 || z >= n_[2]) continue;
        for (int y = c[1] - r; y <= c[1] + r; ++y) {
          if (y < 0 || y >= n_[1]) continue;
          const bool face = z == c[2] - r || z == c[2] + r || y == c[1] - r || y == c[1] + r;
          for (int x = c[0] - r; x <= c[0] + r; x += (face || r == 0) ? 1 : 2 * r) {
            if (x < 0 || x >= n_[0]) continue;
            if (cell_dist2(q, x, y, z) > best_d2) continue;
            for (int i : bucket(index(x, y, z))) {
              const double d2 = (pts_[i] - q).squaredNorm();
              if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
                best_d2 = d2;
                best = i;
              }
            }
          }
        }
      }
      // Every cell in ring r+1 is at least r*cell away.
      if (best >= 0 && best_d2 <= std::pow(r * cell_, 2)) break;
    }
    return {best, best_d2};
  }

 private:
  const std::vector<Vec3>& pts_;
  double cell_;
  Vec3 lo_;
  int n_[3];
  std::vector<int> start_, items_;
};

// Fenwick tree over nonnegative weights with prefix-sum sampling.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : t_(n + 1, 0.0), v_(n, 0.0) {}
  void set(std::size_t i, double value) {
    const double delta = value - v_[i];
    v_[i] = value;
    for (std::size_t k = i + 1; k < t_.size(); k += k & (~k + 1)) t_[k] += delta;
  }
  double total() const {
    double s = 0;
    for (std::size_t k = t_.size() - 1; k > 0; k -= k & (~k + 1)) s += t_[k];
    return s;
  }
  /// Smallest index whose inclusive prefix sum exceeds u.
  std::size_t find(double u) const {
    std::size_t pos = 0, step = 1;
    while (step * 2 < t_.size()) step *= 2;
    for (; step > 0; step /= 2)
      if (pos + step < t_.size() && t_[pos + step] <= u) {
        pos += step;
        u -= t_[pos];
      }
    return std::min(pos, v_.size() - 1);
  }
  double value(std::size_t i) const { return v_[i]; }

 private:
  std::vector<double> t_, v_;
};

inline double default_cell(const std::vector<Vec3>& pts, std::size_t per_cell_target, std::size_t count) {
  Vec3 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 ext = (hi - lo).cwiseMax(1.0);
  return std::max(0.5, std::cbrt(ext.prod() * double(per_cell_target) / double(std::max<std::size_t>(count, 1))));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Weighted k-means

struct KMeansResult {
  std::vector<Vec3> centers;
  std::vector<int> assignment;
  std::vector<double> objective;  // after each assignment step
  int iterations = 0;
  int reseeded = 0;
};

struct KMeansOptions {
  int max_iterations = 100;
  double tolerance = 1e-4;  // relative objective change
};

/// k-means++ seeding (probability proportional to weight * D^2) followed by
/// Lloyd iterations with weighted means. Empty clusters move to the point
/// farthest from its center. Ties break toward the lower index, so results
/// do not depend on the thread count.
inline KMeansResult weighted_kmeans(const std::vector<Vec3>& pts, const std::vector<double>& w, int k, std::uint64_t seed,
                                    const KMeansOptions& opt = {}) {
  const std::size_t n = pts.size();
  if (w.size() != n) throw std::invalid_argument("k-means: weights and points differ in length");
  if (k < 1) throw std::invalid_argument("k-means: k must be >= 1");
  if (n < std::size_t(k))
    throw InvalidInput("k-means: " + std::to_string(n) + " points cannot give " + std::to_string(k) + " centers");
  for (double x : w)
    if (!(x > 0) || !std::isfinite(x)) throw std::invalid_argument("k-means: weights must be positive");

  KMeansResult res;
  Rng rng(seed);

  // Seeding. D2 updates only touch grid cells that can hold a point closer to
  // the new center than its current nearest.
  {
    detail::PointGrid grid(pts, detail::default_cell(pts, 8, n));
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<double> cell_max(grid.cells(), std::numeric_limits<double>::infinity());
    std::vector<char> chosen(n, 0);
    detail::Fenwick fw(n);
    for (std::size_t i = 0; i < n; ++i) fw.set(i, w[i]);
    for (int c = 0; c < k; ++c) {
      const double total = fw.total();
      std::size_t pick;
      if (total > 0) {
        pick = fw.find(rng.uniform() * total);
        if (chosen[pick] || fw.value(pick) == 0) {
          // Rounding in the tree can land on a zero slot; take the next live one.
          std::size_t j = pick;
          while (j < n && (chosen[j] || fw.value(j) == 0)) ++j;
          if (j == n) {
            j = 0;
            while (j < n && (chosen[j] || fw.value(j) == 0)) ++j;
          }
          pick = j < n ? j : pick;
        }
      } else {
        pick = 0;
        while (chosen[pick]) ++pick;  // only duplicates left
      }
      chosen[pick] = 1;
      const Vec3 q = pts[pick];
      res.centers.push_back(q);
      double global = 0;
      for (double m : cell_max) global = std::max(global, m);
      const double reach = std::sqrt(global);
      const auto a = grid.coord(q - Vec3::Constant(reach));
      const auto b = grid.coord(q + Vec3::Constant(reach));
      for (int z = a[2]; z <= b[2]; ++z)
        for (int y = a[1]; y <= b[1]; ++y)
          for (int x = a[0]; x <= b[0]; ++x) {
            const std::size_t cell = grid.index(x, y, z);
            if (grid.cell_dist2(q, x, y, z) >= cell_max[cell]) continue;
            double m = 0;
            for (int i : grid.bucket(cell)) {
              const double dd = (pts[i] - q).squaredNorm();
              if (dd < d2[i]) {
                d2[i] = dd;
                fw.set(i, chosen[i] ? 0.0 : w[i] * dd);
              }
              m = std::max(m, d2[i]);
            }
            cell_max[cell] = m;
          }
    }
  }

  // Lloyd.
  res.assignment.assign(n, 0);
  std::vector<double> dist2(n);
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iterations; ++it) {
    detail::PointGrid cgrid(res.centers, detail::default_cell(res.centers, 2, res.centers.size()));
    parallel_chunks(n, 4096, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        auto [c, d] = cgrid.nearest(pts[i]);
        res.assignment[i] = c;
        dist2[i] = d;
      }
    });
    std::vector<double> mass(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) mass[res.assignment[i]] += w[i];
    for (int c = 0; c < k; ++c) {
      if (mass[c] > 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (dist2[i] > dist2[far]) far = i;
      mass[res.assignment[far]] -= w[far];
      res.centers[c] = pts[far];
      res.assignment[far] = c;
      dist2[far] = 0;
      mass[c] = w[far];
      ++res.reseeded;
    }
    double obj = 0;
    for (std::size_t i = 0; i < n; ++i) obj += w[i] * dist2[i];
    assert(obj <= prev * (1 + 1e-12) + 1e-12);
    res.objective.push_back(obj);
    res.iterations = it + 1;

    std::vector<Vec3> sum(k, Vec3::Zero());
    std::vector<double> ws(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[res.assignment[i]] += w[i] * pts[i];
      ws[res.assignment[i]] += w[i];
    }
    for (int c = 0; c < k; ++c)
      if (ws[c] > 0) res.centers[c] = sum[c] / ws[c];
    const bool done = std::isfinite(prev) && (prev - obj) <= opt.tolerance * std::max(prev, 1e-300);
    prev = obj;
    if (done || obj == 0) break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Proximity graph

struct ProximityResult {
  std::vector<std::pair<int, int>> edges;  // a < b, sorted
  int truncated_cells = 0;
};

/// R rounds of a cubic lattice with side cell_size, shifted per round by a
/// uniform offset in [0, cell_size)^3; points sharing a cell are connected
/// (nearest pairs first, at most max_pairs_per_cell per cell). The shift of
/// round r depends only on (seed, r).
inline ProximityResult proximity_graph(const std::vector<Vec3>& pts, double cell_size, int rounds, std::uint64_t seed,
                                       int max_pairs_per_cell = 64) {
  if (!(cell_size > 0)) throw std::invalid_argument("proximity: cell size must be positive");
  if (rounds < 1) throw std::invalid_argument("proximity: rounds must be >= 1");
  ProximityResult out;
  std::set<std::pair<int, int>> all;
  const double cutoff2 = 3 * cell_size * cell_size;
  for (int r = 0; r < rounds; ++r) {
    Rng rng(derive_seed(seed, 0x70726f78ULL, std::uint64_t(r)));
    const Vec3 shift(rng.uniform() * cell_size, rng.uniform() * cell_size, rng.uniform() * cell_size);
    std::map<std::array<long, 3>, std::vector<int>> cells;
    for (int i = 0; i < int(pts.size()); ++i) {
      std::array<long, 3> key;
      for (int k = 0; k < 3; ++k) key[k] = static_cast<long>(std::floor((pts[i][k] - shift[k]) / cell_size));
      cells[key].push_back(i);
    }
    for (auto& [key, members] : cells) {
      std::vector<std::tuple<double, int, int>> pairs;
      for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) {
          const double d2 = (pts[members[a]] - pts[members[b]]).squaredNorm();
          if (d2 <= cutoff2) pairs.emplace_back(d2, std::min(members[a], members[b]), std::max(members[a], members[b]));
        }
      if (int(pairs.size()) > max_pairs_per_cell) {
        std::sort(pairs.begin(), pairs.end());
        pairs.resize(max_pairs_per_cell);
        ++out.truncated_cells;
      }
      for (auto& [d2, a, b] : pairs) all.emplace(a, b);
    }
  }
  out.edges.assign(all.begin(), all.end());
  return out;
}

/// Compressed adjacency with Euclidean edge lengths.
struct Adjacency {
  std::vector<int> offset;
  std::vector<int> target;
  std::vector<double> length;

  Adjacency(const std::vector<Vec3>& pts, const std::vector<std::pair<int, int>>& edges) : offset(pts.size() + 1, 0) {
    for (auto [a, b] : edges) {
      if (a < 0 || b < 0 || a >= int(pts.size()) || b >= int(pts.size()))
        throw std::invalid_argument("edge index out of range");
      ++offset[a + 1];
      ++offset[b + 1];
    }
    std::partial_sum(offset.begin(), offset.end(), offset.begin());
    target.resize(offset.back());
    length.resize(offset.back());
    std::vector<int> fill(offset.begin(), offset.end() - 1);
    for (auto [a, b] : edges) {
      const double len = (pts[a] - pts[b]).norm();
      target[fill[a]] = b;
      length[fill[a]++] = len;
      target[fill[b]] = a;
      length[fill[b]++] = len;
    }
  }
  std::size_t size() const { return offset.size() - 1; }
};

struct Path {
  std::vector<int> points;
  double length = 0;
};

/// A* with the straight-line heuristic. `blocked` (optional) marks vertices
/// that may not appear in the path interior; `max_length` prunes longer
/// paths. Returns nullopt when dst is unreachable.
inline std::optional<Path> astar(const std::vector<Vec3>& pts, const Adjacency& adj, int src, int dst,
                                 const std::vector<char>* blocked = nullptr,
                                 double max_length = std::numeric_limits<double>::infinity()) {
  const int n = static_cast<int>(adj.size());
  if (src < 0 || dst < 0 || src >= n || dst >= n || n != int(pts.size()))
    throw std::invalid_argument("astar: point index out of range");
  if (src == dst) return Path{{src}, 0.0};
  std::unordered_map<int, double> g;
  std::unordered_map<int, int> parent;
  using Item = std::tuple<double, double, int>;  // f, g, vertex
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  auto h = [&](int v) { return (pts[v] - pts[dst]).norm(); };
  g[src] = 0;
  open.emplace(h(src), 0.0, src);
  std::set<int> closed;
  while (!open.empty()) {
    auto [f, gv, v] = open.top();
    open.pop();
    if (closed.count(v)) continue;
    if (v == dst) {
      Path p;
      p.length = gv;
      for (int x = dst; x != src; x = parent.at(x)) p.points.push_back(x);
      p.points.push_back(src);
      std::reverse(p.points.begin(), p.points.end());
      return p;
    }
    closed.insert(v);
    for (int e = adj.offset[v]; e < adj.offset[v + 1]; ++e) {
      const int u = adj.target[e];
      if (closed.count(u)) continue;
      if (blocked && (*blocked)[u] && u != dst) continue;
      const double gu = gv + adj.length[e];
      if (gu + h(u) > max_length * (1 + 1e-12)) continue;
      auto it = g.find(u);
      if (it == g.end() || gu < it->second || (gu == it->second && v < parent[u])) {
        g[u] = gu;
        parent[u] = v;
        open.emplace(gu + h(u), gu, u);
      }
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Extraction

enum class ExtractMode { network3d, ghirigoro, baseline };

inline std::string mode_name(ExtractMode m) {
  switch (m) {
    case ExtractMode::network3d: return "network3d";
    case ExtractMode::ghirigoro: return "ghirigoro";
    case ExtractMode::baseline: return "baseline";
  }
  return "?";
}

struct ExtractParams {
  int k_nodes = 300;
  int link_multiplier = 50;
  double tau = 0.1;
  double cell_size = 0;        // <= 0: 2 * (occupied voxels / k-means points)^(1/3)
  int rounds = 4;
  double max_link_length = 0;  // <= 0: 15 voxels per 64 of grid extent
  ExtractMode mode = ExtractMode::baseline;
  std::uint64_t seed = 1;
  int max_partners = 12;
  int max_pairs_per_cell = 64;
  RadiusParams radii;

  /// Defaults per mode: 300 nodes with 50x link points for the baseline,
  /// 300 with 10x for generator output, 30 anchors with 20x for doodles.
  static ExtractParams for_mode(ExtractMode m) {
    ExtractParams p;
    p.mode = m;
    if (m == ExtractMode::network3d) p.link_multiplier = 10;
    if (m == ExtractMode::ghirigoro) {
      p.k_nodes = 30;
      p.link_multiplier = 20;
    }
    return p;
  }

  void validate() const {
    if (k_nodes < 1) throw std::invalid_argument("k_nodes must be >= 1");
    if (link_multiplier < 0) throw std::invalid_argument("link multiplier must be >= 0");
    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
    if (!(tau >= 0 && tau < 1)) throw std::invalid_argument("tau must lie in [0,1)");
    if (max_partners < 1 || max_pairs_per_cell < 1) throw std::invalid_argument("partner and per-cell caps must be >= 1");
  }
};

struct ExtractStats {
  std::size_t node_voxels = 0, link_voxels = 0;
  int k_nodes = 0, k_links = 0;
  double cell_size = 0, max_link_length = 0;
  std::size_t proximity_edges = 0;
  int truncated_cells = 0;
  int candidate_pairs = 0;
  int unreachable = 0;
  int dropped_near_node = 0;
};

namespace detail {

// Shared core: node centers and link points already chosen.
inline SpatialGraph connect_nodes(const std::vector<Vec3>& nodes, const std::vector<Vec3>& links, double cell, double lmax,
                                  const ExtractParams& p, bool node_spheres, ExtractStats& st) {
  std::vector<Vec3> pts = nodes;
  pts.insert(pts.end(), links.begin(), links.end());
  const int kn = static_cast<int>(nodes.size());
  auto prox = proximity_graph(pts, cell, p.rounds, derive_seed(p.seed, 0x67726166ULL), p.max_pairs_per_cell);
  st.proximity_edges = prox.edges.size();
  st.truncated_cells = prox.truncated_cells;
  const Adjacency adj(pts, prox.edges);
  std::vector<char> blocked(pts.size(), 0);
  std::fill(blocked.begin(), blocked.begin() + kn, 1);

  // Candidate partners: up to max_partners nearest within 2 * lmax.
  std::set<std::pair<int, int>> pair_set;
  for (int i = 0; i < kn; ++i) {
    std::vector<std::pair<double, int>> near;
    for (int j = 0; j < kn; ++j) {
      if (j == i) continue;
      const double d = (nodes[i] - nodes[j]).norm();
      if (d <= 2 * lmax) near.emplace_back(d, j);
    }
    std::sort(near.begin(), near.end());
    if (int(near.size()) > p.max_partners) near.resize(p.max_partners);
    for (auto [d, j] : near) pair_set.emplace(std::min(i, j), std::max(i, j));
  }
  const std::vector<std::pair<int, int>> pairs(pair_set.begin(), pair_set.end());
  st.candidate_pairs = static_cast<int>(pairs.size());
  std::vector<std::optional<Path>> found(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t t) {
    found[t] = astar(pts, adj, pairs[t].first, pairs[t].second, &blocked, lmax);
  });

  SpatialGraph g;
  for (const auto& c : nodes) g.nodes.push_back({c, 0.0, 0});
  for (std::size_t t = 0; t < pairs.size(); ++t) {
    if (!found[t]) {
      ++st.unreachable;
      continue;
    }
    GraphLink l{pairs[t].first, pairs[t].second, {}};
    for (int v : found[t]->points) l.path.push_back(pts[v]);
    g.links.push_back(std::move(l));
  }
  // Drop links passing within a node radius of a third node; radii follow the
  // remaining degrees, so repeat until stable.
  for (;;) {
    g.recount_degrees();
    for (auto& nd : g.nodes)
      nd.radius = node_spheres ? radius_of_degree(nd.degree, RadiusRole::target_node, p.radii) : 0.0;
    if (!node_spheres) break;
    std::vector<char> clear(g.links.size(), 1);
    for (std::size_t i = 0; i < g.links.size(); ++i) {
      const auto& l = g.links[i];
      for (std::size_t q = 1; q + 1 < l.path.size() && clear[i]; ++q)
        for (int m = 0; m < kn && clear[i]; ++m)
          if (m != l.a && m != l.b && (l.path[q] - g.nodes[m].position).norm() < g.nodes[m].radius) clear[i] = 0;
    }
    if (std::count(clear.begin(), clear.end(), 0) == 0) break;
    std::vector<GraphLink> keep;
    for (std::size_t i = 0; i < g.links.size(); ++i) {
      if (clear[i])
        keep.push_back(std::move(g.links[i]));
      else
        ++st.dropped_near_node;
    }
    g.links = std::move(keep);
  }
  return g;
}

inline std::size_t union_occupied(const WeightedPointSet& a, const WeightedPointSet& b) {
  std::set<std::array<double, 3>> cells;
  for (const auto& p : a.points) cells.insert({p.x(), p.y(), p.z()});
  for (const auto& p : b.points) cells.insert({p.x(), p.y(), p.z()});
  return cells.size();
}

inline double auto_lmax(const GridDims& d) { return 15.0 * std::max({d.d, d.h, d.w}) / 64.0; }

}  // namespace detail

/// Nodes from the node channel and link points from the link channel (both
/// by weighted k-means over voxels above tau), joined by A* paths that pass
/// only through link points. k is capped at the number of available voxels.
/// An empty link channel gives nodes without links.
inline SpatialGraph extract_network(const VoxelGrid& node_grid, int node_channel, const VoxelGrid& link_grid,
                                    int link_channel, const ExtractParams& p, ExtractStats* stats = nullptr) {
  p.validate();
  if (!(node_grid.dims() == link_grid.dims())) throw InvalidInput("node and link channels differ in size");
  ExtractStats st;
  const auto np = threshold_points(node_grid, node_channel, p.tau);
  const auto lp = threshold_points(link_grid, link_channel, p.tau);
  st.node_voxels = np.size();
  st.link_voxels = lp.size();
  if (np.empty()) throw ExtractionError("node channel has no voxel above tau=" + std::to_string(p.tau));
  st.k_nodes = std::min<int>(p.k_nodes, int(np.size()));
  st.k_links = std::min<int>(p.k_nodes * p.link_multiplier, int(lp.size()));
  const auto nodes = weighted_kmeans(np.points, np.weights, st.k_nodes, derive_seed(p.seed, 0x6e6f6465ULL)).centers;
  std::vector<Vec3> links;
  if (st.k_links > 0) links = weighted_kmeans(lp.points, lp.weights, st.k_links, derive_seed(p.seed, 0x6c696e6bULL)).centers;
  const double occupied = double(&node_grid == &link_grid && node_channel == link_channel ? np.size()
                                                                                           : detail::union_occupied(np, lp));
  st.cell_size = p.cell_size > 0 ? p.cell_size : 2.0 * std::cbrt(occupied / double(st.k_nodes + st.k_links));
  st.max_link_length = p.max_link_length > 0 ? p.max_link_length : detail::auto_lmax(node_grid.dims());
  auto g = detail::connect_nodes(nodes, links, st.cell_size, st.max_link_length, p,
                                 p.mode != ExtractMode::ghirigoro, st);
  if (stats) *stats = st;
  return g;
}

/// Single-channel doodle extraction: a few anchors plus many link points from
/// the same channel; anchors carry radius 0 (no spheres).
inline SpatialGraph extract_ghirigoro(const VoxelGrid& grid, int channel, ExtractParams p, ExtractStats* stats = nullptr) {
  p.mode = ExtractMode::ghirigoro;
  return extract_network(grid, channel, grid, channel, p, stats);
}

/// The no-prior baseline: the filled input voxels, uniformly weighted, feed
/// both node and link k-means.
inline SpatialGraph baseline_extract(const VoxelGrid& filled, ExtractParams p, ExtractStats* stats = nullptr) {
  p.mode = ExtractMode::baseline;
  VoxelGrid binary(filled.dims(), 1, 0.0f, filled.voxel_size());
  auto src = filled.channel(0);
  auto dst = binary.channel(0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < src.size(); ++i)
    if (src[i] >= 0.5f) {
      dst[i] = 1.0f;
      ++count;
    }
  if (count == 0) throw ExtractionError("filled grid is empty");
  return extract_network(binary, 0, binary, 0, p, stats);
}

}  // namespace voxtopo
