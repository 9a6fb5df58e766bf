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

// Synthetic training data: random graphs, 3D layouts, blob/target
// rasterization, rotation augmentation and the on-disk dataset.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxtopo/common.hpp"
#include "voxtopo/error.hpp"
#include "voxtopo/parallel.hpp"
#include "voxtopo/voxgrid.hpp"

namespace voxtopo {

struct Graph {
  int node_count = 0;
  std::vector<std::pair<int, int>> edges;  // a < b

  std::vector<int> degrees() const {
    std::vector<int> d(node_count, 0);
    for (auto [a, b] : edges) {
      ++d[a];
      ++d[b];
    }
    return d;
  }

  /// Throws std::logic_error on a self-loop, duplicate or out-of-range edge.
  void validate() const {
    std::set<std::pair<int, int>> seen;
    for (auto [a, b] : edges) {
      if (a == b) throw std::logic_error("self-loop at " + std::to_string(a));
      if (a < 0 || b < 0 || a >= node_count || b >= node_count) throw std::logic_error("edge index out of range");
      if (!seen.emplace(std::min(a, b), std::max(a, b)).second) throw std::logic_error("duplicate edge");
    }
  }

  static Graph path(int n) {
    Graph g{n, {}};
    for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
    return g;
  }
};

namespace detail {
inline void add_edge(Graph& g, int a, int b) { g.edges.emplace_back(std::min(a, b), std::max(a, b)); }
}  // namespace detail

/// Preferential attachment in the networkx construction: m initial nodes
/// without edges, node m links to all of them, and every later node links to
/// m distinct existing nodes drawn with probability proportional to degree.
/// Edge count is m*(n-m).
inline Graph gen_ba(int n, int m, std::uint64_t seed) {
  if (m < 1 || m >= n) throw std::invalid_argument("BA needs 1 <= m < n (got n=" + std::to_string(n) + ", m=" + std::to_string(m) + ")");
  Rng rng(seed);
  Graph g{n, {}};
  g.edges.reserve(std::size_t(m) * (n - m));
  std::vector<int> targets(m);
  std::iota(targets.begin(), targets.end(), 0);
  std::vector<int> repeated;  // each node once per incident edge end
  for (int source = m; source < n; ++source) {
    for (int t : targets) detail::add_edge(g, source, t);
    repeated.insert(repeated.end(), targets.begin(), targets.end());
    repeated.insert(repeated.end(), std::size_t(m), source);
    std::vector<int> next;
    while (int(next.size()) < m) {
      const int pick = repeated[rng.below(repeated.size())];
      if (std::find(next.begin(), next.end(), pick) == next.end()) next.push_back(pick);
    }
    targets = std::move(next);
  }
  return g;
}

/// Each of the n(n-1)/2 pairs independently with probability p.
inline Graph gen_er(int n, double p, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("ER needs n >= 0");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("ER probability must lie in [0,1]");
  Rng rng(seed);
  Graph g{n, {}};
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (rng.uniform() < p) g.edges.emplace_back(a, b);
  return g;
}

// ---------------------------------------------------------------------------
// Radii

enum class RadiusRole { blob_node, blob_link, target_node, target_link };

struct RoleRadius {
  double base = 0;
  double scale = 0;  // per sqrt(degree); ignored for links
  double min = 0;
  double max = 0;
};

/// Defaults are calibrated for a 64^3 grid. Radii are in voxels and do not
/// scale with resolution.
struct RadiusParams {
  RoleRadius target_node{1.5, 0.5, 1.5, 4.0};
  RoleRadius blob_node{3.0, 1.0, 3.0, 8.0};
  double target_link = 1.0;
  double blob_link = 2.0;

  const RoleRadius& node(RadiusRole role) const { return role == RadiusRole::blob_node ? blob_node : target_node; }

  /// Every radius multiplied by f (for small toy grids).
  RadiusParams scaled(double f) const {
    RadiusParams r = *this;
    for (RoleRadius* n : {&r.target_node, &r.blob_node}) {
      n->base *= f;
      n->scale *= f;
      n->min *= f;
      n->max *= f;
    }
    r.target_link *= f;
    r.blob_link *= f;
    return r;
  }

  void validate() const {
    if (!(target_link > 0 && blob_link > target_link))
      throw std::invalid_argument("link radii must satisfy 0 < target_link < blob_link");
    if (!(target_node.min > 0 && target_node.min <= target_node.max && blob_node.min <= blob_node.max))
      throw std::invalid_argument("node radius clamps must be positive and ordered");
    if (!(blob_node.base > target_node.base && blob_node.scale >= target_node.scale && blob_node.min > target_node.min &&
          blob_node.max > target_node.max))
      throw std::invalid_argument("blob node radii must exceed target node radii");
  }
};

/// r = base + scale*sqrt(degree) clamped to [min, max] for node roles; link
/// roles return their fixed thickness. Degrees below 1 count as 1.
inline double radius_of_degree(int degree, RadiusRole role, const RadiusParams& p = {}) {
  switch (role) {
    case RadiusRole::blob_link: return p.blob_link;
    case RadiusRole::target_link: return p.target_link;
    default: break;
  }
  const RoleRadius& r = p.node(role);
  const double d = std::max(1, degree);
  return std::clamp(r.base + r.scale * std::sqrt(d), r.min, r.max);
}

// ---------------------------------------------------------------------------
// Layout

/// Axis-aligned region in voxel-center coordinates.
struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 half() const { return 0.5 * (hi - lo); }

  /// Grid of res^3 voxels minus margin on every side.
  static Box grid(int res, double margin) {
    return {Vec3::Constant(margin), Vec3::Constant(res - 1 - margin)};
  }
};

struct LayoutParams {
  RadiusParams radii;
  double rest_factor = 2.5;     // rest length / mean node diameter
  double spring = 0.2;
  double repulsion = 0.05;      // times rest^3 / d^2
  double cutoff_factor = 4.0;   // repulsion cutoff / rest length
  double centering = 0.01;
  double damping = 0.9;
  int max_iterations = 500;
  int projection_rounds = 2000;
};

struct LayoutGraph {
  Graph graph;
  std::vector<Vec3> positions;
  std::vector<double> node_radii;  // target radii; the non-overlap radii
  std::vector<double> fit_radii;   // blob radii; kept inside the box
  bool converged = false;
  int iterations = 0;
};

namespace detail {

// Deterministic direction for coincident points.
inline Vec3 split_direction(int a, int b) {
  Rng rng(derive_seed(0x73706c6974ULL, std::uint64_t(a), std::uint64_t(b)));
  return rng.unit_vector();
}

}  // namespace detail

/// Force-directed 3D layout: springs toward the rest length along edges,
/// inverse-square repulsion within a cutoff, a weak pull to the origin. The
/// result is centered in the box and shrunk (never enlarged) until every blob
/// sphere fits, then overlapping target spheres are projected apart.
inline LayoutGraph layout_3d(const Graph& graph, const Box& box, const LayoutParams& params, std::uint64_t seed) {
  graph.validate();
  params.radii.validate();
  const int n = graph.node_count;
  LayoutGraph out{graph, std::vector<Vec3>(n, box.center()), {}, {}, true, 0};
  const auto deg = graph.degrees();
  for (int i = 0; i < n; ++i) {
    out.node_radii.push_back(radius_of_degree(deg[i], RadiusRole::target_node, params.radii));
    out.fit_radii.push_back(radius_of_degree(deg[i], RadiusRole::blob_node, params.radii));
    for (int k = 0; k < 3; ++k)
      if (box.half()[k] < out.fit_radii[i])
        throw InvalidInput("box too small for a node of radius " + std::to_string(out.fit_radii[i]));
  }
  if (n <= 1) return out;

  double mean_diameter = 0;
  for (double r : out.node_radii) mean_diameter += 2 * r / n;
  const double rest = params.rest_factor * mean_diameter;
  const double cutoff2 = std::pow(params.cutoff_factor * rest, 2);
  const double rest3 = rest * rest * rest;

  Rng rng(seed);
  std::vector<Vec3> pos(n), vel(n, Vec3::Zero()), force(n);
  const double spread = rest * std::cbrt(double(n));
  for (auto& p : pos) p = rng.unit_vector() * spread * std::cbrt(rng.uniform());

  out.converged = false;
  for (int it = 0; it < params.max_iterations; ++it) {
    for (int i = 0; i < n; ++i) force[i] = -params.centering * pos[i];
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        Vec3 d = pos[i] - pos[j];
        double d2 = d.squaredNorm();
        if (d2 > cutoff2) continue;
        if (d2 < 1e-12) {
          d = detail::split_direction(i, j) * 1e-6;
          d2 = d.squaredNorm();
        }
        const Vec3 f = d / std::sqrt(d2) * (params.repulsion * rest3 / d2);
        force[i] += f;
        force[j] -= f;
      }
    for (auto [a, b] : graph.edges) {
      const Vec3 d = pos[b] - pos[a];
      const double len = d.norm();
      if (len < 1e-12) continue;
      const Vec3 f = d / len * (params.spring * (len - rest));
      force[a] += f;
      force[b] -= f;
    }
    double max_step = 0;
    for (int i = 0; i < n; ++i) {
      vel[i] = params.damping * (vel[i] + force[i] / (1.0 + params.spring * deg[i]));
      const double s = vel[i].norm();
      if (s > 0.5 * rest) vel[i] *= 0.5 * rest / s;
      pos[i] += vel[i];
      max_step = std::max(max_step, vel[i].norm());
    }
    out.iterations = it + 1;
    if (max_step < 1e-3 * rest) {
      out.converged = true;
      break;
    }
  }

  // Center the position bbox in the box; shrink to fit the blob spheres.
  Vec3 lo = pos[0], hi = pos[0];
  for (const auto& p : pos) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 mid = 0.5 * (lo + hi);
  double s = 1.0;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      const double off = std::abs(pos[i][k] - mid[k]);
      if (off > 0) s = std::min(s, (box.half()[k] - out.fit_radii[i]) / off);
    }
  for (int i = 0; i < n; ++i) pos[i] = box.center() + s * (pos[i] - mid);

  // Hard constraints: push apart overlapping pairs, clamp into the box.
  auto clamp_in = [&](int i) {
    for (int k = 0; k < 3; ++k)
      pos[i][k] = std::clamp(pos[i][k], box.lo[k] + out.fit_radii[i], box.hi[k] - out.fit_radii[i]);
  };
  bool clean = false;
  for (int round = 0; round < params.projection_rounds && !clean; ++round) {
    clean = true;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double need = (out.node_radii[i] + out.node_radii[j]) * (1.0 + 1e-9);
        Vec3 d = pos[j] - pos[i];
        const double len = d.norm();
        if (len >= need) continue;
        clean = false;
        const Vec3 dir = len > 1e-12 ? Vec3(d / len) : detail::split_direction(i, j);
        const double push = 0.5 * (need - len) * (1.0 + 1e-6) + 1e-9;
        pos[i] -= push * dir;
        pos[j] += push * dir;
        clamp_in(i);
        clamp_in(j);
      }
  }
  if (!clean) throw InvalidInput("could not separate " + std::to_string(n) + " nodes inside the box");
  out.positions = std::move(pos);
  return out;
}

/// Exhaustive invariant check: overlapping target pairs and blob spheres
/// outside the box.
struct LayoutViolations {
  int overlaps = 0;
  int outside = 0;
};

inline LayoutViolations check_layout(const LayoutGraph& l, const Box& box) {
  LayoutViolations v;
  const int n = l.graph.node_count;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k)
      if (l.positions[i][k] - l.fit_radii[i] < box.lo[k] - 1e-9 || l.positions[i][k] + l.fit_radii[i] > box.hi[k] + 1e-9) {
        ++v.outside;
        break;
      }
    for (int j = i + 1; j < n; ++j)
      if ((l.positions[i] - l.positions[j]).norm() < l.node_radii[i] + l.node_radii[j]) ++v.overlaps;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Doodle curves

struct WalkParams {
  int min_steps = 200;
  int max_steps = 600;
  double step = 1.0;       // voxels per step
  double momentum = 0.8;   // weight of the previous heading
  int smooth_window = 2;   // moving-average half-width
};

/// Correlated random walk reflected inside the box (shrunk by the blob tube
/// radius), then smoothed. Returned as a path graph whose node radii are the
/// target tube radius.
inline LayoutGraph random_walk_curve(const Box& box, const WalkParams& wp, const RadiusParams& radii, std::uint64_t seed) {
  radii.validate();
  if (wp.min_steps < 1 || wp.max_steps < wp.min_steps) throw std::invalid_argument("walk step range is empty");
  const Box inner{box.lo + Vec3::Constant(radii.blob_link), box.hi - Vec3::Constant(radii.blob_link)};
  if ((inner.hi - inner.lo).minCoeff() <= 0) throw InvalidInput("box too small for the walk tube");
  Rng rng(seed);
  const int steps = static_cast<int>(rng.range(wp.min_steps, wp.max_steps));
  std::vector<Vec3> pts;
  pts.reserve(steps + 1);
  Vec3 p = inner.center() + 0.25 * (inner.hi - inner.lo).cwiseProduct(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  Vec3 heading = rng.unit_vector();
  pts.push_back(p);
  for (int s = 0; s < steps; ++s) {
    heading = (wp.momentum * heading + (1 - wp.momentum) * rng.unit_vector()).normalized();
    p += wp.step * heading;
    for (int k = 0; k < 3; ++k) {
      if (p[k] < inner.lo[k]) {
        p[k] = 2 * inner.lo[k] - p[k];
        heading[k] = -heading[k];
      } else if (p[k] > inner.hi[k]) {
        p[k] = 2 * inner.hi[k] - p[k];
        heading[k] = -heading[k];
      }
      p[k] = std::clamp(p[k], inner.lo[k], inner.hi[k]);
    }
    pts.push_back(p);
  }
  std::vector<Vec3> smooth(pts.size());
  const int w = std::max(0, wp.smooth_window);
  for (int i = 0; i < int(pts.size()); ++i) {
    const int a = std::max(0, i - w), b = std::min(int(pts.size()) - 1, i + w);
    Vec3 acc = Vec3::Zero();
    for (int j = a; j <= b; ++j) acc += pts[j];
    smooth[i] = acc / double(b - a + 1);
  }
  LayoutGraph out{Graph::path(int(smooth.size())), std::move(smooth), {}, {}, true, steps};
  out.node_radii.assign(out.positions.size(), radii.target_link);
  out.fit_radii.assign(out.positions.size(), radii.blob_link);
  return out;
}

// ---------------------------------------------------------------------------
// Pairs

enum class Style { network3d, ghirigoro };

inline std::string style_name(Style s) { return s == Style::network3d ? "network3d" : "ghirigoro"; }

inline Style parse_style(const std::string& s) {
  if (s == "network3d") return Style::network3d;
  if (s == "ghirigoro") return Style::ghirigoro;
  throw std::invalid_argument("unknown style '" + s + "' (expected network3d or ghirigoro)");
}

inline int style_channels(Style s) { return s == Style::network3d ? 2 : 1; }

struct SampleMeta {
  std::uint64_t seed = 0;
  Vec3 angles = Vec3::Zero();  // degrees about x, y, z
  int network = 0;
  int rotation = 0;
};

struct SamplePair {
  VoxelGrid input_blob;
  VoxelGrid target;
  SampleMeta meta;
};

/// Rasterizes the blob input and the target channels of one layout.
/// network3d: blob = nodes at blob radii + links at blob thickness; target
/// channel 0 = nodes at target radii, channel 1 = links at target thickness.
/// ghirigoro: blob = thick tube along every edge, target = thin tube.
inline SamplePair synth_pair(const LayoutGraph& layout, int resolution, Style style, const RadiusParams& radii = {}) {
  radii.validate();
  const GridDims dims{resolution, resolution, resolution};
  SamplePair p{VoxelGrid(dims, 1), VoxelGrid(dims, style_channels(style)), {}};
  const int n = layout.graph.node_count;
  if (int(layout.positions.size()) != n) throw std::invalid_argument("layout positions do not match the graph");
  const auto deg = layout.graph.degrees();
  const double lo = -0.5, hi = resolution - 0.5;
  for (int i = 0; i < n; ++i) {
    const double r = style == Style::network3d ? radius_of_degree(deg[i], RadiusRole::blob_node, radii) : radii.blob_link;
    for (int k = 0; k < 3; ++k)
      if (layout.positions[i][k] - r < lo || layout.positions[i][k] + r > hi)
        throw InvalidInput("node " + std::to_string(i) + " lies outside the " + std::to_string(resolution) + "^3 grid");
  }
  if (style == Style::network3d) {
    for (int i = 0; i < n; ++i) {
      rasterize_sphere(p.input_blob, layout.positions[i], radius_of_degree(deg[i], RadiusRole::blob_node, radii), 0, 1.0f);
      rasterize_sphere(p.target, layout.positions[i], radius_of_degree(deg[i], RadiusRole::target_node, radii), 0, 1.0f);
    }
    for (auto [a, b] : layout.graph.edges) {
      rasterize_segment(p.input_blob, layout.positions[a], layout.positions[b], radii.blob_link, 0, 1.0f);
      rasterize_segment(p.target, layout.positions[a], layout.positions[b], radii.target_link, 1, 1.0f);
    }
  } else {
    for (auto [a, b] : layout.graph.edges) {
      rasterize_segment(p.input_blob, layout.positions[a], layout.positions[b], radii.blob_link, 0, 1.0f);
      rasterize_segment(p.target, layout.positions[a], layout.positions[b], radii.target_link, 0, 1.0f);
    }
  }
  return p;
}

/// Voxels set in some target channel but not in the blob.
inline std::size_t superset_violations(const SamplePair& p) {
  std::size_t bad = 0;
  const std::size_t n = p.input_blob.voxels_per_channel();
  auto blob = p.input_blob.channel(0);
  for (int c = 0; c < p.target.channels(); ++c) {
    auto t = p.target.channel(c);
    for (std::size_t i = 0; i < n; ++i) bad += t[i] > blob[i];
  }
  return bad;
}

inline constexpr int kAngleSteps = 18;  // 0, 20, ..., 340 degrees

/// The original plus count-1 distinct non-identity rotations from the
/// 20-degree lattice, each applied to blob and target alike.
inline std::vector<SamplePair> augment(const SamplePair& pair, int count, std::uint64_t seed) {
  constexpr int total = kAngleSteps * kAngleSteps * kAngleSteps;
  if (count < 1 || count > total)
    throw std::invalid_argument("augment count must lie in [1, " + std::to_string(total) + "], got " + std::to_string(count));
  Rng rng(seed);
  std::vector<int> picks{0};
  std::set<int> used{0};
  while (int(picks.size()) < count) {
    const int k = 1 + static_cast<int>(rng.below(total - 1));
    if (used.insert(k).second) picks.push_back(k);
  }
  std::vector<SamplePair> out(picks.size());
  parallel_for(picks.size(), [&](std::size_t r) {
    const int k = picks[r];
    const Vec3 angles(20.0 * (k % kAngleSteps), 20.0 * ((k / kAngleSteps) % kAngleSteps), 20.0 * (k / (kAngleSteps * kAngleSteps)));
    SampleMeta meta = pair.meta;
    meta.angles = angles;
    meta.rotation = static_cast<int>(r);
    if (k == 0)
      out[r] = {pair.input_blob, pair.target, meta};
    else
      out[r] = {rotate_grid(pair.input_blob, angles), rotate_grid(pair.target, angles), meta};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetConfig {
  Style style = Style::network3d;
  int networks = 700;
  int n_min = 30;
  int n_max = 120;
  std::vector<int> m_choices{1, 2, 3};
  int resolution = 64;
  double margin = 2;
  int augment_count = 43;
  std::uint64_t seed = 1;
  RadiusParams radii;
  LayoutParams layout;
  WalkParams walk;

  void validate() const {
    if (networks < 1) throw ConfigError("dataset needs at least one network");
    if (resolution < 8) throw ConfigError("dataset resolution must be >= 8");
    if (style == Style::network3d) {
      if (n_min < 2 || n_max < n_min) throw ConfigError("node range must satisfy 2 <= n_min <= n_max");
      if (m_choices.empty()) throw ConfigError("m_choices is empty");
      for (int m : m_choices)
        if (m < 1 || m >= n_min) throw ConfigError("every m must satisfy 1 <= m < n_min");
    }
    if (augment_count < 1 || augment_count > kAngleSteps * kAngleSteps * kAngleSteps)
      throw ConfigError("augment_count out of range");
    try {
      radii.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

inline nlohmann::json to_json(const RadiusParams& r) {
  auto role = [](const RoleRadius& x) { return nlohmann::json{{"base", x.base}, {"scale", x.scale}, {"min", x.min}, {"max", x.max}}; };
  return {{"target_node", role(r.target_node)}, {"blob_node", role(r.blob_node)}, {"target_link", r.target_link},
          {"blob_link", r.blob_link}};
}

inline RadiusParams radius_params_from_json(const nlohmann::json& j) {
  auto role = [](const nlohmann::json& x) {
    return RoleRadius{x.at("base").get<double>(), x.at("scale").get<double>(), x.at("min").get<double>(), x.at("max").get<double>()};
  };
  RadiusParams r;
  r.target_node = role(j.at("target_node"));
  r.blob_node = role(j.at("blob_node"));
  r.target_link = j.at("target_link").get<double>();
  r.blob_link = j.at("blob_link").get<double>();
  return r;
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"style", style_name(c.style)},
          {"networks", c.networks},
          {"n_min", c.n_min},
          {"n_max", c.n_max},
          {"m_choices", c.m_choices},
          {"resolution", c.resolution},
          {"margin", c.margin},
          {"augment_count", c.augment_count},
          {"seed", c.seed},
          {"radii", to_json(c.radii)},
          {"walk", {{"min_steps", c.walk.min_steps}, {"max_steps", c.walk.max_steps}, {"step", c.walk.step},
                    {"momentum", c.walk.momentum}, {"smooth_window", c.walk.smooth_window}}}};
}

struct SampleRecord {
  int id = 0;
  SampleMeta meta;
  int n = 0;  // graph size (walk length for doodles)
  int m = 0;
  std::string input_file, target_file;  // relative to the dataset root
  std::string input_checksum, target_checksum;
};

struct DatasetManifest {
  std::filesystem::path root;
  DatasetConfig config;
  std::vector<SampleRecord> samples;
  nlohmann::json json;
};

namespace detail {

inline std::string pair_stem(int network, int rotation) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "s%05d_r%02d", network, rotation);
  return buf;
}

inline std::string write_checked(const VoxelGrid& g, const std::filesystem::path& path) {
  const std::string bytes = vgrid_bytes(g);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(bytes.data(), std::streamsize(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
  return hex64(fnv1a64(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size())));
}

inline std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

}  // namespace detail

/// One network's pairs before augmentation; exposed for tests.
inline SamplePair make_base_pair(const DatasetConfig& cfg, int network, int* n_out = nullptr, int* m_out = nullptr) {
  const std::uint64_t net_seed = derive_seed(cfg.seed, 0x6e6574ULL, std::uint64_t(network));
  Rng rng(net_seed);
  const Box box = Box::grid(cfg.resolution, cfg.margin);
  LayoutGraph layout;
  int n = 0, m = 0;
  if (cfg.style == Style::network3d) {
    n = static_cast<int>(rng.range(cfg.n_min, cfg.n_max));
    m = cfg.m_choices[rng.below(cfg.m_choices.size())];
    LayoutParams lp = cfg.layout;
    lp.radii = cfg.radii;
    layout = layout_3d(gen_ba(n, m, derive_seed(net_seed, 1)), box, lp, derive_seed(net_seed, 2));
  } else {
    layout = random_walk_curve(box, cfg.walk, cfg.radii, derive_seed(net_seed, 3));
    n = layout.graph.node_count;
  }
  SamplePair pair = synth_pair(layout, cfg.resolution, cfg.style, cfg.radii);
  pair.meta.seed = net_seed;
  pair.meta.network = network;
  if (n_out) *n_out = n;
  if (m_out) *m_out = m;
  return pair;
}

/// Generates networks x augment_count pairs under root/pairs and writes
/// root/manifest.json. Same config, same bytes.
inline DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(root / "pairs", ec);
  if (ec) throw std::runtime_error("cannot create dataset directory " + (root / "pairs").string() + ": " + ec.message());
  std::vector<std::vector<SampleRecord>> per_net(cfg.networks);
  parallel_for(std::size_t(cfg.networks), [&](std::size_t net) {
    const int id = static_cast<int>(net);
    try {
      int n = 0, m = 0;
      const SamplePair base = make_base_pair(cfg, id, &n, &m);
      const auto pairs = augment(base, cfg.augment_count, derive_seed(base.meta.seed, 0x617567ULL));
      for (const auto& p : pairs) {
        SampleRecord rec;
        rec.meta = p.meta;
        rec.n = n;
        rec.m = m;
        const std::string stem = detail::pair_stem(id, p.meta.rotation);
        rec.input_file = "pairs/" + stem + "_in.vgrid";
        rec.target_file = "pairs/" + stem + "_tgt.vgrid";
        rec.input_checksum = detail::write_checked(p.input_blob, root / rec.input_file);
        rec.target_checksum = detail::write_checked(p.target, root / rec.target_file);
        per_net[net].push_back(std::move(rec));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("sample s" + std::to_string(id) + ": " + e.what());
    }
  });
  DatasetManifest man{root, cfg, {}, {}};
  nlohmann::json samples = nlohmann::json::array();
  for (auto& recs : per_net)
    for (auto& r : recs) {
      r.id = static_cast<int>(man.samples.size());
      samples.push_back({{"id", r.id},
                         {"network", r.meta.network},
                         {"rotation", r.meta.rotation},
                         {"seed", r.meta.seed},
                         {"angles", {r.meta.angles.x(), r.meta.angles.y(), r.meta.angles.z()}},
                         {"n", r.n},
                         {"m", r.m},
                         {"files", {{"input", r.input_file}, {"target", r.target_file}}},
                         {"checksums", {{"input", r.input_checksum}, {"target", r.target_checksum}}}});
      man.samples.push_back(std::move(r));
    }
  man.json = {{"format", "voxtopo-dataset"},
              {"version", 1},
              {"style", style_name(cfg.style)},
              {"resolution", cfg.resolution},
              {"channels", style_channels(cfg.style)},
              {"seeds", {{"root", cfg.seed}}},
              {"counts", {{"networks", cfg.networks}, {"augment", cfg.augment_count}, {"samples", man.samples.size()}}},
              {"config", to_json(cfg)},
              {"samples", std::move(samples)}};
  std::ofstream os(root / "manifest.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + (root / "manifest.json").string());
  os << man.json.dump(1) << '\n';
  if (!os) throw std::runtime_error("write failed: " + (root / "manifest.json").string());
  return man;
}

struct LoadedDataset {
  std::string style;
  int resolution = 0;
  int channels = 0;
  std::vector<SamplePair> pairs;
};

/// Reads a dataset written by build_dataset. With verify, every file's
/// checksum must match the manifest (FormatError otherwise).
inline LoadedDataset load_dataset(const std::filesystem::path& root, bool verify = true) {
  std::ifstream is(root / "manifest.json", std::ios::binary);
  if (!is) throw std::runtime_error("no manifest.json under " + root.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  LoadedDataset out;
  try {
    if (j.at("format") != "voxtopo-dataset") throw FormatError("manifest.json: not a voxtopo dataset");
    out.style = j.at("style").get<std::string>();
    out.resolution = j.at("resolution").get<int>();
    out.channels = j.at("channels").get<int>();
    for (const auto& s : j.at("samples")) {
      const auto in = root / s.at("files").at("input").get<std::string>();
      const auto tgt = root / s.at("files").at("target").get<std::string>();
      if (verify) {
        if (detail::file_checksum(in) != s.at("checksums").at("input").get<std::string>())
          throw FormatError("checksum mismatch: " + in.string());
        if (detail::file_checksum(tgt) != s.at("checksums").at("target").get<std::string>())
          throw FormatError("checksum mismatch: " + tgt.string());
      }
      SamplePair p{load_vgrid(in.string()), load_vgrid(tgt.string()), {}};
      p.meta.seed = s.at("seed").get<std::uint64_t>();
      p.meta.network = s.at("network").get<int>();
      p.meta.rotation = s.at("rotation").get<int>();
      const auto& a = s.at("angles");
      p.meta.angles = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
      if (p.input_blob.dims() != p.target.dims() || p.target.channels() != out.channels)
        throw FormatError("sample " + std::to_string(s.at("id").get<int>()) + " has inconsistent grids");
      out.pairs.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return out;
}

}  // namespace voxtopo
