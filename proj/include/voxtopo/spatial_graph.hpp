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

#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxtopo/common.hpp"
#include "voxtopo/error.hpp"

namespace voxtopo {

struct GraphNode {
  Vec3 position = Vec3::Zero();
  double radius = 0.0;
  int degree = 0;
};

/// A link between two nodes along a polyline. path.front() is node a's
/// position and path.back() node b's.
struct GraphLink {
  int a = 0;
  int b = 0;
  std::vector<Vec3> path;

  double length() const {
    double s = 0;
    for (std::size_t i = 1; i < path.size(); ++i) s += (path[i] - path[i - 1]).norm();
    return s;
  }
};

/// Extracted network in voxel units.
struct SpatialGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphLink> links;

  bool empty() const { return nodes.empty(); }

  /// Throws InvalidInput on a dangling endpoint, a detached polyline end or a
  /// repeated undirected link.
  void validate() const {
    std::set<std::pair<int, int>> seen;
    const int n = static_cast<int>(nodes.size());
    for (std::size_t i = 0; i < links.size(); ++i) {
      const auto& l = links[i];
      if (l.a < 0 || l.b < 0 || l.a >= n || l.b >= n)
        throw InvalidInput("link " + std::to_string(i) + " references a missing node");
      if (l.a == l.b) throw InvalidInput("link " + std::to_string(i) + " is a self-loop");
      if (l.path.size() < 2) throw InvalidInput("link " + std::to_string(i) + " has fewer than 2 path points");
      if ((l.path.front() - nodes[l.a].position).norm() > 1e-9 || (l.path.back() - nodes[l.b].position).norm() > 1e-9)
        throw InvalidInput("link " + std::to_string(i) + " path does not end on its nodes");
      if (!seen.emplace(std::min(l.a, l.b), std::max(l.a, l.b)).second)
        throw InvalidInput("duplicate link " + std::to_string(l.a) + "-" + std::to_string(l.b));
    }
  }

  /// Recomputes every node's degree from the link list.
  void recount_degrees() {
    for (auto& nd : nodes) nd.degree = 0;
    for (const auto& l : links) {
      ++nodes[l.a].degree;
      ++nodes[l.b].degree;
    }
  }
};

namespace detail {
inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }
inline Vec3 json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("graph json: expected [x,y,z]");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}
}  // namespace detail

inline nlohmann::json to_json(const SpatialGraph& g) {
  nlohmann::json nodes = nlohmann::json::array(), links = nlohmann::json::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    nodes.push_back({{"id", i}, {"pos", detail::vec_json(n.position)}, {"r", n.radius}, {"deg", n.degree}});
  }
  for (const auto& l : g.links) {
    nlohmann::json path = nlohmann::json::array();
    for (const auto& p : l.path) path.push_back(detail::vec_json(p));
    links.push_back({{"a", l.a}, {"b", l.b}, {"path", std::move(path)}});
  }
  return {{"nodes", std::move(nodes)}, {"links", std::move(links)}};
}

inline SpatialGraph graph_from_json(const nlohmann::json& j) {
  SpatialGraph g;
  try {
    for (const auto& n : j.at("nodes")) {
      if (n.at("id").get<std::size_t>() != g.nodes.size()) throw FormatError("graph json: node ids must be 0..n-1 in order");
      g.nodes.push_back({detail::json_vec(n.at("pos")), n.at("r").get<double>(), n.at("deg").get<int>()});
    }
    for (const auto& l : j.at("links")) {
      GraphLink link{l.at("a").get<int>(), l.at("b").get<int>(), {}};
      for (const auto& p : l.at("path")) link.path.push_back(detail::json_vec(p));
      g.links.push_back(std::move(link));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("graph json: ") + e.what());
  }
  g.validate();
  return g;
}

inline void save_graph(const SpatialGraph& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << to_json(g).dump(1) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline SpatialGraph load_graph(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return graph_from_json(j);
}

}  // namespace voxtopo
