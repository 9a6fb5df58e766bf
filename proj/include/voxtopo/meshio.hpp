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
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "voxtopo/common.hpp"
#include "voxtopo/error.hpp"
#include "voxtopo/spatial_graph.hpp"
#include "voxtopo/voxgrid.hpp"

namespace voxtopo {

using Triangle = std::array<int, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }

  /// Index range and no repeated corner; throws InvalidInput.
  void validate() const {
    const int n = static_cast<int>(vertices.size());
    for (std::size_t t = 0; t < triangles.size(); ++t) {
      const auto& tri = triangles[t];
      for (int i : tri)
        if (i < 0 || i >= n) throw InvalidInput("triangle " + std::to_string(t) + " index out of range");
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
        throw InvalidInput("triangle " + std::to_string(t) + " repeats a vertex");
    }
  }

  std::pair<Vec3, Vec3> bounds() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& tri : triangles)
      for (int i : tri) {
        lo = lo.cwiseMin(vertices[i]);
        hi = hi.cwiseMax(vertices[i]);
      }
    return {lo, hi};
  }

  /// Appends other, shifting its indices.
  void append(const TriMesh& other) {
    const int base = static_cast<int>(vertices.size());
    vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
    for (const auto& t : other.triangles) triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  }
};

enum class MeshFormat { obj, stl_binary, stl_ascii };

inline std::string format_name(MeshFormat f) {
  switch (f) {
    case MeshFormat::obj: return "obj";
    case MeshFormat::stl_binary: return "stl-binary";
    case MeshFormat::stl_ascii: return "stl-ascii";
  }
  return "?";
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t b = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

inline bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && p == tok.data() + tok.size() && std::isfinite(out);
}

inline bool parse_long(std::string_view tok, long& out) {
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && p == tok.data() + tok.size();
}

// Iterates lines with 1-based numbers; handles \r\n.
template <typename Fn>
void for_each_line(std::string_view src, Fn&& fn) {
  long number = 0;
  std::size_t pos = 0;
  while (pos < src.size()) {
    std::size_t end = src.find('\n', pos);
    if (end == std::string_view::npos) end = src.size();
    std::string_view line = src.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(++number, line);
    pos = end + 1;
  }
}

inline void push_triangle(TriMesh& m, int a, int b, int c) {
  if (a == b || b == c || a == c) return;  // degenerate after welding
  m.triangles.push_back({a, b, c});
}

inline TriMesh parse_obj(std::string_view src) {
  TriMesh m;
  for_each_line(src, [&](long ln, std::string_view line) {
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    auto tok = split_ws(line);
    if (tok.empty()) return;
    auto fail = [&](const std::string& why) {
      throw ParseError("obj line " + std::to_string(ln) + ": " + why, ln);
    };
    if (tok[0] == "v") {
      if (tok.size() < 4) fail("vertex needs 3 coordinates");
      Vec3 p;
      for (int k = 0; k < 3; ++k)
        if (!parse_double(tok[1 + k], p[k])) fail("bad coordinate '" + std::string(tok[1 + k]) + "'");
      m.vertices.push_back(p);
    } else if (tok[0] == "f") {
      if (tok.size() < 4) fail("face needs at least 3 vertices");
      std::vector<int> idx;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        std::string_view t = tok[k].substr(0, tok[k].find('/'));
        long v;
        if (!parse_long(t, v)) fail("bad face index '" + std::string(tok[k]) + "'");
        if (v == 0) fail("face index 0 (indices are 1-based)");
        const long n = static_cast<long>(m.vertices.size());
        const long i = v > 0 ? v - 1 : n + v;
        if (i < 0 || i >= n) fail("face index " + std::to_string(v) + " out of range");
        idx.push_back(static_cast<int>(i));
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) push_triangle(m, idx[0], idx[k], idx[k + 1]);
    }
    // vn, vt, usemtl, mtllib, o, g, s, l and anything else are ignored.
  });
  return m;
}

// Welds vertices by exact equality of their coordinates.
template <typename Key>
class Welder {
 public:
  explicit Welder(TriMesh& m) : m_(m) {}
  int add(const Key& key, const Vec3& p) {
    auto [it, fresh] = ids_.try_emplace(key, static_cast<int>(m_.vertices.size()));
    if (fresh) m_.vertices.push_back(p);
    return it->second;
  }

 private:
  TriMesh& m_;
  std::map<Key, int> ids_;
};

inline TriMesh parse_stl_binary(std::string_view src) {
  if (src.size() < 84) throw ParseError("stl: truncated header at byte " + std::to_string(src.size()), long(src.size()));
  std::uint32_t count;
  std::memcpy(&count, src.data() + 80, 4);
  const std::size_t need = 84 + std::size_t(count) * 50;
  if (src.size() != need) {
    const long at = long(std::min(src.size(), need));
    throw ParseError("stl: " + std::to_string(count) + " facets need " + std::to_string(need) + " bytes, found " +
                         std::to_string(src.size()) + " (byte " + std::to_string(at) + ")",
                     at);
  }
  TriMesh m;
  Welder<std::array<std::uint32_t, 3>> weld(m);
  for (std::uint32_t f = 0; f < count; ++f) {
    const char* rec = src.data() + 84 + std::size_t(f) * 50;
    int id[3];
    for (int k = 0; k < 3; ++k) {
      float xyz[3];
      std::memcpy(xyz, rec + 12 + 12 * k, 12);
      for (float c : xyz)
        if (!std::isfinite(c)) {
          const long at = long(rec - src.data()) + 12 + 12 * k;
          throw ParseError("stl: non-finite coordinate at byte " + std::to_string(at), at);
        }
      std::array<std::uint32_t, 3> key{std::bit_cast<std::uint32_t>(xyz[0]), std::bit_cast<std::uint32_t>(xyz[1]),
                                       std::bit_cast<std::uint32_t>(xyz[2])};
      id[k] = weld.add(key, Vec3(xyz[0], xyz[1], xyz[2]));
    }
    push_triangle(m, id[0], id[1], id[2]);
  }
  return m;
}

inline TriMesh parse_stl_ascii(std::string_view src) {
  TriMesh m;
  Welder<std::tuple<double, double, double>> weld(m);
  enum { kTop, kFacet, kLoop, kEndLoop, kEndFacet } state = kTop;
  int corner = 0, id[3] = {0, 0, 0};
  bool saw_solid = false, ended = false;
  for_each_line(src, [&](long ln, std::string_view line) {
    auto tok = split_ws(line);
    if (tok.empty() || ended) return;
    auto fail = [&](const std::string& why) {
      throw ParseError("stl line " + std::to_string(ln) + ": " + why, ln);
    };
    const std::string_view k = tok[0];
    if (!saw_solid) {
      if (k != "solid") fail("expected 'solid'");
      saw_solid = true;
    } else if (k == "facet" && state == kTop) {
      state = kFacet;
    } else if (k == "outer" && state == kFacet) {
      state = kLoop;
      corner = 0;
    } else if (k == "vertex" && state == kLoop) {
      if (tok.size() != 4 || corner >= 3) fail("malformed vertex");
      Vec3 p;
      for (int c = 0; c < 3; ++c)
        if (!parse_double(tok[1 + c], p[c])) fail("bad coordinate '" + std::string(tok[1 + c]) + "'");
      id[corner++] = weld.add({p.x(), p.y(), p.z()}, p);
      if (corner == 3) state = kEndLoop;
    } else if (k == "endloop" && state == kEndLoop) {
      state = kEndFacet;
    } else if (k == "endfacet" && state == kEndFacet) {
      push_triangle(m, id[0], id[1], id[2]);
      state = kTop;
    } else if (k == "endsolid" && state == kTop) {
      ended = true;
    } else {
      fail("unexpected '" + std::string(k) + "'");
    }
  });
  if (!saw_solid) throw ParseError("stl: empty input", 0);
  if (state != kTop) throw ParseError("stl: unterminated facet at end of input", 0);
  return m;
}

}  // namespace detail

/// Parses mesh data held in memory. OBJ normals, texture coordinates and
/// materials are ignored; polygons are fan-triangulated. STL corners are
/// welded when their coordinates are bitwise equal.
inline TriMesh parse_mesh(std::string_view source, MeshFormat format) {
  TriMesh m;
  switch (format) {
    case MeshFormat::obj: m = detail::parse_obj(source); break;
    case MeshFormat::stl_binary: m = detail::parse_stl_binary(source); break;
    case MeshFormat::stl_ascii: m = detail::parse_stl_ascii(source); break;
  }
  if (m.triangles.empty()) throw InvalidInput("mesh has no triangles");
  return m;
}

/// Binary STL whose size matches its facet count wins; otherwise text
/// starting with "solid" is ASCII.
inline MeshFormat detect_stl_format(std::string_view bytes) {
  if (bytes.size() >= 84) {
    std::uint32_t count;
    std::memcpy(&count, bytes.data() + 80, 4);
    if (bytes.size() == 84 + std::size_t(count) * 50) return MeshFormat::stl_binary;
  }
  if (detail::trim(bytes.substr(0, 256)).starts_with("solid")) return MeshFormat::stl_ascii;
  return MeshFormat::stl_binary;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return std::move(ss).str();
}

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return ext;
}

inline TriMesh load_mesh(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  const std::string bytes = read_text_file(path);
  if (ext == ".obj") return parse_mesh(bytes, MeshFormat::obj);
  if (ext == ".stl") return parse_mesh(bytes, detect_stl_format(bytes));
  throw std::invalid_argument("unsupported mesh extension '" + ext + "' (expected .obj or .stl)");
}

/// Writes OBJ (9 significant digits), binary STL or ASCII STL.
inline void write_mesh(const TriMesh& mesh, std::ostream& os, MeshFormat format) {
  if (mesh.triangles.empty()) throw InvalidInput("refusing to write a mesh with no triangles");
  mesh.validate();
  char buf[128];
  auto normal = [&](const Triangle& t) -> Vec3 {
    Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    const double len = n.norm();
    return len > 0 ? Vec3(n / len) : Vec3::Zero();
  };
  switch (format) {
    case MeshFormat::obj:
      os << "# voxtopo mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles\n";
      for (const auto& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        os << buf;
      }
      for (const auto& t : mesh.triangles) {
        std::snprintf(buf, sizeof buf, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
        os << buf;
      }
      break;
    case MeshFormat::stl_binary: {
      char header[80] = {};
      std::snprintf(header, sizeof header, "voxtopo binary stl");
      os.write(header, 80);
      const std::uint32_t count = static_cast<std::uint32_t>(mesh.triangles.size());
      os.write(reinterpret_cast<const char*>(&count), 4);
      for (const auto& t : mesh.triangles) {
        float rec[12];
        const Vec3 n = normal(t);
        for (int k = 0; k < 3; ++k) rec[k] = float(n[k]);
        for (int c = 0; c < 3; ++c)
          for (int k = 0; k < 3; ++k) rec[3 + 3 * c + k] = float(mesh.vertices[t[c]][k]);
        os.write(reinterpret_cast<const char*>(rec), sizeof rec);
        const std::uint16_t attr = 0;
        os.write(reinterpret_cast<const char*>(&attr), 2);
      }
      break;
    }
    case MeshFormat::stl_ascii:
      os << "solid voxtopo\n";
      for (const auto& t : mesh.triangles) {
        const Vec3 n = normal(t);
        std::snprintf(buf, sizeof buf, "  facet normal %.9g %.9g %.9g\n    outer loop\n", n.x(), n.y(), n.z());
        os << buf;
        for (int c = 0; c < 3; ++c) {
          const Vec3& v = mesh.vertices[t[c]];
          std::snprintf(buf, sizeof buf, "      vertex %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
          os << buf;
        }
        os << "    endloop\n  endfacet\n";
      }
      os << "endsolid voxtopo\n";
      break;
  }
  if (!os) throw std::runtime_error("mesh write failed");
}

/// Format from the extension; ".stl" writes binary unless ascii_stl is set.
inline void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, bool ascii_stl = false) {
  const std::string ext = lower_extension(path);
  MeshFormat f;
  if (ext == ".obj")
    f = MeshFormat::obj;
  else if (ext == ".stl")
    f = ascii_stl ? MeshFormat::stl_ascii : MeshFormat::stl_binary;
  else
    throw std::invalid_argument("unsupported mesh extension '" + ext + "' (expected .obj or .stl)");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_mesh(mesh, os, f);
}

// ---------------------------------------------------------------------------
// Voxelization

namespace detail {

// Separating-axis test between a triangle and the axis-aligned cube
// [-h, h]^3 (vertices already relative to the cube center). Touching counts
// as overlap.
inline bool triangle_box_overlap(const Vec3& v0, const Vec3& v1, const Vec3& v2, double h) {
  for (int k = 0; k < 3; ++k) {
    if (std::min({v0[k], v1[k], v2[k]}) > h || std::max({v0[k], v1[k], v2[k]}) < -h) return false;
  }
  const Vec3 e[3] = {v1 - v0, v2 - v1, v0 - v2};
  const Vec3 n = e[0].cross(e[1]);
  if (std::abs(n.dot(v0)) > h * n.cwiseAbs().sum()) return false;
  for (const Vec3& edge : e)
    for (int k = 0; k < 3; ++k) {
      const Vec3 axis = Vec3::Unit(k).cross(edge);
      const double p0 = axis.dot(v0), p1 = axis.dot(v1), p2 = axis.dot(v2);
      const double r = h * axis.cwiseAbs().sum();
      if (std::min({p0, p1, p2}) > r || std::max({p0, p1, p2}) < -r) return false;
    }
  return true;
}

}  // namespace detail

/// Maps model coordinates to voxel coordinates (voxel centers at integers).
struct VoxelTransform {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();  // voxel = model * scale + offset

  Vec3 to_voxel(const Vec3& p) const { return p * scale + offset; }
  Vec3 to_model(const Vec3& v) const { return (v - offset) / scale; }
};

/// Uniform scale and shift that centers the mesh bounding box in a res^3 grid
/// with its longest side spanning voxel centers margin .. res-1-margin.
inline VoxelTransform fit_transform(const TriMesh& mesh, int resolution, int margin) {
  if (resolution < 8) throw std::invalid_argument("voxelization resolution must be >= 8");
  if (margin < 1) throw std::invalid_argument("voxelization margin must be >= 1 voxel");
  if (resolution - 2 * margin < 2) throw std::invalid_argument("margin leaves no room inside the grid");
  if (mesh.empty()) throw InvalidInput("mesh has no triangles");
  const auto [lo, hi] = mesh.bounds();
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0) || !std::isfinite(extent)) throw InvalidInput("mesh bounding box has zero extent");
  VoxelTransform t;
  t.scale = (resolution - 2 * margin - 1) / extent;
  t.offset = Vec3::Constant((resolution - 1) * 0.5) - 0.5 * (lo + hi) * t.scale;
  return t;
}

/// Conservative surface rasterization of `mesh` into an existing grid channel
/// (positions already in voxel units). Sets every voxel whose unit cube meets
/// a triangle.
inline void rasterize_triangles(VoxelGrid& grid, int channel, const std::vector<Vec3>& pos,
                                const std::vector<Triangle>& tris) {
  grid.check_channel(channel);
  const GridDims g = grid.dims();
  for (const auto& t : tris) {
    const Vec3 &a = pos[t[0]], &b = pos[t[1]], &c = pos[t[2]];
    const Vec3 lo = a.cwiseMin(b).cwiseMin(c), hi = a.cwiseMax(b).cwiseMax(c);
    const int x0 = std::max(0, int(std::ceil(lo.x() - 0.5))), x1 = std::min(g.w - 1, int(std::floor(hi.x() + 0.5)));
    const int y0 = std::max(0, int(std::ceil(lo.y() - 0.5))), y1 = std::min(g.h - 1, int(std::floor(hi.y() + 0.5)));
    const int z0 = std::max(0, int(std::ceil(lo.z() - 0.5))), z1 = std::min(g.d - 1, int(std::floor(hi.z() + 0.5)));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          float& v = grid.at(channel, z, y, x);
          if (v >= 1.0f) continue;
          const Vec3 ctr(x, y, z);
          if (detail::triangle_box_overlap(a - ctr, b - ctr, c - ctr, 0.5)) v = 1.0f;
        }
  }
}

struct VoxelizeResult {
  VoxelGrid grid;
  VoxelTransform transform;
  std::size_t surface_voxels = 0;
  FillStats fill;
};

/// Scales the mesh into a res^3 grid, rasterizes its surface conservatively
/// and fills the enclosed interior. voxel_size records model units per voxel.
inline VoxelizeResult voxelize_mesh_detailed(const TriMesh& mesh, int resolution, int margin) {
  mesh.validate();
  VoxelizeResult r{VoxelGrid({resolution, resolution, resolution}, 1), fit_transform(mesh, resolution, margin), 0, {}};
  std::vector<Vec3> pos(mesh.vertices.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = r.transform.to_voxel(mesh.vertices[i]);
  rasterize_triangles(r.grid, 0, pos, mesh.triangles);
  r.surface_voxels = r.grid.occupied(0);
  r.fill = fill_interior(r.grid, 0);
  r.grid.set_voxel_size(1.0 / r.transform.scale);
  return r;
}

inline VoxelGrid voxelize_mesh(const TriMesh& mesh, int resolution, int margin) {
  return voxelize_mesh_detailed(mesh, resolution, margin).grid;
}

// ---------------------------------------------------------------------------
// Sculpture export

/// Unit icosphere: 10*4^s + 2 vertices, 20*4^s triangles, outward winding.
inline TriMesh unit_icosphere(int subdivisions) {
  if (subdivisions < 0 || subdivisions > 6) throw std::invalid_argument("icosphere subdivision must lie in [0,6]");
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  m.vertices = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
                {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto [it, fresh] = mid.try_emplace({key.first, key.second}, static_cast<int>(m.vertices.size()));
      if (fresh) m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      return it->second;
    };
    std::vector<Triangle> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& t : m.triangles) {
      const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  return m;
}

struct MeshStyle {
  int node_subdivision = 2;
  int link_subdivision = 1;
  double link_radius = 1.0;
  double node_radius_scale = 1.0;
  bool draw_nodes = true;   // false for the doodle style
  bool capsules = false;    // cylinders + joint spheres instead of sphere chains
  int capsule_sides = 8;
};

/// Arc-length samples along a polyline, spacing <= step, both ends included.
inline std::vector<Vec3> sample_polyline(const std::vector<Vec3>& path, double step) {
  if (path.empty()) return {};
  double total = 0;
  for (std::size_t i = 1; i < path.size(); ++i) total += (path[i] - path[i - 1]).norm();
  const long n = std::max(1L, static_cast<long>(std::ceil(total / step)));
  std::vector<Vec3> out;
  out.reserve(n + 1);
  std::size_t seg = 1;
  double seg_start = 0;
  for (long i = 0; i <= n; ++i) {
    const double s = total * double(i) / double(n);
    while (seg + 1 < path.size() && seg_start + (path[seg] - path[seg - 1]).norm() < s) {
      seg_start += (path[seg] - path[seg - 1]).norm();
      ++seg;
    }
    if (path.size() == 1) {
      out.push_back(path[0]);
      continue;
    }
    const double len = (path[seg] - path[seg - 1]).norm();
    const double t = len > 0 ? std::clamp((s - seg_start) / len, 0.0, 1.0) : 0.0;
    out.push_back(path[seg - 1] + t * (path[seg] - path[seg - 1]));
  }
  return out;
}

namespace detail {

inline void add_sphere(TriMesh& out, const TriMesh& unit, const Vec3& c, double r) {
  const int base = static_cast<int>(out.vertices.size());
  for (const auto& v : unit.vertices) out.vertices.push_back(c + r * v);
  for (const auto& t : unit.triangles) out.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
}

// Open cylinder between a and b: 2*sides vertices, 2*sides triangles.
inline void add_cylinder(TriMesh& out, const Vec3& a, const Vec3& b, double r, int sides) {
  const Vec3 axis = (b - a).normalized();
  const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u = axis.cross(helper).normalized(), v = axis.cross(u);
  const int base = static_cast<int>(out.vertices.size());
  for (int i = 0; i < sides; ++i) {
    const double ang = 2 * std::numbers::pi * i / sides;
    const Vec3 off = r * (std::cos(ang) * u + std::sin(ang) * v);
    out.vertices.push_back(a + off);
    out.vertices.push_back(b + off);
  }
  for (int i = 0; i < sides; ++i) {
    const int j = (i + 1) % sides;
    const int a0 = base + 2 * i, b0 = a0 + 1, a1 = base + 2 * j, b1 = a1 + 1;
    out.triangles.push_back({a0, a1, b1});
    out.triangles.push_back({a0, b1, b0});
  }
}

}  // namespace detail

/// One icosphere per node (radius * node_radius_scale) and every link swept
/// as overlapping spheres at spacing <= link_radius, or as capsules.
inline TriMesh network_to_mesh(const SpatialGraph& graph, const MeshStyle& style = {}) {
  if (graph.empty()) throw std::invalid_argument("cannot export an empty graph");
  if (!(style.link_radius > 0)) throw std::invalid_argument("link radius must be positive");
  if (style.draw_nodes && !(style.node_radius_scale > 0)) throw std::invalid_argument("node radius scale must be positive");
  if (style.capsules && style.capsule_sides < 3) throw std::invalid_argument("capsules need at least 3 sides");
  TriMesh out;
  if (style.draw_nodes) {
    const TriMesh unit = unit_icosphere(style.node_subdivision);
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
      const double r = graph.nodes[i].radius * style.node_radius_scale;
      if (!(r > 0)) throw std::invalid_argument("node " + std::to_string(i) + " has nonpositive radius");
      detail::add_sphere(out, unit, graph.nodes[i].position, r);
    }
  }
  const TriMesh link_unit = unit_icosphere(style.link_subdivision);
  for (const auto& l : graph.links) {
    if (style.capsules) {
      for (std::size_t k = 0; k < l.path.size(); ++k) {
        detail::add_sphere(out, link_unit, l.path[k], style.link_radius);
        if (k > 0 && (l.path[k] - l.path[k - 1]).norm() > 0)
          detail::add_cylinder(out, l.path[k - 1], l.path[k], style.link_radius, style.capsule_sides);
      }
    } else {
      for (const Vec3& p : sample_polyline(l.path, style.link_radius))
        detail::add_sphere(out, link_unit, p, style.link_radius);
    }
  }
  return out;
}

}  // namespace voxtopo
