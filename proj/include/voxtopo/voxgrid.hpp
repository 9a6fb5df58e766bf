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

// Dense multi-channel voxel grids and the operations that write into them.
//
// Coordinate convention: the voxel with indices (z, y, x) has its center at the
// continuous point (x, y, z) and covers [x-0.5, x+0.5] x [y-0.5, y+0.5] x
// [z-0.5, z+0.5]. All positions handed to rasterizers are in these voxel units.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxtopo/common.hpp"
#include "voxtopo/error.hpp"
#include "voxtopo/parallel.hpp"

namespace voxtopo {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

struct GridDims {
  int d = 0;  // z
  int h = 0;  // y
  int w = 0;  // x

  std::size_t count() const { return std::size_t(d) * std::size_t(h) * std::size_t(w); }
  bool operator==(const GridDims&) const = default;
};

inline std::string to_string(const GridDims& g) {
  return "(" + std::to_string(g.d) + "," + std::to_string(g.h) + "," + std::to_string(g.w) + ")";
}

class VoxelGrid {
 public:
  /// Hard ceiling on C*d*h*w; anything larger is treated as a caller error.
  static constexpr std::size_t kMaxValues = std::size_t{1} << 32;

  VoxelGrid() = default;

  VoxelGrid(GridDims dims, int channels, float fill = 0.0f, double voxel_size = 1.0)
      : dims_(dims), channels_(channels), voxel_size_(voxel_size) {
    if (dims.d <= 0 || dims.h <= 0 || dims.w <= 0)
      throw std::invalid_argument("grid dims must be positive, got " + to_string(dims));
    if (channels < 1) throw std::invalid_argument("grid needs at least one channel");
    if (!(fill >= 0.0f && fill <= 1.0f)) throw std::invalid_argument("fill value must lie in [0,1]");
    if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel_size must be positive");
    const std::size_t per_channel = dims.count();
    if (per_channel / std::size_t(dims.d) / std::size_t(dims.h) != std::size_t(dims.w) ||
        per_channel > kMaxValues / std::size_t(channels))
      throw std::invalid_argument("grid of " + to_string(dims) + " x " + std::to_string(channels) +
                                  " channels exceeds the supported size");
    data_.assign(per_channel * std::size_t(channels), fill);
  }

  const GridDims& dims() const { return dims_; }
  int channels() const { return channels_; }
  double voxel_size() const { return voxel_size_; }
  void set_voxel_size(double v) {
    if (!(v > 0.0)) throw std::invalid_argument("voxel_size must be positive");
    voxel_size_ = v;
  }

  std::size_t voxels_per_channel() const { return dims_.count(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int c, int z, int y, int x) const {
    return ((std::size_t(c) * dims_.d + std::size_t(z)) * dims_.h + std::size_t(y)) * dims_.w + std::size_t(x);
  }
  bool in_bounds(int z, int y, int x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < dims_.d && y < dims_.h && x < dims_.w;
  }

  float& at(int c, int z, int y, int x) { return data_[index(c, z, y, x)]; }
  float at(int c, int z, int y, int x) const { return data_[index(c, z, y, x)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::span<float> channel(int c) { return std::span<float>(data_).subspan(std::size_t(c) * voxels_per_channel(), voxels_per_channel()); }
  std::span<const float> channel(int c) const {
    return std::span<const float>(data_).subspan(std::size_t(c) * voxels_per_channel(), voxels_per_channel());
  }

  void check_channel(int c) const {
    if (c < 0 || c >= channels_)
      throw std::invalid_argument("channel " + std::to_string(c) + " out of range for a " + std::to_string(channels_) +
                                  "-channel grid");
  }

  /// Number of voxels in channel c with value >= 0.5.
  std::size_t occupied(int c) const {
    auto ch = channel(c);
    return static_cast<std::size_t>(std::count_if(ch.begin(), ch.end(), [](float v) { return v >= 0.5f; }));
  }

  Vec3 center() const { return Vec3((dims_.w - 1) * 0.5, (dims_.h - 1) * 0.5, (dims_.d - 1) * 0.5); }

  bool operator==(const VoxelGrid& o) const {
    return dims_ == o.dims_ && channels_ == o.channels_ && voxel_size_ == o.voxel_size_ &&
           data_.size() == o.data_.size() &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
  }

 private:
  GridDims dims_{};
  int channels_ = 0;
  double voxel_size_ = 1.0;
  std::vector<float> data_;
};

/// Continuous points with positive weights, e.g. the above-threshold voxels of
/// a channel. Positions are in voxel units.
struct WeightedPointSet {
  std::vector<Vec3> points;
  std::vector<double> weights;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

inline VoxelGrid new_grid(GridDims dims, int channels, float fill_value) { return VoxelGrid(dims, channels, fill_value); }

namespace detail {
inline void check_value(float value) {
  if (!(value >= 0.0f && value <= 1.0f)) throw std::invalid_argument("rasterized value must lie in [0,1]");
}
}  // namespace detail

/// Sets channel to max(old, value) on every voxel whose center lies within
/// radius of center. Spheres entirely outside the grid are a no-op.
inline void rasterize_sphere(VoxelGrid& grid, const Vec3& center, double radius, int channel, float value) {
  grid.check_channel(channel);
  if (!(radius > 0.0)) throw std::invalid_argument("sphere radius must be positive");
  detail::check_value(value);
  const GridDims& g = grid.dims();
  const int x0 = std::max(0, static_cast<int>(std::ceil(center.x() - radius)));
  const int x1 = std::min(g.w - 1, static_cast<int>(std::floor(center.x() + radius)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(center.y() - radius)));
  const int y1 = std::min(g.h - 1, static_cast<int>(std::floor(center.y() + radius)));
  const int z0 = std::max(0, static_cast<int>(std::ceil(center.z() - radius)));
  const int z1 = std::min(g.d - 1, static_cast<int>(std::floor(center.z() + radius)));
  const double r2 = radius * radius;
  for (int z = z0; z <= z1; ++z) {
    const double dz = z - center.z();
    for (int y = y0; y <= y1; ++y) {
      const double dy = y - center.y();
      const double rem = r2 - dz * dz - dy * dy;
      if (rem < 0) continue;
      float* row = &grid.at(channel, z, y, 0);
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - center.x();
        if (dx * dx <= rem) row[x] = std::max(row[x], value);
      }
    }
  }
}

/// Overlapping spheres of radius `thickness` along p0->p1, spaced at most
/// thickness/2 apart (both endpoints included).
inline void rasterize_segment(VoxelGrid& grid, const Vec3& p0, const Vec3& p1, double thickness, int channel,
                              float value) {
  grid.check_channel(channel);
  if (!(thickness > 0.0)) throw std::invalid_argument("segment thickness must be positive");
  detail::check_value(value);
  const double len = (p1 - p0).norm();
  const int steps = static_cast<int>(std::ceil(len / (0.5 * thickness)));
  if (steps == 0) {
    rasterize_sphere(grid, p0, thickness, channel, value);
    return;
  }
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    rasterize_sphere(grid, p0 + t * (p1 - p0), thickness, channel, value);
  }
}

struct FillStats {
  std::size_t exterior = 0;  // voxels reached from the boundary
  std::size_t gained = 0;    // voxels that were empty and are now solid
};

/// Marks the exterior by a 6-connected flood fill from every empty boundary
/// voxel, then sets every non-exterior voxel of `channel` to 1. A leaky
/// (non-watertight) surface shows up as gained == 0.
inline FillStats fill_interior(VoxelGrid& grid, int channel) {
  grid.check_channel(channel);
  const GridDims g = grid.dims();
  auto ch = grid.channel(channel);
  const std::size_t n = g.count();
  std::vector<std::uint8_t> exterior(n, 0);
  std::vector<std::size_t> stack;
  auto lin = [&](int z, int y, int x) { return (std::size_t(z) * g.h + std::size_t(y)) * g.w + std::size_t(x); };
  auto seed = [&](int z, int y, int x) {
    const std::size_t i = lin(z, y, x);
    if (!exterior[i] && ch[i] < 0.5f) {
      exterior[i] = 1;
      stack.push_back(i);
    }
  };
  for (int z = 0; z < g.d; ++z)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x)
        if (z == 0 || y == 0 || x == 0 || z == g.d - 1 || y == g.h - 1 || x == g.w - 1) seed(z, y, x);
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const int x = static_cast<int>(i % g.w);
    const int y = static_cast<int>((i / g.w) % g.h);
    const int z = static_cast<int>(i / (std::size_t(g.w) * g.h));
    if (x > 0) seed(z, y, x - 1);
    if (x + 1 < g.w) seed(z, y, x + 1);
    if (y > 0) seed(z, y - 1, x);
    if (y + 1 < g.h) seed(z, y + 1, x);
    if (z > 0) seed(z - 1, y, x);
    if (z + 1 < g.d) seed(z + 1, y, x);
  }
  FillStats stats;
  for (std::size_t i = 0; i < n; ++i) {
    if (exterior[i]) {
      ++stats.exterior;
      continue;
    }
    if (ch[i] < 0.5f) ++stats.gained;
    ch[i] = 1.0f;
  }
  return stats;
}

namespace detail {
// cos/sin with exact values at multiples of 90 degrees so right-angle
// rotations are exact index permutations.
inline std::pair<double, double> cos_sin_deg(double deg) {
  const double q = deg / 90.0;
  if (q == std::round(q)) {
    const long k = ((static_cast<long>(std::round(q)) % 4) + 4) % 4;
    static constexpr double c[] = {1, 0, -1, 0};
    static constexpr double s[] = {0, 1, 0, -1};
    return {c[k], s[k]};
  }
  const double r = deg * std::numbers::pi / 180.0;
  return {std::cos(r), std::sin(r)};
}
}  // namespace detail

/// Rotation matrix Rz(az) * Ry(ay) * Rx(ax), angles in degrees.
inline Eigen::Matrix3d rotation_matrix(const Vec3& angles_deg) {
  auto [cx, sx] = detail::cos_sin_deg(angles_deg.x());
  auto [cy, sy] = detail::cos_sin_deg(angles_deg.y());
  auto [cz, sz] = detail::cos_sin_deg(angles_deg.z());
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  return rz * ry * rx;
}

/// Rotates every channel about the grid center by inverse-mapping each output
/// voxel center and taking the nearest source voxel (0 when it falls outside).
inline VoxelGrid rotate_grid(const VoxelGrid& grid, const Vec3& angles_deg) {
  const GridDims g = grid.dims();
  VoxelGrid out(g, grid.channels(), 0.0f, grid.voxel_size());
  const Eigen::Matrix3d inv = rotation_matrix(angles_deg).transpose();
  const Vec3 c = grid.center();
  parallel_for(std::size_t(g.d), [&](std::size_t zi) {
    const int z = static_cast<int>(zi);
    for (int y = 0; y < g.h; ++y) {
      const Vec3 base = inv * (Vec3(0, y, z) - c) + c;
      const Vec3 step = inv.col(0);
      for (int x = 0; x < g.w; ++x) {
        const Vec3 s = base + x * step;
        const long sx = std::lround(s.x()), sy = std::lround(s.y()), sz = std::lround(s.z());
        if (sx < 0 || sy < 0 || sz < 0 || sx >= g.w || sy >= g.h || sz >= g.d) continue;
        for (int ch = 0; ch < grid.channels(); ++ch)
          out.at(ch, z, y, x) = grid.at(ch, static_cast<int>(sz), static_cast<int>(sy), static_cast<int>(sx));
      }
    }
  });
  return out;
}

/// One point per voxel with value > tau, at the voxel center, weighted by value.
inline WeightedPointSet threshold_points(const VoxelGrid& grid, int channel, double tau) {
  grid.check_channel(channel);
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("threshold tau must lie in [0,1)");
  WeightedPointSet out;
  const GridDims g = grid.dims();
  for (int z = 0; z < g.d; ++z)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x) {
        const float v = grid.at(channel, z, y, x);
        if (v > tau) {
          out.points.emplace_back(x, y, z);
          out.weights.push_back(v);
        }
      }
  return out;
}

// ---------------------------------------------------------------------------
// .vgrid serialization
//
//   "VXGD" | u32 version | u32 header_len | JSON header | f32 payload
//
// Payload is channel-major, then z, y, x with x fastest.

inline constexpr std::uint32_t kVgridVersion = 1;

namespace detail {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<std::size_t>(is.gcount()) == sizeof(T);
}
}  // namespace detail

inline void write_vgrid(const VoxelGrid& grid, std::ostream& os) {
  nlohmann::json header = {{"dims", {grid.dims().d, grid.dims().h, grid.dims().w}},
                           {"channels", grid.channels()},
                           {"dtype", "f32"},
                           {"voxel_size", grid.voxel_size()}};
  const std::string text = header.dump();
  os.write("VXGD", 4);
  detail::write_pod(os, kVgridVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(reinterpret_cast<const char*>(grid.data().data()), static_cast<std::streamsize>(grid.size() * sizeof(float)));
  if (!os) throw std::runtime_error("failed to write vgrid stream");
}

inline std::string vgrid_bytes(const VoxelGrid& grid) {
  std::ostringstream os(std::ios::binary);
  write_vgrid(grid, os);
  return std::move(os).str();
}

struct VgridHeader {
  std::uint32_t version = 0;
  GridDims dims;
  int channels = 0;
  double voxel_size = 1.0;
};

inline VgridHeader read_vgrid_header(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "VXGD", 4) != 0) throw FormatError("vgrid: bad magic (expected \"VXGD\")");
  VgridHeader h;
  if (!detail::read_pod(is, h.version)) throw FormatError("vgrid: truncated version field");
  if (h.version != kVgridVersion)
    throw FormatError("vgrid: unsupported version " + std::to_string(h.version) + " (expected " +
                      std::to_string(kVgridVersion) + ")");
  std::uint32_t header_len = 0;
  if (!detail::read_pod(is, header_len)) throw FormatError("vgrid: truncated header_length field");
  if (header_len == 0 || header_len > (1u << 20)) throw FormatError("vgrid: implausible header_length " + std::to_string(header_len));
  std::string text(header_len, '\0');
  is.read(text.data(), header_len);
  if (static_cast<std::uint32_t>(is.gcount()) != header_len) throw FormatError("vgrid: truncated JSON header");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("vgrid: header is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("dtype").get<std::string>() != "f32") throw FormatError("vgrid: dtype must be \"f32\"");
    const auto& dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) throw FormatError("vgrid: dims must be a 3-element array");
    h.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
    h.channels = j.at("channels").get<int>();
    h.voxel_size = j.at("voxel_size").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("vgrid: missing or mistyped header field: ") + e.what());
  }
  if (h.dims.d <= 0 || h.dims.h <= 0 || h.dims.w <= 0) throw FormatError("vgrid: dims must be positive");
  if (h.channels < 1) throw FormatError("vgrid: channels must be >= 1");
  if (!(h.voxel_size > 0)) throw FormatError("vgrid: voxel_size must be positive");
  return h;
}

inline VoxelGrid read_vgrid(std::istream& is) {
  const VgridHeader h = read_vgrid_header(is);
  VoxelGrid grid;
  try {
    grid = VoxelGrid(h.dims, h.channels, 0.0f, h.voxel_size);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("vgrid: header describes an unsupported grid: ") + e.what());
  }
  const std::size_t want = grid.size() * sizeof(float);
  is.read(reinterpret_cast<char*>(grid.data().data()), static_cast<std::streamsize>(want));
  const std::size_t got = static_cast<std::size_t>(is.gcount());
  if (got != want)
    throw FormatError("vgrid: payload length mismatch: header (dims=" + to_string(h.dims) +
                      ", channels=" + std::to_string(h.channels) + ") requires " + std::to_string(want) +
                      " bytes, stream holds " + std::to_string(got));
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("vgrid: payload longer than header (dims=" + to_string(h.dims) +
                      ", channels=" + std::to_string(h.channels) + ") allows");
  auto data = grid.data();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!(data[i] >= 0.0f && data[i] <= 1.0f))
      throw FormatError("vgrid: payload value at index " + std::to_string(i) + " outside [0,1]");
  return grid;
}

inline void save_vgrid(const VoxelGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_vgrid(grid, os);
}

inline VoxelGrid load_vgrid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_vgrid(is);
}

}  // namespace voxtopo
