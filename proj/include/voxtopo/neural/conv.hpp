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

// 3D cross-correlation with exact analytic gradients.
//
// The convolution is lowered to im2col + GEMM over fixed-size column chunks.
// A convolution applied to a nearest-neighbour x2 upsampled input is lowered
// without materialising the upsampled tensor: each of the 8 output parity
// classes is an ordinary convolution over the low-resolution input whose taps
// are sums of the original kernel taps (2 or 3 per axis instead of 4).
//
// Work is split into tasks whose boundaries depend only on tensor shapes, and
// every output element is reduced inside a single task, so results do not
// depend on the number of worker threads.

#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "voxtopo/neural/tensor.hpp"
#include "voxtopo/parallel.hpp"

namespace voxtopo::nn {

/// Cubic kernel with asymmetric "same"-style padding.
struct ConvGeometry {
  int kernel = 4;
  int stride = 1;
  int pad_lo = 1;
  int pad_hi = 2;

  bool operator==(const ConvGeometry&) const = default;
};

/// Output length along one axis, or -1 when the padded input does not tile
/// evenly with this stride.
inline int conv_out_len(int in, const ConvGeometry& g) {
  const int span = in + g.pad_lo + g.pad_hi - g.kernel;
  if (in <= 0 || span < 0 || span % g.stride != 0) return -1;
  return span / g.stride + 1;
}

namespace detail {

inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

struct AxisPlan {
  int taps = 0;
  int stride = 1;
  int pad = 0;         // input index = o * stride - pad + tap
  int out_count = 0;
  int out_step = 1;    // destination index = o * out_step + out_offset
  int out_offset = 0;
  std::vector<int> tap_of_k;  // original kernel index -> effective tap
};

struct SubConv {
  AxisPlan z, y, x;

  int taps() const { return z.taps * y.taps * x.taps; }
  std::size_t outputs() const { return std::size_t(z.out_count) * y.out_count * x.out_count; }
  bool identity_layout() const { return z.out_step == 1 && y.out_step == 1 && x.out_step == 1; }
};

inline std::vector<AxisPlan> axis_plans(int in, const ConvGeometry& g, bool upsample, int& out_len,
                                        const char* axis) {
  const int virt = upsample ? 2 * in : in;
  out_len = conv_out_len(virt, g);
  if (out_len <= 0)
    throw std::invalid_argument(std::string("conv3d: spatial dim ") + axis + "=" + std::to_string(virt) +
                                " is not compatible with kernel " + std::to_string(g.kernel) + ", stride " +
                                std::to_string(g.stride) + ", padding " + std::to_string(g.pad_lo) + "/" +
                                std::to_string(g.pad_hi));
  if (!upsample) {
    AxisPlan p{g.kernel, g.stride, g.pad_lo, out_len, 1, 0, std::vector<int>(g.kernel)};
    std::iota(p.tap_of_k.begin(), p.tap_of_k.end(), 0);
    return {p};
  }
  if (g.stride != 1) throw std::invalid_argument("conv3d: fused upsampling requires stride 1");
  std::vector<AxisPlan> plans;
  for (int parity = 0; parity < 2; ++parity) {
    const int count = (out_len - parity + 1) / 2;
    if (count <= 0) continue;
    // Output o = 2m + parity reads virtual index o - pad_lo + k, i.e. source
    // voxel m + floor((parity - pad_lo + k) / 2).
    const int tmin = floor_div(parity - g.pad_lo, 2);
    const int tmax = floor_div(parity - g.pad_lo + g.kernel - 1, 2);
    AxisPlan p{tmax - tmin + 1, 1, -tmin, count, 2, parity, std::vector<int>(g.kernel)};
    for (int k = 0; k < g.kernel; ++k) p.tap_of_k[k] = floor_div(parity - g.pad_lo + k, 2) - tmin;
    plans.push_back(std::move(p));
  }
  return plans;
}

struct ConvPlan {
  int in_d = 0, in_h = 0, in_w = 0;
  int out_d = 0, out_h = 0, out_w = 0;
  std::vector<SubConv> subs;
};

inline ConvPlan make_plan(int d, int h, int w, const ConvGeometry& g, bool upsample) {
  ConvPlan plan{d, h, w};
  auto pz = axis_plans(d, g, upsample, plan.out_d, "D");
  auto py = axis_plans(h, g, upsample, plan.out_h, "H");
  auto px = axis_plans(w, g, upsample, plan.out_w, "W");
  for (auto& a : pz)
    for (auto& b : py)
      for (auto& c : px) plan.subs.push_back({a, b, c});
  return plan;
}

/// Columns per GEMM chunk for a given row count. Depends on shapes only.
inline std::size_t chunk_columns(std::size_t rows) {
  const std::size_t target = std::size_t{1} << 20;
  return std::clamp<std::size_t>(target / std::max<std::size_t>(rows, 1), 64, 16384);
}

/// Valid j range [lo, hi) such that (o0 + j) * stride + off lies in [0, len).
inline void valid_run(int o0, int run, int stride, int off, int len, int& lo, int& hi) {
  // (o0 + j) * stride + off >= 0  <=>  j >= ceil(-off / stride) - o0
  int a = -off;
  int first = (a <= 0) ? -floor_div(-a, stride) : (a + stride - 1) / stride;
  int last = floor_div(len - 1 - off, stride);  // largest o with index < len
  lo = std::clamp(first - o0, 0, run);
  hi = std::clamp(last - o0 + 1, lo, run);
}

/// Writes rows for channels [ci0, ci1) (every tap) and output columns
/// [p0, p1) of sub-convolution `sc` into `cols` (row-major, p1 - p0 columns).
template <typename T>
void im2col(const T* xn, const ConvPlan& plan, const SubConv& sc, int ci0, int ci1, std::size_t p0, std::size_t p1,
            T* cols) {
  const std::size_t P = p1 - p0;
  const int D = plan.in_d, H = plan.in_h, W = plan.in_w;
  const int OY = sc.y.out_count, OX = sc.x.out_count;
  T* dst = cols;
  for (int ci = ci0; ci < ci1; ++ci) {
    const T* xc = xn + std::size_t(ci) * D * H * W;
    for (int tz = 0; tz < sc.z.taps; ++tz)
      for (int ty = 0; ty < sc.y.taps; ++ty)
        for (int tx = 0; tx < sc.x.taps; ++tx) {
          std::size_t p = p0;
          int ox = static_cast<int>(p % OX);
          int oy = static_cast<int>((p / OX) % OY);
          int oz = static_cast<int>(p / (std::size_t(OX) * OY));
          T* out = dst;
          while (p < p1) {
            const int run = static_cast<int>(std::min<std::size_t>(OX - ox, p1 - p));
            const int iz = oz * sc.z.stride - sc.z.pad + tz;
            const int iy = oy * sc.y.stride - sc.y.pad + ty;
            if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
              std::fill_n(out, run, T(0));
            } else {
              const T* src = xc + (std::size_t(iz) * H + iy) * W;
              const int off = tx - sc.x.pad;
              int lo, hi;
              valid_run(ox, run, sc.x.stride, off, W, lo, hi);
              std::fill_n(out, lo, T(0));
              if (sc.x.stride == 1) {
                std::copy_n(src + ox + off + lo, hi - lo, out + lo);
              } else {
                for (int j = lo; j < hi; ++j) out[j] = src[(ox + j) * sc.x.stride + off];
              }
              std::fill(out + hi, out + run, T(0));
            }
            out += run;
            p += run;
            ox = 0;
            if (++oy == OY) {
              oy = 0;
              ++oz;
            }
          }
          dst += P;
        }
  }
}

/// Adjoint of im2col for one input channel: scatter-adds `cols` (taps rows x
/// P columns) into the channel volume xc.
template <typename T>
void col2im(const T* cols, const ConvPlan& plan, const SubConv& sc, std::size_t p0, std::size_t p1, T* xc) {
  const std::size_t P = p1 - p0;
  const int D = plan.in_d, H = plan.in_h, W = plan.in_w;
  const int OY = sc.y.out_count, OX = sc.x.out_count;
  const T* src_row = cols;
  for (int tz = 0; tz < sc.z.taps; ++tz)
    for (int ty = 0; ty < sc.y.taps; ++ty)
      for (int tx = 0; tx < sc.x.taps; ++tx) {
        std::size_t p = p0;
        int ox = static_cast<int>(p % OX);
        int oy = static_cast<int>((p / OX) % OY);
        int oz = static_cast<int>(p / (std::size_t(OX) * OY));
        const T* in = src_row;
        while (p < p1) {
          const int run = static_cast<int>(std::min<std::size_t>(OX - ox, p1 - p));
          const int iz = oz * sc.z.stride - sc.z.pad + tz;
          const int iy = oy * sc.y.stride - sc.y.pad + ty;
          if (iz >= 0 && iz < D && iy >= 0 && iy < H) {
            T* dst = xc + (std::size_t(iz) * H + iy) * W;
            const int off = tx - sc.x.pad;
            int lo, hi;
            valid_run(ox, run, sc.x.stride, off, W, lo, hi);
            for (int j = lo; j < hi; ++j) dst[(ox + j) * sc.x.stride + off] += in[j];
          }
          in += run;
          p += run;
          ox = 0;
          if (++oy == OY) {
            oy = 0;
            ++oz;
          }
        }
        src_row += P;
      }
}

/// Effective (Cout x Cin*taps) weights of a sub-convolution.
template <typename T>
std::vector<T> effective_weights(std::span<const T> w, int cout, int cin, int k, const SubConv& sc) {
  const int taps = sc.taps();
  std::vector<T> eff(std::size_t(cout) * cin * taps, T(0));
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci) {
      const T* src = w.data() + (std::size_t(co) * cin + ci) * k * k * k;
      T* dst = eff.data() + (std::size_t(co) * cin + ci) * taps;
      for (int kz = 0; kz < k; ++kz)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            dst[(sc.z.tap_of_k[kz] * sc.y.taps + sc.y.tap_of_k[ky]) * sc.x.taps + sc.x.tap_of_k[kx]] +=
                src[(kz * k + ky) * k + kx];
    }
  return eff;
}

/// Destination linear offset (within one output volume) of sub-conv column p.
inline std::size_t dest_offset(const ConvPlan& plan, const SubConv& sc, std::size_t p) {
  const int ox = static_cast<int>(p % sc.x.out_count);
  const int oy = static_cast<int>((p / sc.x.out_count) % sc.y.out_count);
  const int oz = static_cast<int>(p / (std::size_t(sc.x.out_count) * sc.y.out_count));
  const std::size_t z = std::size_t(oz) * sc.z.out_step + sc.z.out_offset;
  const std::size_t y = std::size_t(oy) * sc.y.out_step + sc.y.out_offset;
  const std::size_t x = std::size_t(ox) * sc.x.out_step + sc.x.out_offset;
  return (z * plan.out_h + y) * plan.out_w + x;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

/// Output shape of conv3d for the given input.
inline Shape5 conv3d_output_shape(const Shape5& in, int out_ch, const ConvGeometry& g, bool upsample_input = false) {
  auto plan = detail::make_plan(in.d, in.h, in.w, g, upsample_input);
  return {in.n, out_ch, plan.out_d, plan.out_h, plan.out_w};
}

/// y = conv(x) + bias. weight is (out_ch, in_ch, k, k, k). With
/// upsample_input, x is first (virtually) upsampled x2 by nearest neighbour.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out_ch,
                         const ConvGeometry& g, bool upsample_input = false) {
  const int cin = x.c();
  const int k = g.kernel;
  const std::size_t k3 = std::size_t(k) * k * k;
  if (weight.size() != std::size_t(out_ch) * cin * k3)
    throw std::invalid_argument("conv3d: weight holds " + std::to_string(weight.size()) + " values, expected out_ch(" +
                                std::to_string(out_ch) + ") * in_ch(" + std::to_string(cin) + ") * k^3");
  if (!bias.empty() && bias.size() != std::size_t(out_ch)) throw std::invalid_argument("conv3d: bias size mismatch");
  const auto plan = detail::make_plan(x.d(), x.h(), x.w(), g, upsample_input);
  Tensor<T> y({x.n(), out_ch, plan.out_d, plan.out_h, plan.out_w});
  const std::size_t out_vol = y.shape().spatial();

  struct Task {
    int sub, n;
    std::size_t p0, p1;
  };
  std::vector<std::vector<T>> eff(plan.subs.size());
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < plan.subs.size(); ++s) {
    const auto& sc = plan.subs[s];
    eff[s] = detail::effective_weights(weight, out_ch, cin, k, sc);
    const std::size_t rows = std::size_t(cin) * sc.taps();
    const std::size_t chunk = detail::chunk_columns(rows);
    for (int n = 0; n < x.n(); ++n)
      for (std::size_t p = 0; p < sc.outputs(); p += chunk)
        tasks.push_back({int(s), n, p, std::min(sc.outputs(), p + chunk)});
  }

  parallel_for(tasks.size(), [&](std::size_t t) {
    const Task& task = tasks[t];
    const auto& sc = plan.subs[task.sub];
    const std::size_t rows = std::size_t(cin) * sc.taps();
    const std::size_t P = task.p1 - task.p0;
    std::vector<T> cols(rows * P);
    detail::im2col(x.volume(task.n, 0), plan, sc, 0, cin, task.p0, task.p1, cols.data());
    Eigen::Map<const detail::RowMat<T>> W(eff[task.sub].data(), out_ch, rows);
    Eigen::Map<const detail::RowMat<T>> C(cols.data(), rows, P);
    if (sc.identity_layout()) {
      Eigen::Map<detail::RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>> Y(
          y.volume(task.n, 0) + task.p0, out_ch, P, Eigen::OuterStride<>(out_vol));
      Y.noalias() = W * C;
      if (!bias.empty())
        for (int co = 0; co < out_ch; ++co) Y.row(co).array() += bias[co];
    } else {
      detail::RowMat<T> Y(out_ch, P);
      Y.noalias() = W * C;
      std::vector<std::size_t> dest(P);
      for (std::size_t j = 0; j < P; ++j) dest[j] = detail::dest_offset(plan, sc, task.p0 + j);
      for (int co = 0; co < out_ch; ++co) {
        T* out = y.volume(task.n, co);
        const T b = bias.empty() ? T(0) : bias[co];
        for (std::size_t j = 0; j < P; ++j) out[dest[j]] = Y(co, j) + b;
      }
    }
  });
  return y;
}

/// Gradients of conv3d_forward. dweight and dbias are accumulated into (pass
/// empty spans to skip); dx, when non-null, is overwritten.
template <typename T>
void conv3d_backward(const Tensor<T>& x, std::span<const T> weight, int out_ch, const ConvGeometry& g,
                     bool upsample_input, const Tensor<T>& dy, Tensor<T>* dx, std::span<T> dweight,
                     std::span<T> dbias) {
  const int cin = x.c();
  const int k = g.kernel;
  const std::size_t k3 = std::size_t(k) * k * k;
  const auto plan = detail::make_plan(x.d(), x.h(), x.w(), g, upsample_input);
  const Shape5 ys{x.n(), out_ch, plan.out_d, plan.out_h, plan.out_w};
  if (!(dy.shape() == ys)) throw std::invalid_argument("conv3d backward: gradient shape " + to_string(dy.shape()) +
                                                       " does not match output " + to_string(ys));
  const std::size_t out_vol = ys.spatial();

  if (!dbias.empty()) {
    parallel_for(std::size_t(out_ch), [&](std::size_t co) {
      double acc = 0;
      for (int n = 0; n < ys.n; ++n) {
        const T* g0 = dy.volume(n, int(co));
        for (std::size_t i = 0; i < out_vol; ++i) acc += g0[i];
      }
      dbias[co] += static_cast<T>(acc);
    });
  }
  if (dx) *dx = Tensor<T>(x.shape());
  if (!dx && dweight.empty()) return;

  std::vector<std::vector<T>> eff(plan.subs.size());
  for (std::size_t s = 0; s < plan.subs.size(); ++s) eff[s] = detail::effective_weights(weight, out_ch, cin, k, plan.subs[s]);

  // One task per input channel: it owns dx[:, ci] and dweight[:, ci].
  parallel_for(std::size_t(cin), [&](std::size_t ci_) {
    const int ci = static_cast<int>(ci_);
    for (std::size_t s = 0; s < plan.subs.size(); ++s) {
      const auto& sc = plan.subs[s];
      const int taps = sc.taps();
      const std::size_t rows_total = std::size_t(cin) * taps;
      Eigen::Map<const detail::RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>> Wci(
          eff[s].data() + std::size_t(ci) * taps, out_ch, taps, Eigen::OuterStride<>(rows_total));
      detail::RowMat<T> dWci = detail::RowMat<T>::Zero(out_ch, taps);
      const std::size_t chunk = detail::chunk_columns(std::size_t(taps) * 8);
      std::vector<T> cols, dcols;
      detail::RowMat<T> dYbuf;
      std::vector<std::size_t> dest;
      for (int n = 0; n < x.n(); ++n)
        for (std::size_t p0 = 0; p0 < sc.outputs(); p0 += chunk) {
          const std::size_t p1 = std::min(sc.outputs(), p0 + chunk);
          const std::size_t P = p1 - p0;
          const T* dy_ptr;
          std::size_t dy_stride;
          if (sc.identity_layout()) {
            dy_ptr = dy.volume(n, 0) + p0;
            dy_stride = out_vol;
          } else {
            dYbuf.resize(out_ch, P);
            dest.resize(P);
            for (std::size_t j = 0; j < P; ++j) dest[j] = detail::dest_offset(plan, sc, p0 + j);
            for (int co = 0; co < out_ch; ++co) {
              const T* src = dy.volume(n, co);
              for (std::size_t j = 0; j < P; ++j) dYbuf(co, j) = src[dest[j]];
            }
            dy_ptr = dYbuf.data();
            dy_stride = P;
          }
          Eigen::Map<const detail::RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>> dY(dy_ptr, out_ch, P,
                                                                                        Eigen::OuterStride<>(dy_stride));
          if (!dweight.empty()) {
            cols.resize(std::size_t(taps) * P);
            detail::im2col(x.volume(n, 0), plan, sc, ci, ci + 1, p0, p1, cols.data());
            Eigen::Map<const detail::RowMat<T>> C(cols.data(), taps, P);
            dWci.noalias() += dY * C.transpose();
          }
          if (dx) {
            dcols.resize(std::size_t(taps) * P);
            Eigen::Map<detail::RowMat<T>> dC(dcols.data(), taps, P);
            dC.noalias() = Wci.transpose() * dY;
            detail::col2im(dcols.data(), plan, sc, p0, p1, dx->volume(n, ci));
          }
        }
      if (!dweight.empty()) {
        for (int co = 0; co < out_ch; ++co) {
          T* dst = dweight.data() + (std::size_t(co) * cin + ci) * k3;
          for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx)
                dst[(kz * k + ky) * k + kx] +=
                    dWci(co, (sc.z.tap_of_k[kz] * sc.y.taps + sc.y.tap_of_k[ky]) * sc.x.taps + sc.x.tap_of_k[kx]);
        }
      }
    }
  });
}

}  // namespace voxtopo::nn
