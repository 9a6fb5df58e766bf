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
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxtopo::nn {

/// N x C x D x H x W.
struct Shape5 {
  int n = 0, c = 0, d = 0, h = 0, w = 0;

  std::size_t spatial() const { return std::size_t(d) * std::size_t(h) * std::size_t(w); }
  std::size_t count() const { return std::size_t(n) * std::size_t(c) * spatial(); }
  bool operator==(const Shape5&) const = default;
};

inline std::string to_string(const Shape5& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.d) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

/// Dense 5-D tensor, row-major in (n, c, z, y, x).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape5 shape, T fill = T(0)) : shape_(shape), data_(shape.count(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.d < 0 || shape.h < 0 || shape.w < 0)
      throw std::invalid_argument("negative tensor extent");
  }

  const Shape5& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int d() const { return shape_.d; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::size_t offset(int n, int c, int z = 0, int y = 0, int x = 0) const {
    return (((std::size_t(n) * shape_.c + std::size_t(c)) * shape_.d + std::size_t(z)) * shape_.h + std::size_t(y)) *
               shape_.w +
           std::size_t(x);
  }
  T& operator()(int n, int c, int z, int y, int x) { return data_[offset(n, c, z, y, x)]; }
  T operator()(int n, int c, int z, int y, int x) const { return data_[offset(n, c, z, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the (n, c) volume.
  T* volume(int n, int c) { return data_.data() + offset(n, c); }
  const T* volume(int n, int c) const { return data_.data() + offset(n, c); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void release() {
    data_.clear();
    data_.shrink_to_fit();
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape5 shape_{};
  std::vector<T> data_;
};

/// Concatenates along channels; both inputs must agree on n, d, h, w.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape5 sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.d != sb.d || sa.h != sb.h || sa.w != sb.w)
    throw std::invalid_argument("concat shape mismatch: " + to_string(sa) + " vs " + to_string(sb));
  Tensor<T> out({sa.n, sa.c + sb.c, sa.d, sa.h, sa.w});
  const std::size_t vol = sa.spatial();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.volume(n, 0), vol * sa.c, out.volume(n, 0));
    std::copy_n(b.volume(n, 0), vol * sb.c, out.volume(n, sa.c));
  }
  return out;
}

/// Channel range [c0, c0 + count) of t.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int c0, int count) {
  const Shape5 s = t.shape();
  if (c0 < 0 || count < 0 || c0 + count > s.c) throw std::invalid_argument("channel slice out of range");
  Tensor<T> out({s.n, count, s.d, s.h, s.w});
  for (int n = 0; n < s.n; ++n) std::copy_n(t.volume(n, c0), s.spatial() * count, out.volume(n, 0));
  return out;
}

}  // namespace voxtopo::nn
