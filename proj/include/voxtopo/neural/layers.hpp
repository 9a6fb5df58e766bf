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

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxtopo/common.hpp"
#include "voxtopo/neural/conv.hpp"
#include "voxtopo/neural/tensor.hpp"
#include "voxtopo/parallel.hpp"

namespace voxtopo::nn {

enum class LayerKind { conv3d, batchnorm3d, leaky_relu, relu, sigmoid, dropout, upsample2x, concat_skip };

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::batchnorm3d: return "batchnorm3d";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::dropout: return "dropout";
    case LayerKind::upsample2x: return "upsample2x";
    case LayerKind::concat_skip: return "concat_skip";
  }
  return "?";
}

/// Per-pass settings.
struct PassContext {
  bool training = false;
  bool dropout_at_inference = false;
  std::uint64_t dropout_seed = 0;
};

/// A named parameter tensor. Running statistics are non-trainable but still
/// count as parameters and are checkpointed.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<int> shape;
  std::vector<T>* value;
  std::vector<T>* grad;  // null for non-trainable buffers
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// skip is the concatenated tensor for concat_skip and null otherwise.
  virtual Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* skip, const PassContext& ctx) = 0;
  /// Returns dL/dx; parameter gradients are accumulated. For concat_skip the
  /// skip gradient goes to *dskip.
  virtual Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, const PassContext& ctx,
                             Tensor<T>* dskip) = 0;

  virtual std::vector<ParamRef<T>> params() { return {}; }
  virtual nlohmann::json config() const { return {{"kind", kind_name(kind())}}; }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto& p : params()) n += p.value->size();
    return n;
  }
  void zero_grad() {
    for (auto& p : params())
      if (p.grad) std::fill(p.grad->begin(), p.grad->end(), T(0));
  }

  /// Position in the owning model, used to derive per-layer random streams.
  int index = 0;
  std::string label;
};

// ---------------------------------------------------------------------------

template <typename T>
class Conv3d final : public Layer<T> {
 public:
  Conv3d(int in_ch, int out_ch, ConvGeometry g) : in_ch_(in_ch), out_ch_(out_ch), geom_(g) {
    if (in_ch <= 0 || out_ch <= 0 || g.kernel <= 0 || g.stride <= 0)
      throw std::invalid_argument("conv3d: channels, kernel and stride must be positive");
    const std::size_t n = std::size_t(out_ch) * in_ch * g.kernel * g.kernel * g.kernel;
    weight_.assign(n, T(0));
    dweight_.assign(n, T(0));
    bias_.assign(out_ch, T(0));
    dbias_.assign(out_ch, T(0));
  }

  LayerKind kind() const override { return LayerKind::conv3d; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv3d>(*this); }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  const ConvGeometry& geometry() const { return geom_; }
  std::vector<T>& weight() { return weight_; }
  std::vector<T>& bias() { return bias_; }
  std::vector<T>& weight_grad() { return dweight_; }
  std::vector<T>& bias_grad() { return dbias_; }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>*, const PassContext&) override { return run(x, false); }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy, const PassContext&,
                     Tensor<T>*) override {
    return grad(x, dy, false, true);
  }

  /// Forward over the nearest x2 upsampling of x.
  Tensor<T> run(const Tensor<T>& x, bool upsample_input) const {
    check_input(x);
    return conv3d_forward<T>(x, weight_, bias_, out_ch_, geom_, upsample_input);
  }
  Tensor<T> grad(const Tensor<T>& x, const Tensor<T>& dy, bool upsample_input, bool want_dx) {
    Tensor<T> dx;
    conv3d_backward<T>(x, weight_, out_ch_, geom_, upsample_input, dy, want_dx ? &dx : nullptr, dweight_, dbias_);
    return dx;
  }

  std::vector<ParamRef<T>> params() override {
    const int k = geom_.kernel;
    return {{"weight", {out_ch_, in_ch_, k, k, k}, &weight_, &dweight_}, {"bias", {out_ch_}, &bias_, &dbias_}};
  }
  nlohmann::json config() const override {
    return {{"kind", "conv3d"},         {"in", in_ch_},
            {"out", out_ch_},           {"kernel", geom_.kernel},
            {"stride", geom_.stride},   {"pad", {geom_.pad_lo, geom_.pad_hi}}};
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.c() != in_ch_)
      throw std::invalid_argument("conv3d: input has " + std::to_string(x.c()) + " channels, layer expects " +
                                  std::to_string(in_ch_));
  }

  int in_ch_, out_ch_;
  ConvGeometry geom_;
  std::vector<T> weight_, dweight_, bias_, dbias_;
};

// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm3d final : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm3d(int channels)
      : channels_(channels),
        gamma_(channels, T(1)),
        beta_(channels, T(0)),
        mean_(channels, T(0)),
        var_(channels, T(1)),
        dgamma_(channels, T(0)),
        dbeta_(channels, T(0)) {
    if (channels <= 0) throw std::invalid_argument("batchnorm3d: channels must be positive");
  }

  LayerKind kind() const override { return LayerKind::batchnorm3d; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm3d>(*this); }

  std::vector<T>& gamma() { return gamma_; }
  std::vector<T>& beta() { return beta_; }
  std::vector<T>& running_mean() { return mean_; }
  std::vector<T>& running_var() { return var_; }
  /// Whether forward in training mode updates the running statistics.
  bool track_running_stats = true;

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>*, const PassContext& ctx) override {
    check(x);
    Tensor<T> y(x.shape());
    const std::size_t vol = x.shape().spatial();
    const std::size_t m = vol * x.n();
    parallel_for(std::size_t(channels_), [&](std::size_t c_) {
      const int c = int(c_);
      double mu, var;
      if (ctx.training) {
        double s = 0;
        for (int n = 0; n < x.n(); ++n) {
          const T* p = x.volume(n, c);
          for (std::size_t i = 0; i < vol; ++i) s += p[i];
        }
        mu = s / double(m);
        double ss = 0;
        for (int n = 0; n < x.n(); ++n) {
          const T* p = x.volume(n, c);
          for (std::size_t i = 0; i < vol; ++i) ss += (p[i] - mu) * (p[i] - mu);
        }
        var = ss / double(m);
        if (track_running_stats) {
          const double unbiased = m > 1 ? ss / double(m - 1) : var;
          mean_[c] = T((1 - kMomentum) * double(mean_[c]) + kMomentum * mu);
          var_[c] = T((1 - kMomentum) * double(var_[c]) + kMomentum * unbiased);
        }
      } else {
        mu = mean_[c];
        var = var_[c];
      }
      const double scale = double(gamma_[c]) / std::sqrt(var + kEps);
      const double shift = double(beta_[c]) - mu * scale;
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.volume(n, c);
        T* q = y.volume(n, c);
        for (std::size_t i = 0; i < vol; ++i) q[i] = T(p[i] * scale + shift);
      }
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy, const PassContext& ctx,
                     Tensor<T>*) override {
    check(x);
    Tensor<T> dx(x.shape());
    const std::size_t vol = x.shape().spatial();
    const std::size_t m = vol * x.n();
    parallel_for(std::size_t(channels_), [&](std::size_t c_) {
      const int c = int(c_);
      if (!ctx.training) {
        const double inv = 1.0 / std::sqrt(double(var_[c]) + kEps);
        double sg = 0, sgx = 0;
        for (int n = 0; n < x.n(); ++n) {
          const T* p = x.volume(n, c);
          const T* g = dy.volume(n, c);
          T* q = dx.volume(n, c);
          for (std::size_t i = 0; i < vol; ++i) {
            sg += g[i];
            sgx += g[i] * (p[i] - double(mean_[c])) * inv;
            q[i] = T(g[i] * gamma_[c] * inv);
          }
        }
        dbeta_[c] += T(sg);
        dgamma_[c] += T(sgx);
        return;
      }
      double s = 0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.volume(n, c);
        for (std::size_t i = 0; i < vol; ++i) s += p[i];
      }
      const double mu = s / double(m);
      double ss = 0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.volume(n, c);
        for (std::size_t i = 0; i < vol; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double inv = 1.0 / std::sqrt(ss / double(m) + kEps);
      double sg = 0, sgx = 0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.volume(n, c);
        const T* g = dy.volume(n, c);
        for (std::size_t i = 0; i < vol; ++i) {
          sg += g[i];
          sgx += g[i] * (p[i] - mu) * inv;
        }
      }
      dbeta_[c] += T(sg);
      dgamma_[c] += T(sgx);
      const double k = double(gamma_[c]) * inv / double(m);
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.volume(n, c);
        const T* g = dy.volume(n, c);
        T* q = dx.volume(n, c);
        for (std::size_t i = 0; i < vol; ++i) {
          const double xhat = (p[i] - mu) * inv;
          q[i] = T(k * (double(m) * g[i] - sg - xhat * sgx));
        }
      }
    });
    return dx;
  }

  std::vector<ParamRef<T>> params() override {
    return {{"gamma", {channels_}, &gamma_, &dgamma_},
            {"beta", {channels_}, &beta_, &dbeta_},
            {"running_mean", {channels_}, &mean_, nullptr},
            {"running_var", {channels_}, &var_, nullptr}};
  }
  nlohmann::json config() const override { return {{"kind", "batchnorm3d"}, {"channels", channels_}}; }

 private:
  void check(const Tensor<T>& x) const {
    if (x.c() != channels_)
      throw std::invalid_argument("batchnorm3d: input has " + std::to_string(x.c()) + " channels, layer expects " +
                                  std::to_string(channels_));
  }

  int channels_;
  std::vector<T> gamma_, beta_, mean_, var_, dgamma_, dbeta_;
};

// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename F>
Tensor<T> map_values(const Tensor<T>& x, F f) {
  Tensor<T> y(x.shape());
  parallel_chunks(x.size(), std::size_t{1} << 16, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) y[i] = f(x[i], i);
  });
  return y;
}

}  // namespace detail

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(double slope = 0.2) : slope_(slope) {}
  LayerKind kind() const override { return LayerKind::leaky_relu; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LeakyRelu>(*this); }
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>*, const PassContext&) override {
    const T s = T(slope_);
    return detail::map_values(x, [s](T v, std::size_t) { return v > 0 ? v : v * s; });
  }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy, const PassContext&,
                     Tensor<T>*) override {
    const T s = T(slope_);
    return detail::map_values(x, [&](T v, std::size_t i) { return v > 0 ? dy[i] : dy[i] * s; });
  }
  nlohmann::json config() const override { return {{"kind", "leaky_relu"}, {"slope", slope_}}; }

 private:
  double slope_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>*, const PassContext&) override {
    return detail::map_values(x, [](T v, std::size_t) { return v > 0 ? v : T(0); });
  }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy, const PassContext&,
                     Tensor<T>*) override {
    return detail::map_values(x, [&](T v, std::size_t i) { return v > 0 ? dy[i] : T(0); });
  }
};

template <typename T>
T sigmoid(T v) {
  // Split form avoids overflow of exp for large |v|.
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::sigmoid; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sigmoid>(*this); }
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>*, const PassContext&) override {
    return detail::map_values(x, [](T v, std::size_t) { return sigmoid(v); });
  }
  Tensor<T> backward(const Tensor<T>&, const Tensor<T>& y, const Tensor<T>& dy, const PassContext&,
                     Tensor<T>*) override {
    return detail::map_values(y, [&](T s, std::size_t i) { return dy[i] * s * (T(1) - s); });
  }
};

/// Inverted dropout. The mask is a pure function of (pass seed, layer index,
/// element index), so backward can recompute it.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double rate = 0.5) : rate_(rate) {
    if (!(rate >= 0 && rate < 1)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  LayerKind kind() const override { return LayerKind::dropout; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
  double rate() const { return rate_; }

  bool active(const PassContext& ctx) const { return rate_ > 0 && (ctx.training || ctx.dropout_at_inference); }
  bool keep(const PassContext& ctx, std::size_t i) const {
    const std::uint64_t base = derive_seed(ctx.dropout_seed, std::uint64_t(this->index));
    return unit_double(mix64(base + i)) >= rate_;
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>*, const PassContext& ctx) override {
    if (!active(ctx)) return x;
    const T scale = T(1.0 / (1.0 - rate_));
    return detail::map_values(x, [&](T v, std::size_t i) { return keep(ctx, i) ? v * scale : T(0); });
  }
  Tensor<T> backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>& dy, const PassContext& ctx,
                     Tensor<T>*) override {
    if (!active(ctx)) return dy;
    const T scale = T(1.0 / (1.0 - rate_));
    return detail::map_values(dy, [&](T g, std::size_t i) { return keep(ctx, i) ? g * scale : T(0); });
  }
  nlohmann::json config() const override { return {{"kind", "dropout"}, {"rate", rate_}}; }

 private:
  double rate_;
};

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  const Shape5 s = x.shape();
  Tensor<T> y({s.n, s.c, 2 * s.d, 2 * s.h, 2 * s.w});
  parallel_for(std::size_t(s.n) * s.c, [&](std::size_t nc) {
    const int n = int(nc / s.c), c = int(nc % s.c);
    const T* src = x.volume(n, c);
    T* dst = y.volume(n, c);
    for (int z = 0; z < 2 * s.d; ++z)
      for (int yy = 0; yy < 2 * s.h; ++yy) {
        const T* row = src + (std::size_t(z / 2) * s.h + yy / 2) * s.w;
        T* out = dst + (std::size_t(z) * 2 * s.h + yy) * 2 * s.w;
        for (int xx = 0; xx < 2 * s.w; ++xx) out[xx] = row[xx / 2];
      }
  });
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy, const Shape5& in) {
  Tensor<T> dx(in);
  parallel_for(std::size_t(in.n) * in.c, [&](std::size_t nc) {
    const int n = int(nc / in.c), c = int(nc % in.c);
    const T* src = dy.volume(n, c);
    T* dst = dx.volume(n, c);
    for (int z = 0; z < 2 * in.d; ++z)
      for (int yy = 0; yy < 2 * in.h; ++yy) {
        T* row = dst + (std::size_t(z / 2) * in.h + yy / 2) * in.w;
        const T* g = src + (std::size_t(z) * 2 * in.h + yy) * 2 * in.w;
        for (int xx = 0; xx < 2 * in.w; ++xx) row[xx / 2] += g[xx];
      }
  });
  return dx;
}

template <typename T>
class Upsample2x final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::upsample2x; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Upsample2x>(*this); }
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>*, const PassContext&) override { return upsample2x(x); }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy, const PassContext&,
                     Tensor<T>*) override {
    return upsample2x_backward(dy, x.shape());
  }
};

/// Appends the output of an earlier layer along channels.
template <typename T>
class ConcatSkip final : public Layer<T> {
 public:
  /// source is the index of the layer whose output is appended.
  explicit ConcatSkip(int source) : source_(source) {}
  LayerKind kind() const override { return LayerKind::concat_skip; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConcatSkip>(*this); }
  int source() const { return source_; }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* skip, const PassContext&) override {
    if (!skip) throw std::invalid_argument("concat_skip: missing skip tensor");
    return concat_channels(x, *skip);
  }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy, const PassContext&,
                     Tensor<T>* dskip) override {
    if (dskip) *dskip = slice_channels(dy, x.c(), dy.c() - x.c());
    return slice_channels(dy, 0, x.c());
  }
  nlohmann::json config() const override { return {{"kind", "concat_skip"}, {"source", source_}}; }

 private:
  int source_;
};

}  // namespace voxtopo::nn
