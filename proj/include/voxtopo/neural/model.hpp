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
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxtopo/common.hpp"
#include "voxtopo/error.hpp"
#include "voxtopo/neural/layers.hpp"

namespace voxtopo::nn {

/// Named group of consecutive layers (a Down3D or Up3D stage).
struct Block {
  std::string name;
  int first = 0;  // layer range [first, last)
  int last = 0;
};

/// Sequential layer stack where concat_skip layers may reach back to any
/// earlier output. acts[0] is the input, acts[i + 1] the output of layer i.
template <typename T>
class Model {
 public:
  Model() = default;
  Model(std::string kind, int in_channels, int out_channels, int divisor)
      : kind_(std::move(kind)), in_ch_(in_channels), out_ch_(out_channels), divisor_(divisor) {}

  Model(const Model& o)
      : kind_(o.kind_), in_ch_(o.in_ch_), out_ch_(o.out_ch_), divisor_(o.divisor_), blocks_(o.blocks_) {
    for (auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Model& operator=(const Model& o) {
    if (this != &o) *this = Model(o);
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const std::string& kind() const { return kind_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  /// Spatial dims must be multiples of this.
  int divisor() const { return divisor_; }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }
  const std::vector<Block>& blocks() const { return blocks_; }

  Layer<T>& add(std::unique_ptr<Layer<T>> l, std::string label) {
    l->index = int(layers_.size());
    l->label = std::move(label);
    layers_.push_back(std::move(l));
    return *layers_.back();
  }
  void begin_block(std::string name) { blocks_.push_back({std::move(name), int(layers_.size()), int(layers_.size())}); }
  void end_block() { blocks_.back().last = int(layers_.size()); }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (auto& l : layers_)
      for (auto p : l->params()) {
        p.name = "layer" + std::to_string(l->index) + "." + p.name;
        out.push_back(p);
      }
    return out;
  }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto& l : layers_) n += l->param_count();
    return n;
  }
  std::size_t block_param_count(const Block& b) const {
    std::size_t n = 0;
    for (int i = b.first; i < b.last; ++i) n += layers_[i]->param_count();
    return n;
  }
  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  nlohmann::json architecture() const {
    nlohmann::json layers = nlohmann::json::array(), blocks = nlohmann::json::array();
    for (auto& l : layers_) layers.push_back(l->config());
    for (auto& b : blocks_)
      blocks.push_back({{"name", b.name}, {"first", b.first}, {"last", b.last}, {"parameters", block_param_count(b)}});
    return {{"kind", kind_},   {"in_channels", in_ch_}, {"out_channels", out_ch_},
            {"layers", layers}, {"blocks", blocks},       {"parameter_count", param_count()}};
  }

  /// Conv weights ~ N(0, 0.02), BN scale ~ N(1, 0.02); every layer draws
  /// from its own stream so the result does not depend on layer order.
  void init(std::uint64_t seed) {
    for (auto& l : layers_) {
      Rng rng(derive_seed(seed, std::uint64_t(l->index)));
      if (auto* c = dynamic_cast<Conv3d<T>*>(l.get())) {
        for (auto& w : c->weight()) w = T(rng.normal(0.0, 0.02));
        std::fill(c->bias().begin(), c->bias().end(), T(0));
      } else if (auto* b = dynamic_cast<BatchNorm3d<T>*>(l.get())) {
        for (auto& g : b->gamma()) g = T(rng.normal(1.0, 0.02));
        std::fill(b->beta().begin(), b->beta().end(), T(0));
        std::fill(b->running_mean().begin(), b->running_mean().end(), T(0));
        std::fill(b->running_var().begin(), b->running_var().end(), T(1));
      }
    }
  }

  void check_input(const Shape5& s) const {
    if (s.c != in_ch_)
      throw std::invalid_argument(kind_ + ": input has " + std::to_string(s.c) + " channels, expected " +
                                  std::to_string(in_ch_));
    const int dims[3] = {s.d, s.h, s.w};
    for (int v : dims)
      if (v <= 0 || v % divisor_ != 0) {
        std::string need;
        for (int i = 0; i < 3; ++i) {
          const int pad = (divisor_ - dims[i] % divisor_) % divisor_;
          need += (i ? "," : "") + std::to_string(pad);
        }
        throw InvalidInput(kind_ + ": spatial dims " + std::to_string(s.d) + "x" + std::to_string(s.h) + "x" +
                           std::to_string(s.w) + " must be multiples of " + std::to_string(divisor_) +
                           "; pad by (" + need + ") voxels");
      }
  }

  /// Forward pass. With keep, every activation is retained for backward();
  /// otherwise intermediate tensors are released after their last use.
  Tensor<T> forward(const Tensor<T>& x, const PassContext& ctx, bool keep) {
    check_input(x.shape());
    const int L = int(layers_.size());
    std::vector<Tensor<T>> acts(L + 1);
    acts[0] = x;
    std::vector<int> last_use;
    if (!keep) last_use = last_uses();
    for (int i = 0; i < L; ++i) {
      Layer<T>& l = *layers_[i];
      if (fused_upsample(i)) {
        // Consumed directly by the following convolution.
      } else if (i > 0 && fused_upsample(i - 1)) {
        acts[i + 1] = static_cast<Conv3d<T>&>(l).run(acts[i - 1], true);
      } else {
        const Tensor<T>* skip = nullptr;
        if (auto* cs = dynamic_cast<ConcatSkip<T>*>(&l)) skip = &acts[cs->source() + 1];
        acts[i + 1] = l.forward(acts[i], skip, ctx);
      }
      if (!fused_upsample(i) && !acts[i + 1].all_finite()) fault(i, "forward");
      if (!keep)
        for (int j = 0; j <= i; ++j)
          if (last_use[j] == i) acts[j].release();
    }
    Tensor<T> out = acts[L];
    if (keep) {
      acts_ = std::move(acts);
      ctx_ = ctx;
    } else {
      acts_.clear();
    }
    return out;
  }

  /// Input of the final sigmoid after a keep=true forward.
  const Tensor<T>& logits() const {
    if (acts_.empty() || layers_.back()->kind() != LayerKind::sigmoid)
      throw std::logic_error("logits require a retained forward pass ending in sigmoid");
    return acts_[acts_.size() - 2];
  }

  /// Backpropagates dy (gradient of the output, or of the logits when
  /// from_logits) through the retained pass. Parameter gradients accumulate.
  /// Returns dL/dinput when want_dx, else an empty tensor.
  Tensor<T> backward(const Tensor<T>& dy, bool from_logits, bool want_dx) {
    if (acts_.empty()) throw std::logic_error("backward requires a retained forward pass");
    const int L = int(layers_.size());
    std::vector<Tensor<T>> grads(L + 1);
    int top = L;
    if (from_logits) {
      if (layers_.back()->kind() != LayerKind::sigmoid) throw std::logic_error("model does not end in sigmoid");
      top = L - 1;
    }
    grads[top] = dy;
    for (int i = top - 1; i >= 0; --i) {
      if (fused_upsample(i)) continue;
      Layer<T>& l = *layers_[i];
      const bool fused = i > 0 && fused_upsample(i - 1);
      const int in_idx = fused ? i - 1 : i;
      if (grads[i + 1].empty()) continue;
      const bool need_dx = in_idx > 0 || want_dx;
      Tensor<T> dx;
      if (auto* c = dynamic_cast<Conv3d<T>*>(&l)) {
        dx = c->grad(acts_[in_idx], grads[i + 1], fused, need_dx);
      } else {
        Tensor<T> dskip;
        dx = l.backward(acts_[i], acts_[i + 1], grads[i + 1], ctx_, &dskip);
        if (auto* cs = dynamic_cast<ConcatSkip<T>*>(&l)) accumulate(grads[cs->source() + 1], std::move(dskip));
      }
      grads[i + 1].release();
      if (need_dx) {
        if (!dx.all_finite()) fault(i, "backward");
        accumulate(grads[in_idx], std::move(dx));
      }
    }
    return want_dx ? std::move(grads[0]) : Tensor<T>();
  }

  /// Retained activation i (0 = input). Outputs of upsampling layers that
  /// feed a convolution directly are never materialised and read as empty.
  const Tensor<T>& activation(std::size_t i) const { return acts_.at(i); }

  /// Drops retained activations.
  void clear() { acts_.clear(); }

 private:
  bool fused_upsample(int i) const {
    if (i < 0 || i + 1 >= int(layers_.size()) || layers_[i]->kind() != LayerKind::upsample2x) return false;
    auto* c = dynamic_cast<const Conv3d<T>*>(layers_[i + 1].get());
    return c && c->geometry().stride == 1;
  }

  std::vector<int> last_uses() const {
    const int L = int(layers_.size());
    std::vector<int> last(L + 1, -1);
    for (int i = 0; i < L; ++i) {
      const int in_idx = (i > 0 && fused_upsample(i - 1)) ? i - 1 : i;
      last[in_idx] = std::max(last[in_idx], i);
      last[i] = std::max(last[i], i);
      if (auto* cs = dynamic_cast<const ConcatSkip<T>*>(layers_[i].get()))
        last[cs->source() + 1] = std::max(last[cs->source() + 1], i);
    }
    last[L] = L;  // output is kept
    return last;
  }

  static void accumulate(Tensor<T>& dst, Tensor<T>&& src) {
    if (dst.empty()) {
      dst = std::move(src);
      return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  [[noreturn]] void fault(int i, const char* stage) const {
    throw NumericFault("non-finite values in " + kind_ + " layer " + std::to_string(i) + " (" +
                       layers_[i]->label + ", " + kind_name(layers_[i]->kind()) + ") during " + stage);
  }

  std::string kind_;
  int in_ch_ = 0, out_ch_ = 0, divisor_ = 1;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Block> blocks_;
  std::vector<Tensor<T>> acts_;
  PassContext ctx_;
};

/// Inclusive 1-D index range; empty when lo > hi.
struct Interval {
  long lo = 1, hi = 0;
  bool empty() const { return lo > hi; }
  void merge(const Interval& o) {
    if (o.empty()) return;
    if (empty()) {
      *this = o;
    } else {
      lo = std::min(lo, o.lo);
      hi = std::max(hi, o.hi);
    }
  }
};

/// Input positions (along one axis, on an unbounded grid) that output
/// position p can depend on. Depends only on the layer geometry.
template <typename T>
Interval input_dependency(const Model<T>& m, long p) {
  const int L = int(m.size());
  std::vector<Interval> need(L + 1);
  need[L] = {p, p};
  auto fdiv = [](long a) { return a >= 0 ? a / 2 : -((-a + 1) / 2); };
  for (int i = L - 1; i >= 0; --i) {
    const Interval out = need[i + 1];
    if (out.empty()) continue;
    const Layer<T>& l = m.layer(i);
    Interval in = out;
    if (auto* c = dynamic_cast<const Conv3d<T>*>(&l)) {
      const auto& g = c->geometry();
      in = {out.lo * g.stride - g.pad_lo, out.hi * g.stride - g.pad_lo + g.kernel - 1};
    } else if (l.kind() == LayerKind::upsample2x) {
      in = {fdiv(out.lo), fdiv(out.hi)};
    } else if (auto* cs = dynamic_cast<const ConcatSkip<T>*>(&l)) {
      need[cs->source() + 1].merge(out);
    }
    need[i].merge(in);
  }
  return need[0];
}

struct GeneratorOptions {
  double dropout_rate = 0.5;
};

struct DiscriminatorOptions {
  bool batchnorm = false;  // mid-layer BN, off by default
};

inline constexpr ConvGeometry kDown{4, 2, 1, 1};
inline constexpr ConvGeometry kSame4{4, 1, 1, 2};
inline constexpr ConvGeometry kSame8{8, 1, 3, 4};

/// U-Net generator: four Down3D stages (32, 64, 128, 128 filters) and four
/// Up3D stages (128, 64, 32, C_out filters) with skip concatenation after the
/// first three Up3D stages.
template <typename T = float>
Model<T> build_generator(int out_channels, const GeneratorOptions& opt = {}) {
  if (out_channels < 1) throw std::invalid_argument("generator needs at least one output channel");
  Model<T> m("generator", 1, out_channels, 16);
  const int down[4] = {32, 64, 128, 128};
  int in = 1;
  int down_out[4];
  for (int s = 0; s < 4; ++s) {
    const std::string b = "down" + std::to_string(s + 1);
    m.begin_block(b);
    m.add(std::make_unique<Conv3d<T>>(in, down[s], kDown), b + ".conv");
    if (s > 0) m.add(std::make_unique<BatchNorm3d<T>>(down[s]), b + ".bn");
    m.add(std::make_unique<LeakyRelu<T>>(0.2), b + ".act");
    m.end_block();
    down_out[s] = int(m.size()) - 1;
    in = down[s];
  }
  const int up[3] = {128, 64, 32};
  for (int s = 0; s < 3; ++s) {
    const std::string b = "up" + std::to_string(s + 1);
    m.begin_block(b);
    m.add(std::make_unique<Upsample2x<T>>(), b + ".upsample");
    m.add(std::make_unique<Conv3d<T>>(in, up[s], kSame4), b + ".conv");
    m.add(std::make_unique<Dropout<T>>(opt.dropout_rate), b + ".dropout");
    m.add(std::make_unique<BatchNorm3d<T>>(up[s]), b + ".bn");
    m.add(std::make_unique<Relu<T>>(), b + ".act");
    const int src = down_out[2 - s];
    m.add(std::make_unique<ConcatSkip<T>>(src), b + ".skip");
    m.end_block();
    in = up[s] + down[2 - s];
  }
  m.begin_block("up4");
  m.add(std::make_unique<Upsample2x<T>>(), "up4.upsample");
  m.add(std::make_unique<Conv3d<T>>(in, out_channels, kSame4), "up4.conv");
  m.add(std::make_unique<Sigmoid<T>>(), "up4.act");
  m.end_block();
  return m;
}

/// Patch discriminator: 16, 32, 64 filters at stride 2, then a single k=8
/// stride-1 filter and sigmoid, giving one score per 8x8x8 input patch.
template <typename T = float>
Model<T> build_discriminator(int in_channels, const DiscriminatorOptions& opt = {}) {
  if (in_channels < 2) throw std::invalid_argument("discriminator input is blob plus at least one channel");
  Model<T> m("discriminator", in_channels, 1, 8);
  const int widths[3] = {16, 32, 64};
  int in = in_channels;
  for (int s = 0; s < 3; ++s) {
    const std::string b = "down" + std::to_string(s + 1);
    m.begin_block(b);
    m.add(std::make_unique<Conv3d<T>>(in, widths[s], kDown), b + ".conv");
    if (opt.batchnorm && s > 0) m.add(std::make_unique<BatchNorm3d<T>>(widths[s]), b + ".bn");
    m.add(std::make_unique<LeakyRelu<T>>(0.2), b + ".act");
    m.end_block();
    in = widths[s];
  }
  m.begin_block("down4");
  m.add(std::make_unique<Conv3d<T>>(in, 1, kSame8), "down4.conv");
  m.add(std::make_unique<Sigmoid<T>>(), "down4.act");
  m.end_block();
  return m;
}

}  // namespace voxtopo::nn
