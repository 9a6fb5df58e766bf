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
#include <stdexcept>
#include <vector>

#include "voxtopo/neural/model.hpp"

namespace voxtopo::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers follow the model's trainable
/// parameter order.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }

  void step(Model<T>& model) {
    auto params = trainable(model);
    if (m_.empty()) {
      for (auto& p : params) {
        m_.emplace_back(p.value->size(), T(0));
        v_.emplace_back(p.value->size(), T(0));
      }
    }
    if (m_.size() != params.size()) throw std::logic_error("optimizer state does not match model");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T step_size = T(cfg_.lr / bc1);
    const T inv_bc2 = T(1.0 / bc2);
    const T eps = T(cfg_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = *params[k].value;
      auto& g = *params[k].grad;
      auto& m = m_[k];
      auto& v = v_[k];
      parallel_chunks(w.size(), std::size_t{1} << 15, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * g[i];
          v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
          w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
        }
      });
    }
  }

  /// State access for checkpointing.
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

  static std::vector<ParamRef<T>> trainable(Model<T>& model) {
    std::vector<ParamRef<T>> out;
    for (auto& p : model.params())
      if (p.grad) out.push_back(p);
    return out;
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

/// Mean binary cross-entropy of sigmoid(z) against a constant label,
/// computed from logits. Writes dLoss/dz into grad when given.
template <typename T>
double bce_with_logits(const Tensor<T>& z, double label, Tensor<T>* grad = nullptr) {
  double sum = 0;
  const double n = double(z.size());
  if (grad) *grad = Tensor<T>(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    sum += std::max(v, 0.0) - v * label + std::log1p(std::exp(-std::abs(v)));
    if (grad) (*grad)[i] = T((double(sigmoid(z[i])) - label) / n);
  }
  return sum / n;
}

/// Mean absolute error; adds weight * dL1/dy into grad when given.
template <typename T>
double l1_loss(const Tensor<T>& y, const Tensor<T>& target, Tensor<T>* grad = nullptr, double weight = 1.0) {
  if (!(y.shape() == target.shape()))
    throw std::invalid_argument("l1 shape mismatch: " + to_string(y.shape()) + " vs " + to_string(target.shape()));
  double sum = 0;
  const double n = double(y.size());
  if (grad && grad->empty()) *grad = Tensor<T>(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = double(y[i]) - double(target[i]);
    sum += std::abs(d);
    if (grad) (*grad)[i] += T(weight * ((d > 0) - (d < 0)) / n);
  }
  return sum / n;
}

}  // namespace voxtopo::nn
