// Copyright 2026 The crica Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "crica/parameters.hpp"

namespace crica {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over an ordered list of parameters. Frozen parameters keep empty
/// moment slots and are never written.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  double lr() const { return hyper_.lr; }
  void set_lr(double lr) { hyper_.lr = lr; }
  std::uint64_t steps() const { return step_; }
  const AdamHyper& hyper() const { return hyper_; }

  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  /// Restores a saved state (checkpoint resume).
  void restore(std::uint64_t step, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  void step(const std::vector<Parameter<T>*>& params, const std::vector<Tensor<T>>& grads) {
    CRICA_CHECK(params.size() == grads.size(), ErrorCode::ShapeMismatch, params.size(),
                " parameters but ", grads.size(), " gradients");
    if (m_.empty()) {
      for (const Parameter<T>* p : params) {
        const Shape s = p->trainable ? p->value.shape() : Shape{1};
        m_.emplace_back(s);
        v_.emplace_back(s);
      }
    }
    CRICA_CHECK(m_.size() == params.size(), ErrorCode::ShapeMismatch,
                "optimizer state tracks ", m_.size(), " parameters, got ", params.size());
    ++step_;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter<T>& p = *params[k];
      if (!p.trainable) continue;
      const Tensor<T>& g = grads[k];
      CRICA_CHECK(g.shape() == p.value.shape() && m_[k].shape() == p.value.shape(),
                  ErrorCode::ShapeMismatch, "gradient ", g.shape(), " for parameter ", p.name,
                  " of shape ", p.value.shape());
      T* w = p.value.ptr();
      T* m = m_[k].ptr();
      T* v = v_[k].ptr();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
        v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = static_cast<T>(w[i] - hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps));
      }
    }
  }

 private:
  AdamHyper hyper_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace crica
