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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "crica/autodiff.hpp"
#include "crica/parameters.hpp"
#include "crica/random.hpp"

namespace crica {

/// Magnitude below which gradients are compared absolutely. Central
/// differences cannot resolve smaller values (roundoff is about
/// machine-eps * |f| / step), and some exact gradients are identically zero,
/// such as the key bias of attention, which softmax cancels.
inline constexpr double kGradFloor = 1e-5;

/// Relative error used by every finite-difference comparison.
template <typename T>
T relative_error(T analytic, T numeric) {
  const T denom = std::max({std::abs(analytic), std::abs(numeric), T(kGradFloor)});
  return std::abs(analytic - numeric) / denom;
}

/// Scalar function of several tensors, expressed on a tape.
template <typename T>
using MultiFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

/// Compares reverse-mode gradients of `f` against central differences for
/// every coordinate of every input tensor. Inputs are perturbed in place and
/// restored. Returns the maximum relative error.
template <typename T>
T grad_check(const MultiFn<T>& f, std::vector<Tensor<T>*> inputs, T eps) {
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (Tensor<T>* x : inputs) vars.push_back(tape.bind(*x, true));
    Var<T> out = f(tape, vars);
    CRICA_CHECK(out.numel() == 1, ErrorCode::NonScalarOutput, "grad_check needs a scalar, got ",
                out.shape());
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  auto evaluate = [&]() {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (Tensor<T>* x : inputs) vars.push_back(tape.bind(*x, false));
    return f(tape, vars).value()[0];
  };

  T worst{0};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<T>& x = *inputs[k];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const T saved = x[i];
      x[i] = saved + eps;
      const T up = evaluate();
      x[i] = saved - eps;
      const T down = evaluate();
      x[i] = saved;
      const T numeric = (up - down) / (T(2) * eps);
      worst = std::max(worst, relative_error(analytic[k][i], numeric));
    }
  }
  return worst;
}

/// Single-input convenience form.
template <typename T>
T grad_check(const std::function<Var<T>(Tape<T>&, const Var<T>&)>& f, Tensor<T> x, T eps) {
  MultiFn<T> wrapped = [&](Tape<T>& tape, const std::vector<Var<T>>& v) { return f(tape, v[0]); };
  return grad_check<T>(wrapped, {&x}, eps);
}

/// Scalar probe sum(out * R) with a fixed random R. Plain sums hide errors in
/// ops whose outputs are constrained (softmax rows, normalized vectors).
template <typename T>
Var<T> random_projection(const Var<T>& out, std::uint64_t seed) {
  Rng rng(seed);
  Var<T> r = out.tape().constant(random_normal<T>(out.shape(), rng, 1.0));
  return sum(mul(out, r));
}

/// Function of input tensors plus model parameters reached through a binder.
template <typename T>
using BoundFn = std::function<Var<T>(ParamBinder<T>&, const std::vector<Var<T>>&)>;

/// Like grad_check, additionally differentiating with respect to `params`
/// (which must be trainable to receive gradients).
template <typename T>
T grad_check_bound(const BoundFn<T>& f, std::vector<Tensor<T>*> inputs,
                   std::vector<Parameter<T>*> params, T eps) {
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    ParamBinder<T> bind(tape, true);
    std::vector<Var<T>> vars;
    for (Tensor<T>* x : inputs) vars.push_back(tape.bind(*x, true));
    Var<T> out = f(bind, vars);
    CRICA_CHECK(out.numel() == 1, ErrorCode::NonScalarOutput, "grad_check needs a scalar, got ",
                out.shape());
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
    for (const Parameter<T>* p : params) analytic.push_back(bind.grad(*p));
  }

  auto evaluate = [&]() {
    Tape<T> tape;
    ParamBinder<T> bind(tape, false);
    std::vector<Var<T>> vars;
    for (Tensor<T>* x : inputs) vars.push_back(tape.bind(*x, false));
    return f(bind, vars).value()[0];
  };

  std::vector<Tensor<T>*> all = inputs;
  for (Parameter<T>* p : params) all.push_back(&p->value);
  T worst{0};
  for (std::size_t k = 0; k < all.size(); ++k) {
    Tensor<T>& x = *all[k];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const T saved = x[i];
      x[i] = saved + eps;
      const T up = evaluate();
      x[i] = saved - eps;
      const T down = evaluate();
      x[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (T(2) * eps)));
    }
  }
  return worst;
}

}  // namespace crica
