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

#include <string>
#include <unordered_map>
#include <utility>

#include "crica/autodiff.hpp"
#include "crica/random.hpp"

namespace crica {

/// Named persistent tensor owned by a model.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = false;
};

template <typename T>
Parameter<T> gaussian_param(std::string name, Shape shape, Rng& rng, double stddev,
                            bool trainable) {
  return {std::move(name), random_normal<T>(std::move(shape), rng, stddev), trainable};
}

template <typename T>
Parameter<T> constant_param(std::string name, Shape shape, T value, bool trainable) {
  return {std::move(name), Tensor<T>(std::move(shape), value), trainable};
}

/// Binds model parameters onto one tape, once each. Trainable parameters get
/// gradient tracking when the binder is built with `track_gradients`.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, bool track_gradients) : tape_(tape), track_(track_gradients) {}

  Var<T> operator()(const Parameter<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var<T> v = tape_.bind(p.value, track_ && p.trainable);
    bound_.emplace(&p, v);
    return v;
  }

  /// Gradient of a parameter after backward; zeros if it never took part.
  Tensor<T> grad(const Parameter<T>& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return Tensor<T>(p.value.shape());
    return tape_.grad(it->second);
  }

  Tape<T>& tape() { return tape_; }
  bool tracking() const { return track_; }

 private:
  Tape<T>& tape_;
  bool track_;
  std::unordered_map<const Parameter<T>*, Var<T>> bound_;
};

}  // namespace crica
