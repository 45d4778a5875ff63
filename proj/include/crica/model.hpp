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

#include "crica/backbone.hpp"
#include "crica/config.hpp"
#include "crica/crica_encoder.hpp"
#include "crica/spm.hpp"

namespace crica {

/// Closed-form parameter accounting; needs no allocation.
struct ParamCounts {
  std::size_t frozen_backbone = 0;
  std::size_t adapters = 0;
  std::size_t encoder = 0;
  std::size_t gem = 0;

  std::size_t trainable() const { return adapters + encoder + gem; }
  std::size_t total() const { return frozen_backbone + trainable(); }
};

inline ParamCounts param_counts(const ModelConfig& cfg) {
  cfg.validate();
  return {backbone_frozen_param_count(cfg.backbone), backbone_adapter_param_count(cfg.backbone),
          crica_param_count(cfg.crica), 1};
}

/// Adapted backbone, spatial-pyramid GeM and the cross-image encoder, with
/// the parameters each one owns. Declaration order (used by checkpoints and
/// the optimizer) is backbone, GeM p, encoder.
template <typename T>
class CricaModel {
 public:
  explicit CricaModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    backbone_ = BackboneParams<T>::init(cfg_.backbone, rng);
    gem_p_ = constant_param<T>("gem.p", {1}, static_cast<T>(cfg_.gem.init_p), true);
    encoder_ = CricaEncoderParams<T>::init(cfg_.crica, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  BackboneParams<T>& backbone() { return backbone_; }
  const BackboneParams<T>& backbone() const { return backbone_; }
  Parameter<T>& gem_p() { return gem_p_; }
  const Parameter<T>& gem_p() const { return gem_p_; }
  CricaEncoderParams<T>& encoder() { return encoder_; }
  const CricaEncoderParams<T>& encoder() const { return encoder_; }

  template <typename F>
  void for_each_param(F&& f) {
    backbone_.for_each(f);
    f(gem_p_);
    encoder_.for_each(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    backbone_.for_each(f);
    f(gem_p_);
    encoder_.for_each(f);
  }

  /// Number of allocated scalars, split by the trainable flag.
  std::size_t count_params(bool trainable) const {
    std::size_t n = 0;
    for_each_param([&](const Parameter<T>& p) {
      if (p.trainable == trainable) n += p.value.numel();
    });
    return n;
  }

  /// Regional features before the cross-image encoder: [B x 14 x D].
  Var<T> regional_features(ParamBinder<T>& bind, const Tensor<T>& images) const {
    BackboneOutput<T> bb = backbone_forward(bind, backbone_, cfg_.backbone, images);
    return spm_aggregate(bb.class_tokens, bb.patch_maps, bind(gem_p_),
                         static_cast<T>(cfg_.gem.eps));
  }

  /// Unit-norm global descriptors [B x 14*D]. With the encoder disabled the
  /// regional features are flattened directly.
  Var<T> forward(ParamBinder<T>& bind, const Tensor<T>& images) const {
    Var<T> feats = regional_features(bind, images);
    if (cfg_.crica.enabled) feats = cross_image_encode(bind, encoder_, cfg_.crica, feats);
    return finalize_descriptors(feats);
  }

  /// Inference without gradient tracking.
  Tensor<T> describe(const Tensor<T>& images) const {
    Tape<T> tape;
    ParamBinder<T> bind(tape, false);
    return forward(bind, images).value();
  }

  /// Keeps GeM p inside its configured range after an update.
  void clamp_gem() {
    T& p = gem_p_.value[0];
    p = std::clamp(p, static_cast<T>(cfg_.gem.min_p), static_cast<T>(cfg_.gem.max_p));
  }

 private:
  ModelConfig cfg_;
  BackboneParams<T> backbone_;
  Parameter<T> gem_p_;
  CricaEncoderParams<T> encoder_;
};

}  // namespace crica
