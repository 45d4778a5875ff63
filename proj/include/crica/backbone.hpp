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
#include <vector>

#include "crica/config.hpp"
#include "crica/mulconv_adapter.hpp"
#include "crica/transformer.hpp"

namespace crica {

/// One pre-LN ViT block plus its adapter. Everything except the adapter is
/// frozen.
template <typename T>
struct BlockParams {
  LayerNormParams<T> ln1;
  AttentionParams<T> attn;
  LayerNormParams<T> ln2;
  MlpParams<T> mlp;
  AdapterParams<T> adapter;

  static BlockParams init(const BackboneConfig& cfg, const std::string& prefix, Rng& rng) {
    const std::size_t d = cfg.embed_dim;
    BlockParams b;
    b.ln1 = LayerNormParams<T>::init(prefix + ".ln1", d, false);
    b.attn = AttentionParams<T>::init(prefix + ".attn", d, rng, 0.02, false);
    b.ln2 = LayerNormParams<T>::init(prefix + ".ln2", d, false);
    b.mlp = MlpParams<T>::init(prefix + ".mlp", d, cfg.mlp_hidden(), rng, 0.02, false);
    b.adapter = AdapterParams<T>::init(cfg.adapter, prefix + ".adapter", rng);
    return b;
  }

  template <typename F>
  void for_each(F&& f) {
    ln1.for_each(f);
    attn.for_each(f);
    ln2.for_each(f);
    mlp.for_each(f);
    adapter.for_each(f);
  }
  template <typename F>
  void for_each(F&& f) const {
    ln1.for_each(f);
    attn.for_each(f);
    ln2.for_each(f);
    mlp.for_each(f);
    adapter.for_each(f);
  }
};

template <typename T>
struct BackboneParams {
  Parameter<T> patch_w;  // [3*p*p x D], rows in (channel, y, x) order
  Parameter<T> patch_b;
  Parameter<T> cls_token;  // [1 x D]
  Parameter<T> pos_embed;  // [(N+1) x D]
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> norm;  // only populated when cfg.final_norm

  static BackboneParams init(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, p = cfg.patch_size;
    BackboneParams bp;
    bp.patch_w = gaussian_param<T>("backbone.patch_w", {3 * p * p, d}, rng, 0.02, false);
    bp.patch_b = constant_param<T>("backbone.patch_b", {d}, T(0), false);
    bp.cls_token = gaussian_param<T>("backbone.cls_token", {1, d}, rng, 0.02, false);
    bp.pos_embed =
        gaussian_param<T>("backbone.pos_embed", {cfg.num_patches() + 1, d}, rng, 0.02, false);
    bp.blocks.reserve(cfg.depth);
    for (std::size_t l = 0; l < cfg.depth; ++l)
      bp.blocks.push_back(BlockParams<T>::init(cfg, "backbone.block" + std::to_string(l), rng));
    if (cfg.final_norm) bp.norm = LayerNormParams<T>::init("backbone.norm", d, false);
    return bp;
  }

  template <typename F>
  void for_each(F&& f) {
    f(patch_w);
    f(patch_b);
    f(cls_token);
    f(pos_embed);
    for (auto& b : blocks) b.for_each(f);
    if (!norm.gamma.name.empty()) norm.for_each(f);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(patch_w);
    f(patch_b);
    f(cls_token);
    f(pos_embed);
    for (const auto& b : blocks) b.for_each(f);
    if (!norm.gamma.name.empty()) norm.for_each(f);
  }
};

/// Frozen (non-adapter) backbone parameter count.
inline std::size_t backbone_frozen_param_count(const BackboneConfig& cfg) {
  const std::size_t d = cfg.embed_dim, p = cfg.patch_size;
  const std::size_t embed = 3 * p * p * d + d + d + (cfg.num_patches() + 1) * d;
  const std::size_t block = 2 * layer_norm_param_count(d) + attention_param_count(d) +
                            mlp_param_count(d, cfg.mlp_hidden());
  return embed + cfg.depth * block + (cfg.final_norm ? layer_norm_param_count(d) : 0);
}

inline std::size_t backbone_adapter_param_count(const BackboneConfig& cfg) {
  return cfg.depth * adapter_param_count(cfg.adapter);
}

/// Image [3 x H x W] -> patch rows [N x 3*p*p], patches in row-major grid order.
template <typename T>
Tensor<T> image_to_patches(const Tensor<T>& image, const BackboneConfig& cfg) {
  const std::size_t s = cfg.image_size, p = cfg.patch_size, g = cfg.grid();
  CRICA_CHECK(image.rank() == 3 && image.dim(0) == 3 && image.dim(1) == s && image.dim(2) == s,
              ErrorCode::BadImageSize, "expected a 3x", s, "x", s, " image, got ", image.shape());
  Tensor<T> patches({g * g, 3 * p * p});
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      T* row = patches.ptr() + (gy * g + gx) * 3 * p * p;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            *row++ = image(c, gy * p + y, gx * p + x);
    }
  return patches;
}

/// Tokens [(N+1) x D] for one image: class token first, positional
/// embeddings added to every token.
template <typename T>
Var<T> patch_embed(ParamBinder<T>& bind, const BackboneParams<T>& params,
                   const BackboneConfig& cfg, const Tensor<T>& image) {
  Var<T> patches = bind.tape().constant(image_to_patches(image, cfg));
  Var<T> embedded = linear(patches, bind(params.patch_w), bind(params.patch_b));
  Var<T> tokens = concat(std::vector<Var<T>>{bind(params.cls_token), embedded}, 0);
  return add(tokens, bind(params.pos_embed));
}

/// z' = MHA(LN(z)) + z;  z = MLP(LN(z')) + s * Adapter(LN(z')) + z'.
/// With `adapter_scale == 0` the adapter is not evaluated and the block is the
/// plain ViT block. `tokens` stacks whole images of g*g+1 rows each.
template <typename T>
Var<T> adapted_block(ParamBinder<T>& bind, const BlockParams<T>& block, const BackboneConfig& cfg,
                     const Var<T>& tokens, double adapter_scale) {
  const std::size_t seq = cfg.num_patches() + 1;
  Var<T> attn = multi_head_attention(bind, block.attn, apply_layer_norm(bind, block.ln1, tokens, cfg.ln_eps),
                                     cfg.heads, seq);
  Var<T> mid = add(attn, tokens);
  Var<T> normed = apply_layer_norm(bind, block.ln2, mid, cfg.ln_eps);
  Var<T> branch = apply_mlp(bind, block.mlp, normed, Activation::Gelu);
  if (adapter_scale != 0.0) {
    Var<T> adapted = adapter_forward(bind, block.adapter, normed, cfg.grid());
    branch = add(branch, scale(adapted, static_cast<T>(adapter_scale)));
  }
  return add(branch, mid);
}

template <typename T>
Var<T> transformer_block(ParamBinder<T>& bind, const BlockParams<T>& block,
                         const BackboneConfig& cfg, const Var<T>& tokens) {
  return adapted_block(bind, block, cfg, tokens, 0.0);
}

template <typename T>
struct BackboneOutput {
  Var<T> class_tokens;  // [B x D]
  Var<T> patch_maps;    // [B x g x g x D]
};

/// Runs every image of `images` [B x 3 x H x W] through the adapted blocks.
/// Images never interact: the batch is stacked only to share the matmuls.
template <typename T>
BackboneOutput<T> backbone_forward(ParamBinder<T>& bind, const BackboneParams<T>& params,
                                   const BackboneConfig& cfg, const Tensor<T>& images) {
  CRICA_CHECK(images.rank() == 4 && images.dim(0) >= 1 && images.dim(1) == 3 &&
                  images.dim(2) == cfg.image_size && images.dim(3) == cfg.image_size,
              ErrorCode::BadImageSize, "expected Bx3x", cfg.image_size, "x", cfg.image_size,
              " images, got ", images.shape());
  const std::size_t batch = images.dim(0), s = cfg.image_size, g = cfg.grid();
  const std::size_t seq = cfg.num_patches() + 1, d = cfg.embed_dim;

  std::vector<Var<T>> per_image;
  per_image.reserve(batch);
  const std::size_t pixels = 3 * s * s;
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor<T> image({3, s, s}, std::vector<T>(images.ptr() + b * pixels,
                                              images.ptr() + (b + 1) * pixels));
    per_image.push_back(patch_embed(bind, params, cfg, image));
  }
  Var<T> z = batch == 1 ? per_image.front() : concat(per_image, 0);
  for (const auto& block : params.blocks) z = adapted_block(bind, block, cfg, z, cfg.adapter_scale);
  if (cfg.final_norm) z = apply_layer_norm(bind, params.norm, z, cfg.ln_eps);

  std::vector<std::size_t> cls_rows, patch_rows;
  cls_rows.reserve(batch);
  patch_rows.reserve(batch * (seq - 1));
  for (std::size_t b = 0; b < batch; ++b) {
    cls_rows.push_back(b * seq);
    for (std::size_t i = 1; i < seq; ++i) patch_rows.push_back(b * seq + i);
  }
  BackboneOutput<T> out;
  out.class_tokens = gather_rows(z, std::move(cls_rows));
  out.patch_maps = reshape(gather_rows(z, std::move(patch_rows)), {batch, g, g, d});
  return out;
}

}  // namespace crica
