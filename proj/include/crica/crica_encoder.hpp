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
#include <string>
#include <vector>

#include "crica/config.hpp"
#include "crica/spm.hpp"
#include "crica/transformer.hpp"

// Cross-image encoder. For each pyramid region i, the i-th regional features
// of all B images in a batch form one sequence of length B; a stack of post-LN
// transformer layers (shared across the 14 regions) lets every image's
// feature attend to its batch mates. There is no positional encoding over the
// batch axis, so the encoder is equivariant to batch permutations.
namespace crica {

template <typename T>
struct EncoderLayerParams {
  AttentionParams<T> attn;
  LayerNormParams<T> ln1;
  MlpParams<T> mlp;
  LayerNormParams<T> ln2;

  static EncoderLayerParams init(const CricaConfig& cfg, const std::string& prefix, Rng& rng) {
    EncoderLayerParams l;
    l.attn = AttentionParams<T>::init(prefix + ".attn", cfg.embed_dim, rng, 0.02, true);
    l.ln1 = LayerNormParams<T>::init(prefix + ".ln1", cfg.embed_dim, true);
    l.mlp = MlpParams<T>::init(prefix + ".mlp", cfg.embed_dim, cfg.mlp_hidden, rng, 0.02, true);
    l.ln2 = LayerNormParams<T>::init(prefix + ".ln2", cfg.embed_dim, true);
    return l;
  }

  template <typename F>
  void for_each(F&& f) {
    attn.for_each(f);
    ln1.for_each(f);
    mlp.for_each(f);
    ln2.for_each(f);
  }
  template <typename F>
  void for_each(F&& f) const {
    attn.for_each(f);
    ln1.for_each(f);
    mlp.for_each(f);
    ln2.for_each(f);
  }
};

template <typename T>
struct CricaEncoderParams {
  std::vector<EncoderLayerParams<T>> layers;

  static CricaEncoderParams init(const CricaConfig& cfg, Rng& rng) {
    cfg.validate();
    CricaEncoderParams p;
    if (!cfg.enabled) return p;
    for (std::size_t l = 0; l < cfg.layers; ++l)
      p.layers.push_back(EncoderLayerParams<T>::init(cfg, "crica.layer" + std::to_string(l), rng));
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    for (auto& l : layers) l.for_each(f);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& l : layers) l.for_each(f);
  }
};

inline std::size_t crica_param_count(const CricaConfig& cfg) {
  if (!cfg.enabled) return 0;
  const std::size_t d = cfg.embed_dim;
  const std::size_t layer = attention_param_count(d) + mlp_param_count(d, cfg.mlp_hidden) +
                            2 * layer_norm_param_count(d);
  return cfg.layers * layer;
}

/// [B x 14 x D] -> 14 tensors [B x D]; sequence i holds region i of every image.
template <typename T>
std::vector<Tensor<T>> regional_sequences(const Tensor<T>& batch_feats) {
  CRICA_CHECK(batch_feats.rank() == 3, ErrorCode::ShapeMismatch, "regional features ",
              batch_feats.shape());
  const std::size_t b = batch_feats.dim(0), r = batch_feats.dim(1), d = batch_feats.dim(2);
  std::vector<Tensor<T>> seqs(r, Tensor<T>({b, d}));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < r; ++j)
      std::copy_n(batch_feats.ptr() + (i * r + j) * d, d, seqs[j].ptr() + i * d);
  return seqs;
}

/// Inverse of regional_sequences.
template <typename T>
Tensor<T> regroup_sequences(const std::vector<Tensor<T>>& seqs) {
  CRICA_CHECK(!seqs.empty(), ErrorCode::RaggedSequences, "no sequences");
  const std::size_t b = seqs[0].dim(0), d = seqs[0].dim(1), r = seqs.size();
  Tensor<T> out({b, r, d});
  for (std::size_t j = 0; j < r; ++j) {
    CRICA_CHECK(seqs[j].shape() == seqs[0].shape(), ErrorCode::RaggedSequences, "sequence ", j,
                " has shape ", seqs[j].shape(), " vs ", seqs[0].shape());
    for (std::size_t i = 0; i < b; ++i)
      std::copy_n(seqs[j].ptr() + i * d, d, out.ptr() + (i * r + j) * d);
  }
  return out;
}

namespace detail {

/// Encoder layers over region-major rows: [R*B x D], rows r*B .. r*B+B-1 are
/// one sequence.
template <typename T>
Var<T> encode_region_major(ParamBinder<T>& bind, const CricaEncoderParams<T>& params,
                           const CricaConfig& cfg, Var<T> x, std::size_t batch) {
  for (const auto& layer : params.layers) {
    Var<T> attn = multi_head_attention(bind, layer.attn, x, cfg.heads, batch);
    x = apply_layer_norm(bind, layer.ln1, add(attn, x), cfg.ln_eps);
    Var<T> ff = apply_mlp(bind, layer.mlp, x, Activation::Relu);
    x = apply_layer_norm(bind, layer.ln2, add(ff, x), cfg.ln_eps);
  }
  return x;
}

}  // namespace detail

/// 14 sequences [B x D] -> encoded regional features [B x 14 x D].
template <typename T>
Var<T> cross_image_encode(ParamBinder<T>& bind, const CricaEncoderParams<T>& params,
                          const CricaConfig& cfg, const std::vector<Var<T>>& sequences) {
  CRICA_CHECK(!sequences.empty(), ErrorCode::RaggedSequences, "no sequences to encode");
  const Shape& first = sequences.front().shape();
  for (const auto& s : sequences)
    CRICA_CHECK(s.shape() == first, ErrorCode::RaggedSequences, "sequence of shape ", s.shape(),
                " next to ", first);
  const std::size_t batch = first[0], d = first[1], regions = sequences.size();
  Var<T> x = regions == 1 ? sequences.front() : concat(sequences, 0);
  x = detail::encode_region_major(bind, params, cfg, x, batch);
  std::vector<std::size_t> order(batch * regions);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < regions; ++r) order[b * regions + r] = r * batch + b;
  return reshape(gather_rows(x, std::move(order)), {batch, regions, d});
}

/// Batch form: regional features [B x 14 x D] -> encoded [B x 14 x D].
template <typename T>
Var<T> cross_image_encode(ParamBinder<T>& bind, const CricaEncoderParams<T>& params,
                          const CricaConfig& cfg, const Var<T>& batch_feats) {
  const Shape& s = batch_feats.shape();
  CRICA_CHECK(s.size() == 3, ErrorCode::ShapeMismatch, "regional features ", s);
  const std::size_t batch = s[0], regions = s[1], d = s[2];
  Var<T> flat = reshape(batch_feats, {batch * regions, d});
  std::vector<std::size_t> to_region_major(batch * regions);
  for (std::size_t r = 0; r < regions; ++r)
    for (std::size_t b = 0; b < batch; ++b) to_region_major[r * batch + b] = b * regions + r;
  Var<T> x = detail::encode_region_major(bind, params, cfg,
                                         gather_rows(flat, std::move(to_region_major)), batch);
  std::vector<std::size_t> back(batch * regions);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < regions; ++r) back[b * regions + r] = r * batch + b;
  return reshape(gather_rows(x, std::move(back)), {batch, regions, d});
}

/// [B x R x D] -> [B x R*D] with unit-norm rows, region 0 first.
template <typename T>
Var<T> finalize_descriptors(const Var<T>& feats) {
  const Shape& s = feats.shape();
  CRICA_CHECK(s.size() == 3, ErrorCode::ShapeMismatch, "regional features ", s);
  return l2_normalize(reshape(feats, {s[0], s[1] * s[2]}), 1);
}

struct GlobalDescriptor {
  std::string image_id;
  std::vector<float> vector;
};

/// Flattens one image's [14 x D] features and L2-normalizes them.
template <typename T>
GlobalDescriptor finalize_descriptor(const Tensor<T>& feats, std::string image_id) {
  CRICA_CHECK(feats.rank() == 2, ErrorCode::ShapeMismatch, "regional features ", feats.shape());
  double ss = 0.0;
  for (T v : feats.data()) {
    CRICA_CHECK(std::isfinite(static_cast<double>(v)), ErrorCode::InvalidArgument,
                "non-finite feature for ", image_id);
    ss += static_cast<double>(v) * static_cast<double>(v);
  }
  CRICA_CHECK(ss > 0.0, ErrorCode::ZeroVector, "all-zero descriptor for ", image_id);
  const double inv = 1.0 / std::sqrt(ss);
  GlobalDescriptor g{std::move(image_id), {}};
  g.vector.reserve(feats.numel());
  for (T v : feats.data()) g.vector.push_back(static_cast<float>(static_cast<double>(v) * inv));
  return g;
}

}  // namespace crica
