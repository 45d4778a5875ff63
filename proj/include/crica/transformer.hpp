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

#include "crica/parameters.hpp"

// Building blocks shared by the ViT backbone and the cross-image encoder.
namespace crica {

template <typename T>
struct LayerNormParams {
  Parameter<T> gamma, beta;

  static LayerNormParams init(const std::string& prefix, std::size_t dim, bool trainable) {
    return {constant_param<T>(prefix + ".gamma", {dim}, T(1), trainable),
            constant_param<T>(prefix + ".beta", {dim}, T(0), trainable)};
  }

  template <typename F>
  void for_each(F&& f) {
    f(gamma);
    f(beta);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(gamma);
    f(beta);
  }
};

template <typename T>
struct AttentionParams {
  Parameter<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;

  static AttentionParams init(const std::string& prefix, std::size_t dim, Rng& rng,
                              double stddev, bool trainable) {
    auto w = [&](const char* n) {
      return gaussian_param<T>(prefix + "." + n, {dim, dim}, rng, stddev, trainable);
    };
    auto b = [&](const char* n) { return constant_param<T>(prefix + "." + n, {dim}, T(0), trainable); };
    AttentionParams p;
    p.q_w = w("q_w");
    p.q_b = b("q_b");
    p.k_w = w("k_w");
    p.k_b = b("k_b");
    p.v_w = w("v_w");
    p.v_b = b("v_b");
    p.o_w = w("o_w");
    p.o_b = b("o_b");
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    for (Parameter<T>* p : {&q_w, &q_b, &k_w, &k_b, &v_w, &v_b, &o_w, &o_b}) f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const Parameter<T>* p : {&q_w, &q_b, &k_w, &k_b, &v_w, &v_b, &o_w, &o_b}) f(*p);
  }
};

enum class Activation { Gelu, Relu };

template <typename T>
struct MlpParams {
  Parameter<T> fc1_w, fc1_b, fc2_w, fc2_b;

  static MlpParams init(const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng,
                        double stddev, bool trainable) {
    return {gaussian_param<T>(prefix + ".fc1_w", {dim, hidden}, rng, stddev, trainable),
            constant_param<T>(prefix + ".fc1_b", {hidden}, T(0), trainable),
            gaussian_param<T>(prefix + ".fc2_w", {hidden, dim}, rng, stddev, trainable),
            constant_param<T>(prefix + ".fc2_b", {dim}, T(0), trainable)};
  }

  template <typename F>
  void for_each(F&& f) {
    for (Parameter<T>* p : {&fc1_w, &fc1_b, &fc2_w, &fc2_b}) f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const Parameter<T>* p : {&fc1_w, &fc1_b, &fc2_w, &fc2_b}) f(*p);
  }
};

inline std::size_t attention_param_count(std::size_t dim) { return 4 * (dim * dim + dim); }
inline std::size_t mlp_param_count(std::size_t dim, std::size_t hidden) {
  return dim * hidden + hidden + hidden * dim + dim;
}
inline std::size_t layer_norm_param_count(std::size_t dim) { return 2 * dim; }

template <typename T>
Var<T> apply_layer_norm(ParamBinder<T>& bind, const LayerNormParams<T>& p, const Var<T>& x,
                        double eps) {
  return layer_norm(x, bind(p.gamma), bind(p.beta), static_cast<T>(eps));
}

template <typename T>
Var<T> apply_mlp(ParamBinder<T>& bind, const MlpParams<T>& p, const Var<T>& x, Activation act) {
  Var<T> h = linear(x, bind(p.fc1_w), bind(p.fc1_b));
  h = act == Activation::Gelu ? gelu(h) : relu(h);
  return linear(h, bind(p.fc2_w), bind(p.fc2_b));
}

/// Scaled dot-product multi-head attention. The rows of `x` are the
/// concatenation of independent sequences of `seq_len` tokens each; tokens
/// attend only within their own sequence.
template <typename T>
Var<T> multi_head_attention(ParamBinder<T>& bind, const AttentionParams<T>& p, const Var<T>& x,
                            std::size_t heads, std::size_t seq_len) {
  CRICA_CHECK(x.shape().size() == 2, ErrorCode::ShapeMismatch, "attention input ", x.shape());
  const std::size_t rows = x.shape()[0], dim = x.shape()[1];
  CRICA_CHECK(heads > 0 && dim % heads == 0, ErrorCode::HeadMismatch, "width ", dim,
              " not divisible by ", heads, " heads");
  CRICA_CHECK(seq_len > 0 && rows % seq_len == 0, ErrorCode::RaggedSequences, rows,
              " rows do not split into sequences of ", seq_len);
  const std::size_t head_dim = dim / heads;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(head_dim));

  Var<T> q = linear(x, bind(p.q_w), bind(p.q_b));
  Var<T> k = linear(x, bind(p.k_w), bind(p.k_b));
  Var<T> v = linear(x, bind(p.v_w), bind(p.v_b));

  const std::size_t num_seq = rows / seq_len;
  std::vector<Var<T>> seq_out;
  seq_out.reserve(num_seq);
  for (std::size_t s = 0; s < num_seq; ++s) {
    const std::size_t r0 = s * seq_len, r1 = r0 + seq_len;
    Var<T> qs = num_seq == 1 ? q : slice(q, 0, r0, r1);
    Var<T> ks = num_seq == 1 ? k : slice(k, 0, r0, r1);
    Var<T> vs = num_seq == 1 ? v : slice(v, 0, r0, r1);
    std::vector<Var<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * head_dim, c1 = c0 + head_dim;
      Var<T> qh = heads == 1 ? qs : slice(qs, 1, c0, c1);
      Var<T> kh = heads == 1 ? ks : slice(ks, 1, c0, c1);
      Var<T> vh = heads == 1 ? vs : slice(vs, 1, c0, c1);
      Var<T> attn = softmax(scale(matmul_bt(qh, kh), inv_sqrt_d), 1);
      head_out.push_back(matmul(attn, vh));
    }
    seq_out.push_back(heads == 1 ? head_out.front() : concat(head_out, 1));
  }
  Var<T> merged = num_seq == 1 ? seq_out.front() : concat(seq_out, 0);
  return linear(merged, bind(p.o_w), bind(p.o_b));
}

}  // namespace crica
