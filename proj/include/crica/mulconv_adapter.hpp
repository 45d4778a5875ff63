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
#include "crica/parameters.hpp"

namespace crica {

/// Multi-scale convolution adapter:
///
///   tokens -> down (D -> hidden) -> ReLU -+-> 1x1 conv            -+
///                                         +-> 1x1 reduce -> 3x3    -+-> concat -> (+) -> up (hidden -> D)
///                                         +-> 1x1 reduce -> 5x5    -+             ^
///                                         +-------------- skip -------------------+
///
/// The convolutions run over the g x g patch grid. The class token has no
/// spatial neighbourhood and takes the skip path only.
template <typename T>
struct AdapterParams {
  Parameter<T> down_w, down_b;
  Parameter<T> p1_w, p1_b;
  Parameter<T> p3a_w, p3a_b, p3b_w, p3b_b;
  Parameter<T> p5a_w, p5a_b, p5b_w, p5b_b;
  Parameter<T> up_w, up_b;

  static AdapterParams init(const AdapterConfig& cfg, const std::string& prefix, Rng& rng,
                            double stddev = 0.02) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, h = cfg.hidden(), r = cfg.reduce_channels;
    auto w = [&](const char* n, Shape s) {
      return gaussian_param<T>(prefix + "." + n, std::move(s), rng, stddev, true);
    };
    auto b = [&](const char* n, std::size_t len) {
      return constant_param<T>(prefix + "." + n, {len}, T(0), true);
    };
    AdapterParams p;
    p.down_w = w("down_w", {d, h});
    p.down_b = b("down_b", h);
    p.p1_w = w("p1_w", {cfg.path_out_1x1, h, 1, 1});
    p.p1_b = b("p1_b", cfg.path_out_1x1);
    p.p3a_w = w("p3a_w", {r, h, 1, 1});
    p.p3a_b = b("p3a_b", r);
    p.p3b_w = w("p3b_w", {cfg.path_out_3x3, r, 3, 3});
    p.p3b_b = b("p3b_b", cfg.path_out_3x3);
    p.p5a_w = w("p5a_w", {r, h, 1, 1});
    p.p5a_b = b("p5a_b", r);
    p.p5b_w = w("p5b_w", {cfg.path_out_5x5, r, 5, 5});
    p.p5b_b = b("p5b_b", cfg.path_out_5x5);
    // Zero up-projection: the adapter starts inert.
    p.up_w = constant_param<T>(prefix + ".up_w", {h, d}, T(0), true);
    p.up_b = b("up_b", d);
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    for (Parameter<T>* p : {&down_w, &down_b, &p1_w, &p1_b, &p3a_w, &p3a_b, &p3b_w, &p3b_b,
                            &p5a_w, &p5a_b, &p5b_w, &p5b_b, &up_w, &up_b})
      f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const Parameter<T>* p : {&down_w, &down_b, &p1_w, &p1_b, &p3a_w, &p3a_b, &p3b_w, &p3b_b,
                                  &p5a_w, &p5a_b, &p5b_w, &p5b_b, &up_w, &up_b})
      f(*p);
  }
};

/// Exact parameter count of one adapter, biases included.
inline std::size_t adapter_param_count(const AdapterConfig& cfg) {
  const std::size_t d = cfg.embed_dim, h = cfg.hidden(), r = cfg.reduce_channels;
  const std::size_t down = d * h + h;
  const std::size_t path1 = h * cfg.path_out_1x1 + cfg.path_out_1x1;
  const std::size_t path3 = (h * r + r) + (r * cfg.path_out_3x3 * 9 + cfg.path_out_3x3);
  const std::size_t path5 = (h * r + r) + (r * cfg.path_out_5x5 * 25 + cfg.path_out_5x5);
  const std::size_t up = h * d + d;
  return down + path1 + path3 + path5 + up;
}

namespace detail {

/// [N x C] token rows -> [C x g x g] feature map.
template <typename T>
Var<T> tokens_to_map(const Var<T>& tokens, std::size_t grid) {
  const std::size_t c = tokens.shape()[1];
  return reshape(transpose(tokens), {c, grid, grid});
}

/// [C x g x g] feature map -> [N x C] token rows.
template <typename T>
Var<T> map_to_tokens(const Var<T>& map) {
  const std::size_t c = map.shape()[0], n = map.shape()[1] * map.shape()[2];
  return transpose(reshape(map, {c, n}));
}

}  // namespace detail

/// Runs the adapter over stacked token sequences: `tokens` holds
/// `tokens.rows / (g*g + 1)` images, each a class token followed by g*g
/// patch tokens in row-major grid order.
template <typename T>
Var<T> adapter_forward(ParamBinder<T>& bind, const AdapterParams<T>& p, const Var<T>& tokens,
                       std::size_t grid) {
  CRICA_CHECK(tokens.shape().size() == 2, ErrorCode::ShapeMismatch, "adapter input ",
              tokens.shape());
  const std::size_t seq = grid * grid + 1;
  CRICA_CHECK(grid > 0 && tokens.shape()[0] % seq == 0, ErrorCode::GridMismatch,
              tokens.shape()[0], " token rows do not match a ", grid, "x", grid,
              " grid plus class token");
  const std::size_t images = tokens.shape()[0] / seq;

  Var<T> hidden = relu(linear(tokens, bind(p.down_w), bind(p.down_b)));

  std::vector<Var<T>> rows;
  rows.reserve(2 * images);
  for (std::size_t b = 0; b < images; ++b) {
    const std::size_t r0 = b * seq;
    Var<T> cls = slice(hidden, 0, r0, r0 + 1);
    Var<T> patches = slice(hidden, 0, r0 + 1, r0 + seq);
    Var<T> map = detail::tokens_to_map(patches, grid);

    Var<T> y1 = conv2d(map, bind(p.p1_w), bind(p.p1_b));
    Var<T> y3 = conv2d(conv2d(map, bind(p.p3a_w), bind(p.p3a_b)), bind(p.p3b_w), bind(p.p3b_b));
    Var<T> y5 = conv2d(conv2d(map, bind(p.p5a_w), bind(p.p5a_b)), bind(p.p5b_w), bind(p.p5b_b));
    Var<T> mixed = detail::map_to_tokens(concat(std::vector<Var<T>>{y1, y3, y5}, 0));

    rows.push_back(cls);
    rows.push_back(add(mixed, patches));
  }
  Var<T> merged = concat(rows, 0);
  return linear(merged, bind(p.up_w), bind(p.up_b));
}

}  // namespace crica
