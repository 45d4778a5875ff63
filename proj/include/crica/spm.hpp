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

#include <array>
#include <vector>

#include "crica/autodiff.hpp"

namespace crica {

inline constexpr std::size_t kNumRegions = 14;
inline constexpr std::array<std::size_t, 3> kPyramidLevels = {1, 2, 3};

/// Half-open cell rectangle [row0, row1) x [col0, col1) on the patch grid.
struct Region {
  std::size_t row0, row1, col0, col1;

  std::size_t cells() const { return (row1 - row0) * (col1 - col0); }
  friend bool operator==(const Region&, const Region&) = default;
};

/// The 1x1, 2x2 and 3x3 pyramid partitions of a g x g grid, level by level,
/// each level row-major. Boundaries sit at floor(k*g/n).
inline std::vector<Region> pyramid_regions(std::size_t grid) {
  CRICA_CHECK(grid >= 3, ErrorCode::GridTooSmall, "pyramid needs a grid of at least 3, got ",
              grid);
  std::vector<Region> regions;
  regions.reserve(kNumRegions);
  for (std::size_t n : kPyramidLevels) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        regions.push_back({i * grid / n, (i + 1) * grid / n, j * grid / n, (j + 1) * grid / n});
  }
  return regions;
}

/// Flat row-major cell indices covered by a region.
inline std::vector<std::size_t> region_cells(const Region& r, std::size_t grid) {
  std::vector<std::size_t> cells;
  cells.reserve(r.cells());
  for (std::size_t y = r.row0; y < r.row1; ++y)
    for (std::size_t x = r.col0; x < r.col1; ++x) cells.push_back(y * grid + x);
  return cells;
}

/// Generalized mean over the rows of `region` [m x D]:
/// ((1/m) * sum max(x, eps)^p)^(1/p) per channel. `p` is a scalar variable.
template <typename T>
Var<T> gem(const Var<T>& region, const Var<T>& p, T eps) {
  CRICA_CHECK(region.shape().size() == 2, ErrorCode::ShapeMismatch, "gem input ", region.shape());
  CRICA_CHECK(region.shape()[0] >= 1, ErrorCode::EmptyRegion, "gem over no rows");
  Var<T> powered = power(clamp_min(region, eps), p);
  return power(mean(powered, 0), reciprocal(p));
}

/// Regional features for a batch: class_tokens [B x D], patch_maps
/// [B x g x g x D] -> [B x 14 x D]. Region 0 is the class token; regions 1-4
/// and 5-13 are GeM over the 2x2 and 3x3 pyramid cells.
template <typename T>
Var<T> spm_aggregate(const Var<T>& class_tokens, const Var<T>& patch_maps, const Var<T>& p,
                     T eps) {
  const Shape& ms = patch_maps.shape();
  CRICA_CHECK(ms.size() == 4 && ms[1] == ms[2], ErrorCode::ShapeMismatch,
              "patch maps must be B x g x g x D, got ", ms);
  const std::size_t batch = ms[0], grid = ms[1], d = ms[3], cells = grid * grid;
  CRICA_CHECK(class_tokens.shape() == Shape({batch, d}), ErrorCode::ShapeMismatch,
              "class tokens ", class_tokens.shape(), " for maps ", ms);
  const std::vector<Region> regions = pyramid_regions(grid);

  // Power once over the whole map; each region then only needs a mean.
  Var<T> flat = reshape(patch_maps, {batch * cells, d});
  Var<T> powered = power(clamp_min(flat, eps), p);

  std::vector<Var<T>> pooled;
  pooled.reserve(kNumRegions - 1);
  for (std::size_t r = 1; r < regions.size(); ++r) {
    const std::vector<std::size_t> local = region_cells(regions[r], grid);
    std::vector<std::size_t> rows;
    rows.reserve(batch * local.size());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c : local) rows.push_back(b * cells + c);
    Var<T> picked = reshape(gather_rows(powered, std::move(rows)), {batch, local.size(), d});
    pooled.push_back(reshape(mean(picked, 1), {batch, 1, d}));
  }
  Var<T> gem_part = power(concat(pooled, 1), reciprocal(p));
  Var<T> cls = reshape(class_tokens, {batch, 1, d});
  return concat(std::vector<Var<T>>{cls, gem_part}, 1);
}

}  // namespace crica
