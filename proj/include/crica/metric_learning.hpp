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
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "crica/autodiff.hpp"
#include "crica/config.hpp"
#include "crica/random.hpp"

namespace crica {

/// S = D * D^T for unit-norm descriptor rows [B x dim].
template <typename T>
Var<T> cosine_sim_matrix(const Var<T>& desc, double tolerance = 1e-4) {
  const Tensor<T>& dv = desc.value();
  CRICA_CHECK(dv.rank() == 2, ErrorCode::ShapeMismatch, "descriptors ", dv.shape());
  const std::size_t rows = dv.dim(0), dim = dv.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < dim; ++j) ss += static_cast<double>(dv(i, j)) * dv(i, j);
    CRICA_CHECK(std::abs(std::sqrt(ss) - 1.0) <= tolerance, ErrorCode::NonUnitRows, "row ", i,
                " has norm ", std::sqrt(ss));
  }
  return matmul_bt(desc, desc);
}

/// Per-anchor pair selections, row-major B x B flags.
struct MinedPairs {
  std::size_t size = 0;
  std::vector<std::uint8_t> positive;
  std::vector<std::uint8_t> negative;

  bool pos(std::size_t q, std::size_t p) const { return positive[q * size + p] != 0; }
  bool neg(std::size_t q, std::size_t n) const { return negative[q * size + n] != 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1) +
                                    std::count(negative.begin(), negative.end(), 1));
  }
};

/// Multi-similarity hard-pair mining. For anchor q, a negative n is kept when
/// S_qn > min_p S_qp - margin, a positive p when S_qp < max_n S_qn + margin.
/// The anchor is never its own positive; an anchor without positives (a place
/// seen once in the batch) keeps nothing.
template <typename T>
MinedPairs ms_mine(const Tensor<T>& sims, const std::vector<std::int64_t>& labels, double margin) {
  CRICA_CHECK(sims.rank() == 2 && sims.dim(0) == sims.dim(1), ErrorCode::ShapeMismatch,
              "similarity matrix must be square, got ", sims.shape());
  const std::size_t b = sims.dim(0);
  CRICA_CHECK(labels.size() == b, ErrorCode::ShapeMismatch, labels.size(), " labels for ", b,
              " rows");
  MinedPairs mined{b, std::vector<std::uint8_t>(b * b, 0), std::vector<std::uint8_t>(b * b, 0)};
  for (std::size_t q = 0; q < b; ++q) {
    double min_pos = std::numeric_limits<double>::infinity();
    double max_neg = -std::numeric_limits<double>::infinity();
    bool any_pos = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == q) continue;
      const double s = sims(q, j);
      if (labels[j] == labels[q]) {
        min_pos = std::min(min_pos, s);
        any_pos = true;
      } else {
        max_neg = std::max(max_neg, s);
      }
    }
    if (!any_pos) continue;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == q) continue;
      const double s = sims(q, j);
      if (labels[j] == labels[q]) {
        if (s < max_neg + margin) mined.positive[q * b + j] = 1;
      } else {
        if (s > min_pos - margin) mined.negative[q * b + j] = 1;
      }
    }
  }
  return mined;
}

namespace detail {

/// log(1 + sum_i exp(z_i)) without overflow.
inline double log1p_sum_exp(const std::vector<double>& z) {
  if (z.empty()) return 0.0;
  double m = 0.0;
  for (double v : z) m = std::max(m, v);
  double acc = std::exp(-m);
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

}  // namespace detail

/// One anchor's loss term given its mined positive and negative similarities.
inline double ms_anchor_loss(const std::vector<double>& pos_sims,
                             const std::vector<double>& neg_sims, const MsHyper& h) {
  std::vector<double> zp, zn;
  for (double s : pos_sims) zp.push_back(-h.alpha * (s - h.lambda));
  for (double s : neg_sims) zn.push_back(h.beta * (s - h.lambda));
  return detail::log1p_sum_exp(zp) / h.alpha + detail::log1p_sum_exp(zn) / h.beta;
}

/// Multi-similarity loss averaged over all B anchors. Mined pairs are treated
/// as constants; gradients flow into S.
template <typename T>
Var<T> ms_loss(const Var<T>& sims, const MinedPairs& mined, const MsHyper& h) {
  const Tensor<T>& s = sims.value();
  const std::size_t b = s.dim(0);
  CRICA_CHECK(s.rank() == 2 && s.dim(1) == b && mined.size == b, ErrorCode::ShapeMismatch,
              "loss over ", s.shape(), " with masks for ", mined.size);
  // d loss / d S, filled during the forward pass.
  auto dsim = std::make_shared<std::vector<T>>(b * b, T(0));
  double total = 0.0;
  std::vector<double> zp, zn;
  for (std::size_t q = 0; q < b; ++q) {
    zp.clear();
    zn.clear();
    for (std::size_t j = 0; j < b; ++j) {
      if (mined.pos(q, j)) zp.push_back(-h.alpha * (static_cast<double>(s(q, j)) - h.lambda));
      if (mined.neg(q, j)) zn.push_back(h.beta * (static_cast<double>(s(q, j)) - h.lambda));
    }
    const double lp = detail::log1p_sum_exp(zp);
    const double ln = detail::log1p_sum_exp(zn);
    total += lp / h.alpha + ln / h.beta;
    // d/dS_qp [(1/a) log(1+sum e^{-a(S-l)})] = -e^{z_p} / (1 + sum e^z) = -exp(z_p - lp)
    for (std::size_t j = 0; j < b; ++j) {
      if (mined.pos(q, j)) {
        const double z = -h.alpha * (static_cast<double>(s(q, j)) - h.lambda);
        (*dsim)[q * b + j] -= static_cast<T>(std::exp(z - lp) / static_cast<double>(b));
      }
      if (mined.neg(q, j)) {
        const double z = h.beta * (static_cast<double>(s(q, j)) - h.lambda);
        (*dsim)[q * b + j] += static_cast<T>(std::exp(z - ln) / static_cast<double>(b));
      }
    }
  }
  const std::size_t is = sims.id();
  return sims.tape().record(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(b))),
                            sims.requires_grad(), [is, dsim](Tape<T>& t, const Tensor<T>& g) {
                              T* gs = t.grad_buffer(is).ptr();
                              for (std::size_t i = 0; i < dsim->size(); ++i)
                                gs[i] += g[0] * (*dsim)[i];
                            });
}

/// Image indices grouped by place label.
using PlaceGroups = std::map<std::int64_t, std::vector<std::size_t>>;

inline PlaceGroups group_by_place(const std::vector<std::int64_t>& labels) {
  PlaceGroups groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  return groups;
}

struct TrainBatch {
  std::vector<std::size_t> indices;    // into the image collection
  std::vector<std::int64_t> labels;    // place of each index
};

namespace detail {

inline void add_place(TrainBatch& batch, std::int64_t place, const std::vector<std::size_t>& imgs,
                      std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool = imgs;
  rng.shuffle(pool.begin(), pool.end());
  for (std::size_t i = 0; i < k; ++i) {
    batch.indices.push_back(pool[i]);
    batch.labels.push_back(place);
  }
}

inline std::vector<std::int64_t> eligible_places(const PlaceGroups& groups, std::size_t k) {
  std::vector<std::int64_t> places;
  for (const auto& [place, imgs] : groups)
    if (imgs.size() >= k) places.push_back(place);
  return places;
}

}  // namespace detail

/// P distinct places drawn uniformly, K distinct images from each.
inline TrainBatch sample_batch(const PlaceGroups& groups, std::size_t places, std::size_t k,
                               Rng& rng) {
  std::vector<std::int64_t> pool = detail::eligible_places(groups, k);
  CRICA_CHECK(pool.size() >= places, ErrorCode::InsufficientPlaces, "need ", places,
              " places with ", k, " images, have ", pool.size());
  rng.shuffle(pool.begin(), pool.end());
  TrainBatch batch;
  for (std::size_t i = 0; i < places; ++i)
    detail::add_place(batch, pool[i], groups.at(pool[i]), k, rng);
  return batch;
}

/// One epoch: every eligible place appears in exactly one batch; leftover
/// places that cannot fill a batch of P are dropped for this epoch.
inline std::vector<TrainBatch> epoch_batches(const PlaceGroups& groups, std::size_t places,
                                             std::size_t k, Rng& rng) {
  std::vector<std::int64_t> pool = detail::eligible_places(groups, k);
  CRICA_CHECK(pool.size() >= places, ErrorCode::InsufficientPlaces, "need ", places,
              " places with ", k, " images, have ", pool.size());
  rng.shuffle(pool.begin(), pool.end());
  std::vector<TrainBatch> batches;
  for (std::size_t start = 0; start + places <= pool.size(); start += places) {
    TrainBatch batch;
    for (std::size_t i = start; i < start + places; ++i)
      detail::add_place(batch, pool[i], groups.at(pool[i]), k, rng);
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace crica
