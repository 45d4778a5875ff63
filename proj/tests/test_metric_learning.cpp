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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "crica/gradcheck_suite.hpp"
#include "crica/metric_learning.hpp"
#include "crica/model.hpp"
#include "crica/optimizer.hpp"
#include "test_util.hpp"

namespace crica {
namespace {

using D = double;

struct RandomBatch {
  Tensor<D> sims;
  std::vector<std::int64_t> labels;
};

RandomBatch random_batch(std::uint64_t seed, std::size_t max_b = 32) {
  Rng rng(seed);
  const std::size_t b = 2 + rng.below(max_b - 1);
  const std::size_t places = 1 + rng.below(b / 2 + 1);
  std::vector<std::int64_t> labels(b);
  for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(places));
  Tensor<D> desc = random_normal<D>({b, 6}, rng, 1.0);
  Tape<D> t;
  return {cosine_sim_matrix(l2_normalize(t.constant(desc), 1)).value(), labels};
}

// Straight transcription of the mining rule, pair by pair.
MinedPairs brute_mine(const Tensor<D>& s, const std::vector<std::int64_t>& y, D margin) {
  const std::size_t b = y.size();
  MinedPairs m{b, std::vector<std::uint8_t>(b * b, 0), std::vector<std::uint8_t>(b * b, 0)};
  for (std::size_t q = 0; q < b; ++q)
    for (std::size_t j = 0; j < b; ++j) {
      if (j == q) continue;
      if (y[j] == y[q]) {
        bool has_harder_neg = false;
        for (std::size_t n = 0; n < b; ++n)
          if (y[n] != y[q] && s(q, j) < s(q, n) + margin) has_harder_neg = true;
        m.positive[q * b + j] = has_harder_neg;
      } else {
        bool any_pos = false, beats_a_pos = false;
        for (std::size_t p = 0; p < b; ++p)
          if (p != q && y[p] == y[q]) {
            any_pos = true;
            if (s(q, j) > s(q, p) - margin) beats_a_pos = true;
          }
        m.negative[q * b + j] = any_pos && beats_a_pos;
      }
    }
  return m;
}

D brute_loss(const Tensor<D>& s, const MinedPairs& m, const MsHyper& h) {
  const std::size_t b = m.size;
  D total = 0;
  for (std::size_t q = 0; q < b; ++q) {
    D sp = 0, sn = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (m.pos(q, j)) sp += std::exp(-h.alpha * (s(q, j) - h.lambda));
      if (m.neg(q, j)) sn += std::exp(h.beta * (s(q, j) - h.lambda));
    }
    total += std::log(1 + sp) / h.alpha + std::log(1 + sn) / h.beta;
  }
  return total / static_cast<D>(b);
}

TEST(Mining, HandExamples) {
  // Anchor 0 with one positive (1) and one negative (2).
  const std::vector<std::int64_t> y = {0, 0, 1};
  Tensor<D> s({3, 3}, 1.0);
  s(0, 1) = 0.9;
  s(0, 2) = 0.2;
  MinedPairs easy = ms_mine(s, y, 0.1);
  EXPECT_FALSE(easy.pos(0, 1));
  EXPECT_FALSE(easy.neg(0, 2));
  s(0, 1) = 0.3;
  s(0, 2) = 0.5;
  MinedPairs hard = ms_mine(s, y, 0.1);
  EXPECT_TRUE(hard.pos(0, 1));
  EXPECT_TRUE(hard.neg(0, 2));
  // Place 1 occurs once, so anchor 2 mines nothing.
  for (std::size_t j = 0; j < 3; ++j) EXPECT_FALSE(hard.pos(2, j) || hard.neg(2, j));
}

TEST(Mining, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RandomBatch rb = random_batch(seed);
    const MinedPairs a = ms_mine(rb.sims, rb.labels, 0.1), b = brute_mine(rb.sims, rb.labels, 0.1);
    EXPECT_EQ(a.positive, b.positive) << "seed " << seed;
    EXPECT_EQ(a.negative, b.negative) << "seed " << seed;
  }
}

TEST(MsLoss, WorkedExample) {
  const MsHyper h;
  // log(1 + e^-0.5) + log(1 + e^15) / 50
  EXPECT_NEAR(ms_anchor_loss({0.5}, {0.3}, h), 0.7741, 1e-4);
  EXPECT_NEAR(ms_anchor_loss({0.5}, {0.3}, h),
              std::log(1 + std::exp(-0.5)) + std::log(1 + std::exp(15.0)) / 50, 1e-12);
}

TEST(MsLoss, EmptyMasksGiveZero) {
  Tape<D> t;
  auto s = t.constant(Tensor<D>({4, 4}, 0.5));
  MinedPairs none{4, std::vector<std::uint8_t>(16, 0), std::vector<std::uint8_t>(16, 0)};
  EXPECT_EQ(ms_loss(s, none, MsHyper{}).value()[0], 0.0);
}

TEST(MsLoss, MatchesBruteForceWithinTenToMinusTen) {
  const MsHyper h;
  for (std::uint64_t seed = 100; seed < 200; ++seed) {
    const RandomBatch rb = random_batch(seed);
    const MinedPairs m = ms_mine(rb.sims, rb.labels, h.margin);
    Tape<D> t;
    const D fused = ms_loss(t.constant(rb.sims), m, h).value()[0];
    EXPECT_NEAR(fused, brute_loss(rb.sims, m, h), 1e-10) << "seed " << seed;
  }
}

TEST(MsLoss, LargeSimilaritiesDoNotOverflow) {
  MsHyper h;
  h.beta = 5000;
  const D l = ms_anchor_loss({1.0}, {1.0}, h);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, std::log(1 + std::exp(-1.0)) + 1.0, 1e-9);
}

TEST(CosineSims, RejectsNonUnitRows) {
  Tape<D> t;
  EXPECT_CRICA_ERROR(cosine_sim_matrix(t.constant(Tensor<D>({2, 2}, 1.0))), NonUnitRows);
}

TEST(GradSuite, LossModulePasses) {
  for (const auto& r : run_gradcheck_suite("loss")) EXPECT_LT(r.max_rel_err, kGradCheckTolerance) << r.name;
}

TEST(Sampler, DistinctPlacesAndImages) {
  std::vector<std::int64_t> labels;
  for (std::int64_t p = 0; p < 10; ++p)
    for (int k = 0; k < 5; ++k) labels.push_back(p);
  labels.push_back(99);  // singleton place, never eligible for K=4
  const PlaceGroups groups = group_by_place(labels);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const TrainBatch batch = sample_batch(groups, 6, 4, rng);
    ASSERT_EQ(batch.indices.size(), 24u);
    std::set<std::size_t> imgs(batch.indices.begin(), batch.indices.end());
    EXPECT_EQ(imgs.size(), 24u);
    std::map<std::int64_t, int> per_place;
    for (std::size_t i = 0; i < 24; ++i) {
      EXPECT_EQ(labels[batch.indices[i]], batch.labels[i]);
      ++per_place[batch.labels[i]];
    }
    EXPECT_EQ(per_place.size(), 6u);
    EXPECT_EQ(per_place.count(99), 0u);
    for (const auto& [p, n] : per_place) EXPECT_EQ(n, 4);
  }
  EXPECT_CRICA_ERROR(sample_batch(groups, 11, 4, rng), InsufficientPlaces);
}

TEST(Sampler, EpochCoversEachPlaceOnce) {
  std::vector<std::int64_t> labels;
  for (std::int64_t p = 0; p < 11; ++p)
    for (int k = 0; k < 4; ++k) labels.push_back(p);
  Rng rng(2);
  const auto batches = epoch_batches(group_by_place(labels), 3, 4, rng);
  ASSERT_EQ(batches.size(), 3u);
  std::set<std::int64_t> seen;
  for (const auto& b : batches)
    for (std::int64_t l : b.labels) seen.insert(l);
  EXPECT_EQ(seen.size(), 9u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // At t = 1: m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps).
  Parameter<D> p{"w", Tensor<D>({3}, std::vector<D>{1, 2, 3}), true};
  Adam<D> opt(AdamHyper{0.01, 0.9, 0.999, 1e-8});
  const Tensor<D> g({3}, std::vector<D>{0.5, -2.0, 1e-3});
  opt.step({&p}, {g});
  EXPECT_NEAR(p.value[0], 1 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value[1], 2 + 0.01 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value[2], 3 - 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-12);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, SecondStepMatchesRecurrence) {
  Parameter<D> p{"w", Tensor<D>({1}, 0.0), true};
  Adam<D> opt(AdamHyper{0.1, 0.9, 0.999, 1e-8});
  opt.step({&p}, {Tensor<D>({1}, 1.0)});
  opt.step({&p}, {Tensor<D>({1}, 3.0)});
  const D m = 0.9 * 0.1 + 0.1 * 3.0, v = 0.999 * 0.001 + 0.001 * 9.0;
  const D mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p.value[0], -0.1 / (1 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

TEST(Adam, FrozenParametersUntouched) {
  Parameter<D> frozen{"f", Tensor<D>({2}, 1.5), false};
  Parameter<D> live{"l", Tensor<D>({2}, 1.5), true};
  Adam<D> opt;
  for (int i = 0; i < 5; ++i) opt.step({&frozen, &live}, {Tensor<D>({2}, 1.0), Tensor<D>({2}, 1.0)});
  EXPECT_EQ(frozen.value, Tensor<D>({2}, 1.5));
  EXPECT_NE(live.value, Tensor<D>({2}, 1.5));
  EXPECT_CRICA_ERROR(opt.step({&live}, {Tensor<D>({2}, 1.0)}), ShapeMismatch);
}

TEST(Schedule, HalvesEveryThreeEpochs) {
  TrainConfig tc;
  EXPECT_DOUBLE_EQ(tc.lr_at(0), 1e-4);
  EXPECT_DOUBLE_EQ(tc.lr_at(2), 1e-4);
  EXPECT_DOUBLE_EQ(tc.lr_at(3), 5e-5);
  EXPECT_DOUBLE_EQ(tc.lr_at(6), 2.5e-5);
  EXPECT_DOUBLE_EQ(tc.lr_at(9), 1.25e-5);
}

TEST(Params, ModelFreezesExactlyTheBackbone) {
  CricaModel<float> model(ModelConfig::desk());
  model.for_each_param([](const Parameter<float>& p) {
    const bool adapter = p.name.find(".adapter.") != std::string::npos;
    const bool head = p.name.rfind("crica.", 0) == 0 || p.name == "gem.p";
    EXPECT_EQ(p.trainable, adapter || head) << p.name;
  });
}

}  // namespace
}  // namespace crica
