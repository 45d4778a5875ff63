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

#include <algorithm>
#include <numeric>

#include "crica/random.hpp"
#include "crica/retrieval.hpp"
#include "test_util.hpp"

namespace crica {
namespace {

DescriptorSet random_set(std::size_t n, std::size_t dim, Rng& rng, const std::string& prefix = "d") {
  DescriptorSet s;
  for (std::size_t i = 0; i < n; ++i) {
    GlobalDescriptor g{prefix + std::to_string(i), std::vector<float>(dim)};
    for (auto& v : g.vector) v = static_cast<float>(rng.normal());
    normalize_row(g.vector);
    s.append(g);
  }
  return s;
}

Manifest planar_meta(const DescriptorSet& s) {
  Manifest m;
  for (std::size_t i = 0; i < s.size(); ++i)
    m.push_back({s.ids[i], static_cast<std::int64_t>(i), Geotag::planar(100.0 * i, 0.0)});
  return m;
}

std::vector<std::size_t> brute_rank(const DescriptorSet& db, std::span<const float> q) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < db.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < db.dim; ++j) s += double(db.row(i)[j]) * q[j];
    scored.emplace_back(-s, i);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::size_t> out;
  for (const auto& [s, i] : scored) out.push_back(i);
  return out;
}

TEST(Index, OrderPreservedAndErrors) {
  Rng rng(1);
  DescriptorSet s = random_set(3, 4, rng);
  const DescriptorIndex idx = build_index(s, planar_meta(s));
  ASSERT_EQ(idx.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(idx.meta[i].path, s.ids[i]);

  DescriptorSet dup = s;
  dup.append({"d1", std::vector<float>(4, 0.5f)});
  EXPECT_CRICA_ERROR(build_index(dup, planar_meta(s)), DuplicateId);
  EXPECT_CRICA_ERROR(build_index(DescriptorSet{}, Manifest{}), EmptyIndex);
  Manifest partial = planar_meta(s);
  partial.pop_back();
  EXPECT_CRICA_ERROR(build_index(s, partial), MissingMetadata);
  EXPECT_CRICA_ERROR(s.append({"x", std::vector<float>(5, 1.0f)}), DimMismatch);
}

TEST(Index, RowsAreRenormalized) {
  DescriptorSet s;
  s.append({"a", {3.0f, 4.0f}});
  const DescriptorIndex idx = build_index(s, planar_meta(s));
  EXPECT_FLOAT_EQ(idx.descriptors.row(0)[0], 0.6f);
  EXPECT_FLOAT_EQ(idx.descriptors.row(0)[1], 0.8f);
}

TEST(Knn, SelfMatchAndTies) {
  Rng rng(2);
  DescriptorSet s = random_set(5, 8, rng);
  const DescriptorIndex idx = build_index(s, planar_meta(s));
  const auto nn = knn(idx, s.row(3), 2);
  ASSERT_EQ(nn.size(), 2u);
  EXPECT_EQ(nn[0].index, 3u);
  EXPECT_EQ(nn[0].id, "d3");
  EXPECT_NEAR(nn[0].similarity, 1.0, 1e-6);

  DescriptorSet axis;
  for (int i = 0; i < 4; ++i) axis.append({"a" + std::to_string(i), {1.0f, 0.0f}});
  const DescriptorIndex ai = build_index(axis, planar_meta(axis));
  const std::vector<float> ortho = {0.0f, 1.0f};
  const auto tie = knn(ai, ortho, 10);
  ASSERT_EQ(tie.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(tie[i].index, i);
    EXPECT_EQ(tie[i].similarity, 0.0);
  }
  EXPECT_CRICA_ERROR(knn(ai, std::vector<float>(3, 1.0f), 1), DimMismatch);
}

TEST(Knn, MatchesBruteForceSort) {
  Rng rng(3);
  DescriptorSet db = random_set(100, 64, rng);
  const DescriptorIndex idx = build_index(db, planar_meta(db));
  DescriptorSet qs = random_set(20, 64, rng, "q");
  for (std::size_t q = 0; q < qs.size(); ++q) {
    const auto nn = knn(idx, qs.row(q), 100);
    const auto ref = brute_rank(idx.descriptors, qs.row(q));
    for (std::size_t i = 0; i < 100; ++i) ASSERT_EQ(nn[i].index, ref[i]);
  }
}

TEST(GroundTruth, Rules) {
  Manifest db = {{"a", 0, Geotag::planar(0, 0)}, {"b", 1, Geotag::planar(100, 0)}};
  Manifest q = {{"q", 9, Geotag::planar(5, 0)}};
  EXPECT_EQ(ground_truth(db, q, GroundTruthRule::euclidean(25)), GroundTruth({{0}}));
  EXPECT_EQ(ground_truth(db, q, GroundTruthRule::euclidean(95)), GroundTruth({{0, 1}}));

  Manifest fdb;
  for (std::int64_t f = 0; f <= 100; f += 5) fdb.push_back({"f" + std::to_string(f), f, Geotag::at_frame(f)});
  const GroundTruth fgt = ground_truth(fdb, {{"fq", 0, Geotag::at_frame(50)}}, GroundTruthRule::frame_offset(10));
  std::vector<std::int64_t> frames;
  for (std::size_t i : fgt[0]) frames.push_back(fdb[i].geo.frame);
  EXPECT_EQ(frames, (std::vector<std::int64_t>{40, 45, 50, 55, 60}));
  EXPECT_CRICA_ERROR(ground_truth(fdb, q, GroundTruthRule::euclidean(25)), MissingMetadata);

  Manifest udb = {{"u0", 3, Geotag::planar(0, 0)}, {"u1", 7, Geotag::planar(0, 0)},
                  {"u2", 7, Geotag::planar(0, 0)}};
  EXPECT_EQ(ground_truth(udb, {{"uq", 7, Geotag::planar(0, 0)}}, GroundTruthRule::unique_pair()),
            GroundTruth({{1}}));
}

TEST(GroundTruth, RuleParsing) {
  EXPECT_EQ(GroundTruthRule::parse("euclidean").threshold, 25.0);
  EXPECT_EQ(GroundTruthRule::parse("euclidean:12.5").threshold, 12.5);
  EXPECT_EQ(GroundTruthRule::parse("frame:3").frames, 3);
  EXPECT_EQ(GroundTruthRule::parse("unique").kind, GroundTruthRule::Kind::UniquePair);
  for (const char* s : {"euclidean:25", "frame:10", "unique"})
    EXPECT_EQ(GroundTruthRule::parse(s).str(), s);
  EXPECT_CRICA_ERROR(GroundTruthRule::parse("manhattan"), UnknownRule);
  EXPECT_CRICA_ERROR(GroundTruthRule::parse("frame:x"), UnknownRule);
  EXPECT_CRICA_ERROR(GroundTruthRule::parse("unique:2"), UnknownRule);
}

TEST(Recall, HandEnumeration) {
  // Five queries whose single positive (database index 0) sits at ranks 1, 2, 3, 7, 11.
  std::vector<std::vector<std::size_t>> rankings;
  for (std::size_t rank : {1u, 2u, 3u, 7u, 11u}) {
    std::vector<std::size_t> r;
    for (std::size_t i = 1; i < rank; ++i) r.push_back(100 + i);
    r.push_back(0);
    for (std::size_t i = 0; i < 5; ++i) r.push_back(200 + i);
    rankings.push_back(r);
  }
  const GroundTruth gt(5, std::vector<std::size_t>{0});
  const auto r = recall_at_n(rankings, gt, {1, 5, 10});
  EXPECT_DOUBLE_EQ(r[0], 20.0);
  EXPECT_DOUBLE_EQ(r[1], 60.0);
  EXPECT_DOUBLE_EQ(r[2], 80.0);
}

TEST(Recall, PerfectAndExcludedQueries) {
  const std::vector<std::vector<std::size_t>> rankings = {{3, 1}, {2, 0}, {}};
  const GroundTruth gt = {{3}, {2}, {}};
  const auto r = recall_at_n(rankings, gt, {1, 5});
  EXPECT_EQ(r, (std::vector<double>{100.0, 100.0}));
  EXPECT_CRICA_ERROR(recall_at_n({{1}}, gt, {1}), MissingQuery);
  EXPECT_CRICA_ERROR(recall_at_n({{3}, {}, {}}, gt, {1}), MissingQuery);
}

TEST(Recall, MonotoneAndPermutationInvariant) {
  Rng rng(4);
  DescriptorSet db = random_set(40, 16, rng);
  Manifest meta;
  for (std::size_t i = 0; i < db.size(); ++i)
    meta.push_back({db.ids[i], 0, Geotag::planar(rng.uniform(0, 200), rng.uniform(0, 200))});
  DescriptorSet qs = random_set(15, 16, rng, "q");
  Manifest qmeta;
  for (std::size_t i = 0; i < qs.size(); ++i)
    qmeta.push_back({qs.ids[i], 0, Geotag::planar(rng.uniform(0, 200), rng.uniform(0, 200))});
  const auto rule = GroundTruthRule::euclidean(40);
  const RecallTable t = evaluate(build_index(db, meta), qs, qmeta, rule, {1, 5, 10, 20});
  for (std::size_t i = 1; i < t.recall.size(); ++i) EXPECT_LE(t.recall[i - 1], t.recall[i]);
  EXPECT_GT(t.evaluable, 0u);

  std::vector<std::size_t> perm(db.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  DescriptorSet pdb;
  for (std::size_t i : perm) pdb.append({db.ids[i], std::vector<float>(db.row(i).begin(), db.row(i).end())});
  const RecallTable tp = evaluate(build_index(pdb, meta), qs, qmeta, rule, {1, 5, 10, 20});
  EXPECT_EQ(t.recall, tp.recall);
  EXPECT_EQ(t.at(5), t.recall[1]);
  EXPECT_CRICA_ERROR(t.at(7), InvalidArgument);
}

}  // namespace
}  // namespace crica
