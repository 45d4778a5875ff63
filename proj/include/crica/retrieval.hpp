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
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "crica/dataset.hpp"
#include "crica/descriptor_set.hpp"

namespace crica {

/// Unit-norm database descriptors with their ids and geotags.
struct DescriptorIndex {
  DescriptorSet descriptors;
  Manifest meta;  // parallel to descriptors

  std::size_t size() const { return descriptors.size(); }
  std::size_t dim() const { return descriptors.dim; }
};

/// Aligns a descriptor set with its manifest records and renormalizes rows.
inline DescriptorIndex build_index(DescriptorSet set, const Manifest& manifest) {
  CRICA_CHECK(set.size() > 0, ErrorCode::EmptyIndex, "descriptor set is empty");
  CRICA_CHECK(set.values.size() == set.size() * set.dim, ErrorCode::DimMismatch,
              "descriptor storage holds ", set.values.size(), " values for ", set.size(), " x ",
              set.dim);
  std::unordered_map<std::string, std::size_t> by_path;
  for (std::size_t i = 0; i < manifest.size(); ++i) by_path.emplace(manifest[i].path, i);
  std::unordered_set<std::string> seen;
  DescriptorIndex index;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string& id = set.ids[i];
    CRICA_CHECK(seen.insert(id).second, ErrorCode::DuplicateId, "duplicate descriptor id ", id);
    const auto it = by_path.find(id);
    CRICA_CHECK(it != by_path.end(), ErrorCode::MissingMetadata, "no manifest record for ", id);
    index.meta.push_back(manifest[it->second]);
    normalize_row(set.row(i));
  }
  index.descriptors = std::move(set);
  return index;
}

inline DescriptorIndex build_index(const std::filesystem::path& descriptor_file,
                                   const Manifest& manifest) {
  return build_index(load_descriptors(descriptor_file), manifest);
}

struct Neighbor {
  std::size_t index;
  std::string id;
  double similarity;
};

/// Cosine similarity of `q` with every database row, accumulated in double.
inline std::vector<double> similarities(const DescriptorIndex& index, std::span<const float> q) {
  CRICA_CHECK(q.size() == index.dim(), ErrorCode::DimMismatch, "query dim ", q.size(),
              " vs index dim ", index.dim());
  std::vector<double> sims(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto row = index.descriptors.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += static_cast<double>(row[j]) * q[j];
    sims[i] = s;
  }
  return sims;
}

/// Exact top-n by similarity, ties broken by ascending database index.
inline std::vector<Neighbor> knn(const DescriptorIndex& index, std::span<const float> q,
                                 std::size_t n) {
  CRICA_CHECK(n >= 1, ErrorCode::InvalidArgument, "knn needs n >= 1");
  const std::vector<double> sims = similarities(index, q);
  std::vector<std::size_t> order(sims.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(n, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
                    });
  std::vector<Neighbor> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.push_back({order[i], index.descriptors.ids[order[i]], sims[order[i]]});
  return out;
}

struct GroundTruthRule {
  enum class Kind { Euclidean, FrameOffset, UniquePair };
  Kind kind = Kind::Euclidean;
  double threshold = 25.0;     // meters
  std::int64_t frames = 10;

  static GroundTruthRule euclidean(double t) { return {Kind::Euclidean, t, 0}; }
  static GroundTruthRule frame_offset(std::int64_t k) { return {Kind::FrameOffset, 0.0, k}; }
  static GroundTruthRule unique_pair() { return {Kind::UniquePair, 0.0, 0}; }

  /// "euclidean[:meters]", "frame[:k]" or "unique".
  static GroundTruthRule parse(const std::string& spec) {
    const std::size_t colon = spec.find(':');
    const std::string name = spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    try {
      if (name == "euclidean") return euclidean(arg.empty() ? 25.0 : std::stod(arg));
      if (name == "frame") return frame_offset(arg.empty() ? 10 : std::stoll(arg));
    } catch (const std::logic_error&) {
      detail::fail(ErrorCode::UnknownRule, "bad rule argument in '", spec, "'");
    }
    if (name == "unique" && arg.empty()) return unique_pair();
    detail::fail(ErrorCode::UnknownRule, "unknown ground-truth rule '", spec, "'");
  }

  std::string str() const {
    switch (kind) {
      case Kind::Euclidean: return "euclidean:" + detail::format_double(threshold);
      case Kind::FrameOffset: return "frame:" + std::to_string(frames);
      case Kind::UniquePair: return "unique";
    }
    return "?";
  }
};

/// Positive database indices per query, ascending.
using GroundTruth = std::vector<std::vector<std::size_t>>;

inline GroundTruth ground_truth(const Manifest& db, const Manifest& queries,
                                const GroundTruthRule& rule) {
  using Kind = GroundTruthRule::Kind;
  const auto need = [](const ManifestEntry& e, Geotag::Kind k) {
    CRICA_CHECK(e.geo.kind == k, ErrorCode::MissingMetadata, e.path, " lacks a ",
                k == Geotag::Kind::Planar ? "planar position" : "frame number");
  };
  GroundTruth gt(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const ManifestEntry& qe = queries[q];
    for (std::size_t d = 0; d < db.size(); ++d) {
      const ManifestEntry& de = db[d];
      bool hit = false;
      switch (rule.kind) {
        case Kind::Euclidean:
          need(qe, Geotag::Kind::Planar);
          need(de, Geotag::Kind::Planar);
          hit = std::hypot(qe.geo.x - de.geo.x, qe.geo.y - de.geo.y) <= rule.threshold;
          break;
        case Kind::FrameOffset:
          need(qe, Geotag::Kind::Frame);
          need(de, Geotag::Kind::Frame);
          hit = std::llabs(qe.geo.frame - de.geo.frame) <= rule.frames;
          break;
        case Kind::UniquePair:
          hit = gt[q].empty() && qe.place == de.place;
          break;
      }
      if (hit) gt[q].push_back(d);
    }
  }
  return gt;
}

/// Percentage of evaluable queries with a positive in their top-N, one value
/// per entry of `ns`. Queries without positives are left out.
inline std::vector<double> recall_at_n(const std::vector<std::vector<std::size_t>>& rankings,
                                       const GroundTruth& gt, const std::vector<std::size_t>& ns) {
  CRICA_CHECK(rankings.size() == gt.size(), ErrorCode::MissingQuery, rankings.size(),
              " rankings for ", gt.size(), " queries");
  std::vector<std::size_t> hits(ns.size(), 0);
  std::size_t evaluable = 0;
  for (std::size_t q = 0; q < gt.size(); ++q) {
    if (gt[q].empty()) continue;
    CRICA_CHECK(!rankings[q].empty(), ErrorCode::MissingQuery, "query ", q, " has no ranking");
    ++evaluable;
    std::size_t first = rankings[q].size();
    for (std::size_t r = 0; r < rankings[q].size(); ++r) {
      if (std::binary_search(gt[q].begin(), gt[q].end(), rankings[q][r])) {
        first = r;
        break;
      }
    }
    for (std::size_t k = 0; k < ns.size(); ++k)
      if (first < ns[k]) ++hits[k];
  }
  std::vector<double> out(ns.size(), 0.0);
  if (evaluable == 0) return out;
  for (std::size_t k = 0; k < ns.size(); ++k)
    out[k] = 100.0 * static_cast<double>(hits[k]) / static_cast<double>(evaluable);
  return out;
}

struct RecallTable {
  std::vector<std::size_t> ns;
  std::vector<double> recall;
  std::size_t evaluable = 0;

  double at(std::size_t n) const {
    for (std::size_t i = 0; i < ns.size(); ++i)
      if (ns[i] == n) return recall[i];
    detail::fail(ErrorCode::InvalidArgument, "recall@", n, " was not computed");
  }

  std::string format() const {
    std::ostringstream os;
    os << "N\tRecall@N\n" << std::fixed << std::setprecision(2);
    for (std::size_t i = 0; i < ns.size(); ++i) os << ns[i] << '\t' << recall[i] << '\n';
    return os.str();
  }
};

/// Full evaluation: rank every query against the index and score.
inline RecallTable evaluate(const DescriptorIndex& index, const DescriptorSet& queries,
                            const Manifest& query_meta, const GroundTruthRule& rule,
                            std::vector<std::size_t> ns) {
  CRICA_CHECK(queries.size() == query_meta.size(), ErrorCode::MissingQuery, queries.size(),
              " query descriptors for ", query_meta.size(), " records");
  std::sort(ns.begin(), ns.end());
  CRICA_CHECK(!ns.empty() && ns.front() >= 1, ErrorCode::InvalidArgument, "need N >= 1");
  const GroundTruth gt = ground_truth(index.meta, query_meta, rule);
  std::vector<std::vector<std::size_t>> rankings(queries.size());
  std::vector<float> q(queries.dim);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::copy(queries.row(i).begin(), queries.row(i).end(), q.begin());
    normalize_row(q);
    for (const Neighbor& nb : knn(index, q, ns.back())) rankings[i].push_back(nb.index);
  }
  RecallTable t{ns, recall_at_n(rankings, gt, ns), 0};
  for (const auto& g : gt) t.evaluable += g.empty() ? 0 : 1;
  return t;
}

}  // namespace crica
