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
#include <filesystem>

#include "crica/pca.hpp"
#include "crica/random.hpp"
#include "test_util.hpp"

namespace crica {
namespace {

DescriptorSet gaussian_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  DescriptorSet s;
  for (std::size_t i = 0; i < n; ++i) {
    GlobalDescriptor g{"s" + std::to_string(i), std::vector<float>(dim)};
    // Anisotropic so the eigenvalues are well separated.
    for (std::size_t j = 0; j < dim; ++j) g.vector[j] = static_cast<float>(rng.normal() * (1.0 + j) + 0.3);
    s.append(g);
  }
  return s;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
  return s;
}

TEST(Pca, AxisAlignedData) {
  // Variance 4 along x, 1 along y: first direction is +x.
  DescriptorSet s;
  s.dim = 2;
  for (float x : {-2.0f, 2.0f})
    for (float y : {-1.0f, 1.0f}) s.append({"p", {x, y}});
  s.ids = {"a", "b", "c", "d"};
  const PcaModel m = pca_fit(s, 2);
  EXPECT_NEAR(m.direction(0)[0], 1.0, 1e-6);
  EXPECT_NEAR(m.direction(0)[1], 0.0, 1e-6);
  EXPECT_NEAR(std::abs(m.direction(1)[1]), 1.0, 1e-6);
  EXPECT_GT(m.direction(1)[1], 0.0f);
  // Sample covariance: 4 * 4 / 3 and 1 * 4 / 3.
  EXPECT_NEAR(m.eigenvalues[0], 16.0 / 3.0, 1e-5);
  EXPECT_NEAR(m.eigenvalues[1], 4.0 / 3.0, 1e-5);
}

TEST(Pca, BasisOrthonormalAndEigenvaluesSorted) {
  const PcaModel m = pca_fit(gaussian_set(80, 24, 1), 10);
  for (std::size_t a = 0; a < 10; ++a) {
    for (std::size_t b = 0; b < 10; ++b)
      EXPECT_NEAR(dot(m.direction(a), m.direction(b)), a == b ? 1.0 : 0.0, 1e-6);
    if (a > 0) {
      EXPECT_GE(m.eigenvalues[a - 1], m.eigenvalues[a]);
    }
    // Sign convention: the largest-magnitude entry is positive.
    float best = 0;
    for (float v : m.direction(a))
      if (std::abs(v) > std::abs(best)) best = v;
    EXPECT_GT(best, 0.0f);
  }
  EXPECT_FALSE(m.rank_deficient);
}

TEST(Pca, FullDimensionPreservesCenteredCosines) {
  const DescriptorSet s = gaussian_set(60, 16, 2);
  const PcaModel m = pca_fit(s, 16);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = i + 1; j < 10; ++j) {
      std::vector<float> a(16), b(16);
      for (std::size_t k = 0; k < 16; ++k) {
        a[k] = s.row(i)[k] - m.mean[k];
        b[k] = s.row(j)[k] - m.mean[k];
      }
      const double cos = dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
      EXPECT_NEAR(dot(pca_project(s.row(i), m), pca_project(s.row(j), m)), cos, 1e-5);
    }
}

TEST(Pca, ProjectionIsUnitNormAndWhiteningEqualizesVariance) {
  const DescriptorSet s = gaussian_set(400, 6, 3);
  const PcaModel m = pca_fit(s, 3);
  const DescriptorSet plain = pca_transform(s, m, false);
  EXPECT_EQ(plain.dim, 3u);
  EXPECT_EQ(plain.ids, s.ids);
  for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(dot(plain.row(i), plain.row(i)), 1.0, 1e-6);
  // Unnormalized whitened coordinates have unit sample variance.
  for (std::size_t k = 0; k < 3; ++k) {
    double ss = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      double c = 0;
      for (std::size_t j = 0; j < 6; ++j) c += double(m.direction(k)[j]) * (s.row(i)[j] - m.mean[j]);
      c /= std::sqrt(double(m.eigenvalues[k]));
      ss += c * c;
    }
    EXPECT_NEAR(ss / (s.size() - 1), 1.0, 1e-3);
  }
}

TEST(Pca, Errors) {
  const DescriptorSet s = gaussian_set(5, 8, 4);
  EXPECT_CRICA_ERROR(pca_fit(s, 9), InvalidArgument);
  EXPECT_CRICA_ERROR(pca_fit(s, 5), TooFewSamples);
  const PcaModel m = pca_fit(s, 2);
  EXPECT_CRICA_ERROR(pca_project(std::vector<float>(7, 1.0f), m), DimMismatch);
}

TEST(Pca, RankDeficientFlagged) {
  DescriptorSet s;
  for (int i = 0; i < 10; ++i) s.append({"r" + std::to_string(i), {float(i), float(2 * i), 1.0f}});
  EXPECT_TRUE(pca_fit(s, 2).rank_deficient);
  EXPECT_FALSE(pca_fit(s, 1).rank_deficient);
}

TEST(Pca, SaveLoadRoundTrip) {
  const PcaModel m = pca_fit(gaussian_set(30, 8, 5), 4);
  const auto path = std::filesystem::temp_directory_path() / "crica_test_pca.bin";
  save_pca(path, m);
  const PcaModel r = load_pca(path);
  EXPECT_EQ(r.dim, m.dim);
  EXPECT_EQ(r.out_dim, m.out_dim);
  EXPECT_EQ(r.mean, m.mean);
  EXPECT_EQ(r.basis, m.basis);
  EXPECT_EQ(r.eigenvalues, m.eigenvalues);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace crica
