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

#include "crica/crica_encoder.hpp"
#include "crica/gradcheck_suite.hpp"
#include "crica/model.hpp"
#include "test_util.hpp"

namespace crica {
namespace {

using D = double;

struct Fixture {
  CricaConfig cfg = gradcheck::tiny_encoder();
  CricaEncoderParams<D> params;
  Fixture() {
    Rng rng(3);
    params = CricaEncoderParams<D>::init(cfg, rng);
    gradcheck::randomize_params(params, 4);
  }
  Tensor<D> encode(const Tensor<D>& feats) const {
    Tape<D> t;
    ParamBinder<D> bind(t, false);
    return cross_image_encode(bind, params, cfg, t.constant(feats)).value();
  }
};

TEST(Encoder, SequenceRoundTrip) {
  Rng rng(1);
  const Tensor<float> x = random_normal<float>({3, kNumRegions, 5}, rng, 1.0);
  const auto seqs = regional_sequences(x);
  ASSERT_EQ(seqs.size(), kNumRegions);
  EXPECT_EQ(seqs[7].shape(), Shape({3, 5}));
  EXPECT_EQ(seqs[7](2, 4), x(2, 7, 4));
  EXPECT_EQ(regroup_sequences(seqs), x);
}

TEST(Encoder, SequenceAndBatchFormsAgree) {
  Fixture f;
  Rng rng(5);
  const Tensor<D> x = random_normal<D>({3, kNumRegions, 4}, rng, 1.0);
  Tape<D> t;
  ParamBinder<D> bind(t, false);
  std::vector<Var<D>> seqs;
  for (auto& s : regional_sequences(x)) seqs.push_back(t.constant(s));
  const Tensor<D> a = cross_image_encode(bind, f.params, f.cfg, seqs).value();
  const Tensor<D> b = f.encode(x);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Encoder, PermutationEquivariant) {
  Fixture f;
  Rng rng(6);
  const std::size_t b = 4, r = kNumRegions, d = 4;
  const Tensor<D> x = random_normal<D>({b, r, d}, rng, 1.0);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor<D> xp({b, r, d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < r * d; ++j) xp[i * r * d + j] = x[perm[i] * r * d + j];
  const Tensor<D> y = f.encode(x), yp = f.encode(xp);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < r * d; ++j) EXPECT_NEAR(yp[i * r * d + j], y[perm[i] * r * d + j], 1e-12);
}

TEST(Encoder, IdenticalImagesStayIdentical) {
  Fixture f;
  Rng rng(7);
  const Tensor<D> one = random_normal<D>({1, kNumRegions, 4}, rng, 1.0);
  Tensor<D> three({3, kNumRegions, 4});
  for (std::size_t i = 0; i < 3; ++i)
    std::copy(one.data().begin(), one.data().end(), three.ptr() + i * one.numel());
  const Tensor<D> y = f.encode(three);
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < one.numel(); ++j) EXPECT_NEAR(y[i * one.numel() + j], y[j], 1e-12);
  // With nothing else in the batch the result equals encoding the image alone.
  const Tensor<D> alone = f.encode(one);
  for (std::size_t j = 0; j < one.numel(); ++j) EXPECT_NEAR(alone[j], y[j], 1e-12);
}

TEST(Encoder, RegionsDoNotInteract) {
  Fixture f;
  Rng rng(8);
  const std::size_t b = 3, r = kNumRegions, d = 4;
  const Tensor<D> x = random_normal<D>({b, r, d}, rng, 1.0);
  Tensor<D> changed = x;
  for (std::size_t c = 0; c < d; ++c) changed(1, 5, c) += 0.7;
  const Tensor<D> y = f.encode(x), yc = f.encode(changed);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      D diff = 0;
      for (std::size_t c = 0; c < d; ++c) diff += std::abs(y(i, j, c) - yc(i, j, c));
      if (j == 5)
        EXPECT_GT(diff, 1e-6) << "image " << i;
      else
        EXPECT_EQ(diff, 0.0) << "image " << i << " region " << j;
    }
}

TEST(Encoder, RaggedSequencesRejected) {
  Fixture f;
  Tape<D> t;
  ParamBinder<D> bind(t, false);
  std::vector<Var<D>> seqs = {t.constant(Tensor<D>({2, 4}, 1.0)), t.constant(Tensor<D>({3, 4}, 1.0))};
  EXPECT_CRICA_ERROR(cross_image_encode(bind, f.params, f.cfg, seqs), RaggedSequences);
}

TEST(Descriptor, DimensionAndUnitNorm) {
  const ModelConfig mc = ModelConfig::desk();
  EXPECT_EQ(mc.descriptor_dim(), 14u * 64u);
  EXPECT_EQ(ModelConfig::full_scale().descriptor_dim(), 10752u);
  CricaModel<float> model(mc);
  Rng rng(9);
  const Tensor<float> out = model.describe(random_uniform<float>({3, 3, 64, 64}, rng, 0.0, 1.0));
  ASSERT_EQ(out.shape(), Shape({3, 14 * 64}));
  for (std::size_t i = 0; i < 3; ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < out.dim(1); ++j) ss += double(out(i, j)) * out(i, j);
    EXPECT_NEAR(ss, 1.0, 1e-5);
  }
}

TEST(Descriptor, FinalizeSingleImage) {
  Tensor<float> feats({2, 2}, std::vector<float>{3, 0, 0, 4});
  const GlobalDescriptor g = finalize_descriptor(feats, "img");
  EXPECT_EQ(g.image_id, "img");
  EXPECT_FLOAT_EQ(g.vector[0], 0.6f);
  EXPECT_FLOAT_EQ(g.vector[3], 0.8f);
  EXPECT_CRICA_ERROR(finalize_descriptor(Tensor<float>({2, 2}, 0.0f), "z"), ZeroVector);
}

TEST(Encoder, ParameterCounts) {
  // Two layers: attention 4(D^2+D), MLP D*H+H+H*D+D, two norms 4D.
  const std::size_t d = 768, h = 2048;
  const std::size_t layer = 4 * (d * d + d) + (d * h + h + h * d + d) + 4 * d;
  EXPECT_EQ(crica_param_count(ModelConfig::full_scale().crica), 2 * layer);
  CricaConfig off = ModelConfig::full_scale().crica;
  off.enabled = false;
  EXPECT_EQ(crica_param_count(off), 0u);
  ModelConfig mc = ModelConfig::desk();
  CricaModel<float> model(mc);
  EXPECT_EQ(model.count_params(true), param_counts(mc).trainable());
  EXPECT_EQ(model.count_params(false), param_counts(mc).frozen_backbone);
}

TEST(Encoder, DisabledEncoderFlattensRegionalFeatures) {
  ModelConfig mc = ModelConfig::desk();
  mc.crica.enabled = false;
  CricaModel<float> model(mc);
  Rng rng(10);
  const Tensor<float> images = random_uniform<float>({2, 3, 64, 64}, rng, 0.0, 1.0);
  Tape<float> t;
  ParamBinder<float> bind(t, false);
  const Tensor<float> feats = model.regional_features(bind, images).value();
  const Tensor<float> out = model.describe(images);
  for (std::size_t i = 0; i < 2; ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < feats.numel() / 2; ++j) ss += double(feats[i * feats.numel() / 2 + j]) * feats[i * feats.numel() / 2 + j];
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < 10; ++j)
      EXPECT_NEAR(out(i, j), feats[i * feats.numel() / 2 + j] * inv, 1e-5);
  }
}

TEST(GradSuite, CricaModulePasses) {
  for (const auto& r : run_gradcheck_suite("crica")) EXPECT_LT(r.max_rel_err, kGradCheckTolerance) << r.name;
}

}  // namespace
}  // namespace crica
