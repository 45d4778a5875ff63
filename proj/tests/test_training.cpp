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

#include "crica/checkpoint.hpp"
#include "crica/synth_data.hpp"
#include "crica/trainer.hpp"
#include "test_util.hpp"

namespace crica {
namespace {

namespace fs = std::filesystem;

ImageSet synthetic_set(std::size_t places, std::size_t per_place, std::uint64_t seed) {
  SynthOptions o;
  o.max_magnitude = 0.3;
  ImageSet set;
  for (std::size_t p = 0; p < places; ++p) {
    const SyntheticPlaceSpec spec = place_spec(static_cast<std::int64_t>(p), places, seed, o);
    Rng rng = derive_rng(seed, 2 * p + 1);
    PlaceImages imgs = gen_place(spec, per_place, rng, o);
    for (std::size_t i = 0; i < per_place; ++i) {
      set.meta.push_back({"p" + std::to_string(p) + "_" + std::to_string(i), spec.place, spec.geo});
      set.images.push_back(std::move(imgs.images[i]));
    }
  }
  return set;
}

RunConfig small_run() {
  RunConfig c;
  c.model.backbone.depth = 2;
  c.train.places_per_batch = 4;
  c.train.images_per_place = 4;
  c.train.epochs = 2;
  c.train.lr = 1e-3;
  c.train.seed = 5;
  return c;
}

template <typename F>
std::vector<Tensor<float>> snapshot(CricaModel<float>& m, F keep) {
  std::vector<Tensor<float>> out;
  m.for_each_param([&](const Parameter<float>& p) {
    if (keep(p)) out.push_back(p.value);
  });
  return out;
}

TEST(Training, RepeatedStepsReduceLossOnOneBatch) {
  const RunConfig cfg = small_run();
  CricaModel<float> model(cfg.model);
  Trainer<float> trainer(model, cfg.train, cfg.loss);
  const ImageSet data = synthetic_set(4, 4, 1);
  Rng rng(2);
  const TrainBatch batch = sample_batch(group_by_place(data.labels()), 4, 4, rng);
  const double first = trainer.step(data, batch);
  double last = first;
  for (int i = 0; i < 8; ++i) last = trainer.step(data, batch);
  EXPECT_GT(first, 0.0);
  EXPECT_LT(last, first);
}

TEST(Training, FrozenWeightsStayBitIdentical) {
  const RunConfig cfg = small_run();
  CricaModel<float> model(cfg.model);
  const auto frozen = [](const Parameter<float>& p) { return !p.trainable; };
  const auto live = [](const Parameter<float>& p) { return p.trainable; };
  const auto frozen_before = snapshot(model, frozen), live_before = snapshot(model, live);
  Trainer<float> trainer(model, cfg.train, cfg.loss);
  const ImageSet data = synthetic_set(8, 4, 3);
  trainer.run_epoch(data, 0);
  EXPECT_EQ(snapshot(model, frozen), frozen_before);
  EXPECT_NE(snapshot(model, live), live_before);
}

TEST(Training, GemStaysInRange) {
  RunConfig cfg = small_run();
  cfg.train.lr = 5.0;  // absurd on purpose: forces p against its bounds
  CricaModel<float> model(cfg.model);
  Trainer<float> trainer(model, cfg.train, cfg.loss);
  const ImageSet data = synthetic_set(4, 4, 4);
  trainer.run_epoch(data, 0);
  const float p = model.gem_p().value[0];
  EXPECT_GE(p, 0.5f);
  EXPECT_LE(p, 20.0f);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  const RunConfig cfg = small_run();
  const ImageSet data = synthetic_set(8, 4, 6);

  CricaModel<float> straight(cfg.model);
  Trainer<float> t1(straight, cfg.train, cfg.loss);
  t1.train(data);

  CricaModel<float> first_half(cfg.model);
  RunConfig one_epoch = cfg;
  one_epoch.train.epochs = 1;
  Trainer<float> t2(first_half, one_epoch.train, cfg.loss);
  t2.train(data);
  const fs::path p = fs::temp_directory_path() / "crica_resume.ckpt";
  save_checkpoint(p, cfg, first_half, &t2);

  Checkpoint ck = load_checkpoint(p);
  Trainer<float> t3(*ck.model, ck.config.train, ck.config.loss);
  restore_trainer(t3, *ck.optimizer);
  const auto log = t3.train(data);
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0].epoch, 1u);

  const auto all = [](const Parameter<float>&) { return true; };
  EXPECT_EQ(snapshot(*ck.model, all), snapshot(straight, all));
  EXPECT_EQ(t3.optimizer().steps(), t1.optimizer().steps());
  fs::remove(p);
}

TEST(Training, LearningRateFollowsSchedule) {
  RunConfig cfg = small_run();
  cfg.train.epochs = 4;
  cfg.train.decay_every = 2;
  CricaModel<float> model(cfg.model);
  Trainer<float> trainer(model, cfg.train, cfg.loss);
  const auto log = trainer.train(synthetic_set(4, 4, 7));
  ASSERT_EQ(log.size(), 4u);
  EXPECT_DOUBLE_EQ(log[0].lr, 1e-3);
  EXPECT_DOUBLE_EQ(log[1].lr, 1e-3);
  EXPECT_DOUBLE_EQ(log[2].lr, 5e-4);
  EXPECT_DOUBLE_EQ(log[3].lr, 5e-4);
}

TEST(Training, EarlyStoppingOnValidation) {
  RunConfig cfg = small_run();
  cfg.train.epochs = 20;
  cfg.train.patience = 1;
  cfg.train.lr = 1e-12;  // validation recall cannot improve
  CricaModel<float> model(cfg.model);
  Trainer<float> trainer(model, cfg.train, cfg.loss);
  const ImageSet val = synthetic_set(4, 2, 9);
  const auto log = trainer.train(synthetic_set(4, 4, 8), &val);
  EXPECT_TRUE(trainer.progress().stopped_early);
  EXPECT_EQ(log.size(), 2u);
  EXPECT_TRUE(log[0].val_r1.has_value());
}

TEST(Extraction, BatchSizeDoesNotChangeDescriptorsWithoutEncoder) {
  RunConfig cfg = small_run();
  cfg.model.crica.enabled = false;
  CricaModel<float> model(cfg.model);
  const ImageSet data = synthetic_set(3, 2, 10);
  const DescriptorSet a = extract_descriptors(model, data, 1), b = extract_descriptors(model, data, 4);
  ASSERT_EQ(a.ids, b.ids);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-5);
}

TEST(Extraction, EncoderMakesDescriptorsBatchDependent) {
  const RunConfig cfg = small_run();
  CricaModel<float> model(cfg.model);
  // Untrained encoder weights are small; randomize them so the effect is visible.
  Rng rng(11);
  for (auto& l : model.encoder().layers)
    l.for_each([&](Parameter<float>& p) {
      if (p.name.find("_w") != std::string::npos) p.value = random_normal<float>(p.value.shape(), rng, 0.3);
    });
  const ImageSet data = synthetic_set(3, 2, 12);
  const DescriptorSet a = extract_descriptors(model, data, 1), b = extract_descriptors(model, data, 6);
  double diff = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) diff += std::abs(a.values[i] - b.values[i]);
  EXPECT_GT(diff, 1e-3);
}

}  // namespace
}  // namespace crica
