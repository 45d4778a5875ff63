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

#include <filesystem>
#include <sstream>

#include "crica/checkpoint.hpp"
#include "crica/dataset.hpp"
#include "crica/descriptor_set.hpp"
#include "test_util.hpp"

namespace crica {
namespace {

namespace fs = std::filesystem;

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("crica_io_" + name); }

TEST(Manifest, ParsesBothGeotagFormsAndComments) {
  const Manifest m = parse_manifest(
      "# header\n"
      "a.img 3 10.5 -2\n"
      "\n"
      "  b.img 4 17  \n"
      "# trailing comment\n");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].path, "a.img");
  EXPECT_EQ(m[0].place, 3);
  EXPECT_EQ(m[0].geo.kind, Geotag::Kind::Planar);
  EXPECT_EQ(m[0].geo.x, 10.5);
  EXPECT_EQ(m[0].geo.y, -2.0);
  EXPECT_EQ(m[1].geo.kind, Geotag::Kind::Frame);
  EXPECT_EQ(m[1].geo.frame, 17);
}

TEST(Manifest, RoundTripIsExact) {
  Manifest m = {{"x/1.img", 0, Geotag::planar(0.1, 1e-7)},
                {"x/2.img", 12, Geotag::planar(123456.789, -0.3)},
                {"x/3.img", 5, Geotag::at_frame(-4)}};
  const Manifest r = parse_manifest(format_manifest(m));
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r[i].path, m[i].path);
    EXPECT_EQ(r[i].place, m[i].place);
    EXPECT_EQ(r[i].geo.x, m[i].geo.x);
    EXPECT_EQ(r[i].geo.y, m[i].geo.y);
    EXPECT_EQ(r[i].geo.frame, m[i].geo.frame);
  }
}

TEST(Manifest, MalformedLines) {
  EXPECT_CRICA_ERROR(parse_manifest("a.img 1\n"), MissingMetadata);
  EXPECT_CRICA_ERROR(parse_manifest("a.img one 2 3\n"), MissingMetadata);
  EXPECT_CRICA_ERROR(parse_manifest("a.img 1 2.5x 3\n"), MissingMetadata);
}

TEST(Split, ParseAndSelect) {
  const SplitMap s = parse_split("a train\nb val\nc query\nd db\n");
  EXPECT_EQ(s.at("c"), Role::Query);
  const Manifest m = {{"a", 0, {}}, {"b", 0, {}}, {"c", 1, {}}, {"d", 1, {}}};
  EXPECT_EQ(select_role(m, s, Role::Database).front().path, "d");
  EXPECT_CRICA_ERROR(parse_split("a test\n"), MissingMetadata);
  EXPECT_CRICA_ERROR(select_role({{"zz", 0, {}}}, s, Role::Train), MissingMetadata);
}

TEST(Image, RoundTripAndLayout) {
  Tensor<float> img({3, 2, 3});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = 0.1f * static_cast<float>(i);
  const fs::path p = tmp("img.img");
  write_image(p, img);
  EXPECT_EQ(fs::file_size(p), 8u + 4u * 18u);
  const std::string raw = io::read_text(p);
  EXPECT_EQ(raw[0], 2);  // little-endian height first
  EXPECT_EQ(raw[4], 3);
  EXPECT_EQ(read_image(p), img);
  fs::resize_file(p, 20);
  EXPECT_CRICA_ERROR(read_image(p), IoError);
  fs::remove(p);
}

TEST(Descriptors, RoundTripAndTruncation) {
  DescriptorSet s;
  s.append({"first", {1.0f, 0.0f, 0.0f}});
  s.append({"second with space", {0.0f, 0.6f, 0.8f}});
  std::stringstream buf;
  write_descriptors(buf, s);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "CRCA");
  std::stringstream in(bytes);
  const DescriptorSet r = read_descriptors(in);
  EXPECT_EQ(r.dim, 3u);
  EXPECT_EQ(r.ids, s.ids);
  EXPECT_EQ(r.values, s.values);
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_CRICA_ERROR(read_descriptors(cut), IoError);
  std::stringstream bad("XXXX" + bytes.substr(4));
  EXPECT_CRICA_ERROR(read_descriptors(bad), IoError);
  std::vector<float> zero(3, 0.0f);
  EXPECT_CRICA_ERROR(normalize_row(zero), ZeroVector);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  RunConfig c;
  c.train.epochs = 7;
  c.train.lr = 3e-4;
  c.model.crica.enabled = false;
  c.loss.beta = 40;
  const RunConfig r = parse_run_config(to_json(c).dump());
  EXPECT_EQ(to_json(r), to_json(c));
  EXPECT_EQ(r.train.epochs, 7u);
  EXPECT_FALSE(r.model.crica.enabled);
  EXPECT_CRICA_ERROR(parse_run_config(R"({"version": 1, "trian": {}})"), ConfigError);
  EXPECT_CRICA_ERROR(parse_run_config(R"({"version": 1, "train": {"epoch": 3}})"), ConfigError);
  EXPECT_CRICA_ERROR(parse_run_config(R"({"version": 2})"), ConfigError);
  EXPECT_CRICA_ERROR(parse_run_config(R"({"version": 1, "train": {"lr": "fast"}})"), ConfigError);
  EXPECT_CRICA_ERROR(parse_run_config("{not json"), ConfigError);
  EXPECT_CRICA_ERROR(parse_run_config(R"({"version": 1, "model": {"backbone": {"heads": 5}}})"),
                     ConfigError);
}

TEST(Checkpoint, RoundTripWithOptimizerState) {
  RunConfig cfg;
  cfg.model.backbone.depth = 1;
  cfg.train.places_per_batch = 2;
  cfg.train.images_per_place = 2;
  CricaModel<float> model(cfg.model);
  Trainer<float> trainer(model, cfg.train, cfg.loss);
  // Give the optimizer non-trivial state with one real step.
  ImageSet data;
  Rng rng(1);
  for (int p = 0; p < 2; ++p)
    for (int k = 0; k < 2; ++k) {
      data.meta.push_back({"i" + std::to_string(2 * p + k), p, Geotag::planar(100.0 * p, 0)});
      data.images.push_back(random_uniform<float>({3, 64, 64}, rng, 0.0, 1.0));
    }
  trainer.run_epoch(data, 0);
  trainer.progress().next_epoch = 1;
  trainer.progress().best_r5 = 42.5;

  const fs::path p = tmp("ckpt.bin");
  save_checkpoint(p, cfg, model, &trainer);
  Checkpoint ck = load_checkpoint(p);
  EXPECT_EQ(to_json(ck.config), to_json(cfg));
  std::vector<const Parameter<float>*> a, b;
  model.for_each_param([&](const Parameter<float>& x) { a.push_back(&x); });
  ck.model->for_each_param([&](const Parameter<float>& x) { b.push_back(&x); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
    EXPECT_EQ(a[i]->trainable, b[i]->trainable);
  }
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->step, 1u);
  EXPECT_EQ(ck.optimizer->progress.next_epoch, 1u);
  EXPECT_EQ(ck.optimizer->progress.best_r5, 42.5);
  ASSERT_EQ(ck.optimizer->m.size(), trainer.optimizer().first_moments().size());
  for (std::size_t i = 0; i < ck.optimizer->m.size(); ++i) {
    EXPECT_EQ(ck.optimizer->m[i], trainer.optimizer().first_moments()[i]);
    EXPECT_EQ(ck.optimizer->v[i], trainer.optimizer().second_moments()[i]);
  }

  // Weights-only checkpoints carry no optimizer.
  save_checkpoint(p, cfg, model);
  EXPECT_FALSE(load_checkpoint(p).optimizer.has_value());
  fs::remove(p);
}

TEST(Checkpoint, CorruptionIsDetected) {
  RunConfig cfg;
  cfg.model.backbone.depth = 1;
  CricaModel<float> model(cfg.model);
  const fs::path p = tmp("ckpt_bad.bin");
  save_checkpoint(p, cfg, model);
  const std::string good = io::read_text(p);

  io::write_text(p, good.substr(0, good.size() / 2));
  EXPECT_CRICA_ERROR(load_checkpoint(p), BadCheckpoint);
  io::write_text(p, "CRCX" + good.substr(4));
  EXPECT_CRICA_ERROR(load_checkpoint(p), BadCheckpoint);
  EXPECT_CRICA_ERROR(load_checkpoint(tmp("does_not_exist.bin")), BadCheckpoint);

  // A checkpoint whose config disagrees with the stored tensors.
  RunConfig other = cfg;
  other.model.backbone.depth = 2;
  std::string swapped = good;
  const std::string from = to_json(cfg).dump(), to = to_json(other).dump();
  ASSERT_EQ(from.size(), to.size());
  swapped.replace(swapped.find(from), from.size(), to);
  io::write_text(p, swapped);
  EXPECT_CRICA_ERROR(load_checkpoint(p), BadCheckpoint);
  fs::remove(p);
}

}  // namespace
}  // namespace crica
