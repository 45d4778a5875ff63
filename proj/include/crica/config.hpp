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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "crica/error.hpp"

namespace crica {

using Json = nlohmann::ordered_json;

/// MulConv adapter widths. The three path widths must add up to the
/// bottleneck width so that the concatenated conv output can take the skip.
struct AdapterConfig {
  std::size_t embed_dim = 768;
  double bottleneck_ratio = 0.5;
  std::size_t reduce_channels = 24;
  std::size_t path_out_1x1 = 192;
  std::size_t path_out_3x3 = 96;
  std::size_t path_out_5x5 = 96;

  std::size_t hidden() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(embed_dim) * bottleneck_ratio));
  }

  void validate() const {
    CRICA_CHECK(embed_dim > 0 && bottleneck_ratio > 0.0, ErrorCode::ConfigError,
                "adapter needs positive width and ratio");
    CRICA_CHECK(hidden() > 0 && reduce_channels > 0, ErrorCode::ConfigError,
                "adapter bottleneck collapses to zero channels");
    CRICA_CHECK(path_out_1x1 + path_out_3x3 + path_out_5x5 == hidden(), ErrorCode::ConfigError,
                "adapter paths ", path_out_1x1, "+", path_out_3x3, "+", path_out_5x5,
                " must sum to the bottleneck width ", hidden());
  }
};

struct BackboneConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 14;
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  double mlp_ratio = 4.0;
  AdapterConfig adapter;
  double adapter_scale = 0.2;
  bool final_norm = false;
  double ln_eps = 1e-6;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(embed_dim) * mlp_ratio));
  }

  void validate() const {
    CRICA_CHECK(patch_size > 0 && image_size % patch_size == 0, ErrorCode::ConfigError,
                "image size ", image_size, " is not a multiple of patch size ", patch_size);
    CRICA_CHECK(grid() >= 3, ErrorCode::ConfigError, "patch grid ", grid(),
                " is too small for a 3x3 pyramid level");
    CRICA_CHECK(heads > 0 && embed_dim % heads == 0, ErrorCode::ConfigError, "embed dim ",
                embed_dim, " not divisible by ", heads, " heads");
    CRICA_CHECK(depth > 0 && mlp_hidden() > 0, ErrorCode::ConfigError, "empty backbone");
    CRICA_CHECK(adapter.embed_dim == embed_dim, ErrorCode::ConfigError, "adapter width ",
                adapter.embed_dim, " differs from backbone width ", embed_dim);
    adapter.validate();
  }
};

struct CricaConfig {
  bool enabled = true;
  std::size_t layers = 2;
  std::size_t embed_dim = 768;
  std::size_t heads = 12;
  std::size_t mlp_hidden = 2048;
  double ln_eps = 1e-5;

  void validate() const {
    if (!enabled) return;
    CRICA_CHECK(layers >= 1, ErrorCode::ConfigError, "cross-image encoder needs a layer");
    CRICA_CHECK(heads > 0 && embed_dim % heads == 0, ErrorCode::ConfigError, "encoder width ",
                embed_dim, " not divisible by ", heads, " heads");
    CRICA_CHECK(mlp_hidden > 0, ErrorCode::ConfigError, "encoder MLP width must be positive");
  }
};

struct GemConfig {
  double init_p = 3.0;
  double min_p = 0.5;
  double max_p = 20.0;
  double eps = 1e-6;
};

struct ModelConfig {
  BackboneConfig backbone;
  CricaConfig crica;
  GemConfig gem;
  std::uint64_t seed = 0;

  std::size_t embed_dim() const { return backbone.embed_dim; }
  std::size_t descriptor_dim() const { return 14 * backbone.embed_dim; }

  void validate() const {
    backbone.validate();
    crica.validate();
    CRICA_CHECK(!crica.enabled || crica.embed_dim == backbone.embed_dim, ErrorCode::ConfigError,
                "encoder width ", crica.embed_dim, " differs from backbone width ",
                backbone.embed_dim);
    CRICA_CHECK(gem.min_p > 0.0 && gem.min_p <= gem.init_p && gem.init_p <= gem.max_p,
                ErrorCode::ConfigError, "GeM p range invalid");
  }

  /// ViT-B/14 at 224 px with 192/96/96 adapters and a 2-layer encoder.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.validate();
    return c;
  }

  /// 64 px images, 8 px patches, width 64, four blocks.
  static ModelConfig desk() {
    ModelConfig c;
    c.backbone.image_size = 64;
    c.backbone.patch_size = 8;
    c.backbone.embed_dim = 64;
    c.backbone.depth = 4;
    c.backbone.heads = 4;
    c.backbone.adapter.embed_dim = 64;
    c.backbone.adapter.reduce_channels = 4;
    c.backbone.adapter.path_out_1x1 = 16;
    c.backbone.adapter.path_out_3x3 = 8;
    c.backbone.adapter.path_out_5x5 = 8;
    c.crica.embed_dim = 64;
    c.crica.heads = 4;
    c.crica.mlp_hidden = 256;
    c.validate();
    return c;
  }
};

struct MsHyper {
  double alpha = 1.0;
  double beta = 50.0;
  double lambda = 0.0;
  double margin = 0.1;

  void validate() const {
    CRICA_CHECK(alpha > 0.0 && beta > 0.0, ErrorCode::ConfigError, "MS loss needs alpha, beta > 0");
  }
};

struct TrainConfig {
  std::size_t places_per_batch = 16;
  std::size_t images_per_place = 4;
  std::size_t epochs = 10;
  double lr = 1e-4;
  double lr_decay = 0.5;
  std::size_t decay_every = 3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t patience = 0;  // 0 disables early stopping
  std::size_t inference_batch = 16;
  std::uint64_t seed = 0;

  void validate() const {
    CRICA_CHECK(places_per_batch >= 1 && images_per_place >= 2, ErrorCode::ConfigError,
                "a batch needs at least one place with two images");
    CRICA_CHECK(lr > 0.0 && lr_decay > 0.0 && decay_every >= 1, ErrorCode::ConfigError,
                "invalid learning-rate schedule");
    CRICA_CHECK(inference_batch >= 1, ErrorCode::ConfigError, "inference batch must be >= 1");
  }

  /// Step schedule: lr * decay^(epoch / decay_every).
  double lr_at(std::size_t epoch) const {
    return lr * std::pow(lr_decay, static_cast<double>(epoch / decay_every));
  }
};

/// Everything a training run needs, as stored in a config file.
struct RunConfig {
  static constexpr int kVersion = 1;
  ModelConfig model = ModelConfig::desk();
  MsHyper loss;
  TrainConfig train;

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON mapping. Readers reject keys they do not know.

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known,
                           const char* where) {
  CRICA_CHECK(j.is_object(), ErrorCode::ConfigError, where, " must be an object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& item : j.items()) {
    CRICA_CHECK(allowed.count(item.key()) == 1, ErrorCode::ConfigError, "unknown key '",
                item.key(), "' in ", where);
  }
}

template <typename V>
void read_opt(const Json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception& e) {
    detail::fail(ErrorCode::ConfigError, "bad value for '", key, "': ", e.what());
  }
}

}  // namespace detail

inline Json to_json(const AdapterConfig& c) {
  return Json{{"embed_dim", c.embed_dim},         {"bottleneck_ratio", c.bottleneck_ratio},
              {"reduce_channels", c.reduce_channels}, {"path_out_1x1", c.path_out_1x1},
              {"path_out_3x3", c.path_out_3x3},   {"path_out_5x5", c.path_out_5x5}};
}

inline void from_json(const Json& j, AdapterConfig& c) {
  detail::reject_unknown(j, {"embed_dim", "bottleneck_ratio", "reduce_channels", "path_out_1x1",
                             "path_out_3x3", "path_out_5x5"},
                         "adapter");
  detail::read_opt(j, "embed_dim", c.embed_dim);
  detail::read_opt(j, "bottleneck_ratio", c.bottleneck_ratio);
  detail::read_opt(j, "reduce_channels", c.reduce_channels);
  detail::read_opt(j, "path_out_1x1", c.path_out_1x1);
  detail::read_opt(j, "path_out_3x3", c.path_out_3x3);
  detail::read_opt(j, "path_out_5x5", c.path_out_5x5);
}

inline Json to_json(const BackboneConfig& c) {
  return Json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
              {"embed_dim", c.embed_dim},   {"depth", c.depth},
              {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
              {"adapter", to_json(c.adapter)}, {"adapter_scale", c.adapter_scale},
              {"final_norm", c.final_norm}, {"ln_eps", c.ln_eps}};
}

inline void from_json(const Json& j, BackboneConfig& c) {
  detail::reject_unknown(j, {"image_size", "patch_size", "embed_dim", "depth", "heads",
                             "mlp_ratio", "adapter", "adapter_scale", "final_norm", "ln_eps"},
                         "backbone");
  detail::read_opt(j, "image_size", c.image_size);
  detail::read_opt(j, "patch_size", c.patch_size);
  detail::read_opt(j, "embed_dim", c.embed_dim);
  detail::read_opt(j, "depth", c.depth);
  detail::read_opt(j, "heads", c.heads);
  detail::read_opt(j, "mlp_ratio", c.mlp_ratio);
  if (j.contains("adapter")) from_json(j.at("adapter"), c.adapter);
  detail::read_opt(j, "adapter_scale", c.adapter_scale);
  detail::read_opt(j, "final_norm", c.final_norm);
  detail::read_opt(j, "ln_eps", c.ln_eps);
}

inline Json to_json(const CricaConfig& c) {
  return Json{{"enabled", c.enabled}, {"layers", c.layers},         {"embed_dim", c.embed_dim},
              {"heads", c.heads},     {"mlp_hidden", c.mlp_hidden}, {"ln_eps", c.ln_eps}};
}

inline void from_json(const Json& j, CricaConfig& c) {
  detail::reject_unknown(j, {"enabled", "layers", "embed_dim", "heads", "mlp_hidden", "ln_eps"},
                         "crica");
  detail::read_opt(j, "enabled", c.enabled);
  detail::read_opt(j, "layers", c.layers);
  detail::read_opt(j, "embed_dim", c.embed_dim);
  detail::read_opt(j, "heads", c.heads);
  detail::read_opt(j, "mlp_hidden", c.mlp_hidden);
  detail::read_opt(j, "ln_eps", c.ln_eps);
}

inline Json to_json(const GemConfig& c) {
  return Json{{"init_p", c.init_p}, {"min_p", c.min_p}, {"max_p", c.max_p}, {"eps", c.eps}};
}

inline void from_json(const Json& j, GemConfig& c) {
  detail::reject_unknown(j, {"init_p", "min_p", "max_p", "eps"}, "gem");
  detail::read_opt(j, "init_p", c.init_p);
  detail::read_opt(j, "min_p", c.min_p);
  detail::read_opt(j, "max_p", c.max_p);
  detail::read_opt(j, "eps", c.eps);
}

inline Json to_json(const ModelConfig& c) {
  return Json{{"backbone", to_json(c.backbone)},
              {"crica", to_json(c.crica)},
              {"gem", to_json(c.gem)},
              {"seed", c.seed}};
}

inline void from_json(const Json& j, ModelConfig& c) {
  detail::reject_unknown(j, {"backbone", "crica", "gem", "seed"}, "model");
  if (j.contains("backbone")) from_json(j.at("backbone"), c.backbone);
  if (j.contains("crica")) from_json(j.at("crica"), c.crica);
  if (j.contains("gem")) from_json(j.at("gem"), c.gem);
  detail::read_opt(j, "seed", c.seed);
}

inline Json to_json(const MsHyper& c) {
  return Json{{"alpha", c.alpha}, {"beta", c.beta}, {"lambda", c.lambda}, {"margin", c.margin}};
}

inline void from_json(const Json& j, MsHyper& c) {
  detail::reject_unknown(j, {"alpha", "beta", "lambda", "margin"}, "loss");
  detail::read_opt(j, "alpha", c.alpha);
  detail::read_opt(j, "beta", c.beta);
  detail::read_opt(j, "lambda", c.lambda);
  detail::read_opt(j, "margin", c.margin);
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"places_per_batch", c.places_per_batch},
              {"images_per_place", c.images_per_place},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"lr_decay", c.lr_decay},
              {"decay_every", c.decay_every},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"patience", c.patience},
              {"inference_batch", c.inference_batch},
              {"seed", c.seed}};
}

inline void from_json(const Json& j, TrainConfig& c) {
  detail::reject_unknown(j, {"places_per_batch", "images_per_place", "epochs", "lr", "lr_decay",
                             "decay_every", "adam_beta1", "adam_beta2", "adam_eps", "patience",
                             "inference_batch", "seed"},
                         "train");
  detail::read_opt(j, "places_per_batch", c.places_per_batch);
  detail::read_opt(j, "images_per_place", c.images_per_place);
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "lr", c.lr);
  detail::read_opt(j, "lr_decay", c.lr_decay);
  detail::read_opt(j, "decay_every", c.decay_every);
  detail::read_opt(j, "adam_beta1", c.adam_beta1);
  detail::read_opt(j, "adam_beta2", c.adam_beta2);
  detail::read_opt(j, "adam_eps", c.adam_eps);
  detail::read_opt(j, "patience", c.patience);
  detail::read_opt(j, "inference_batch", c.inference_batch);
  detail::read_opt(j, "seed", c.seed);
}

inline Json to_json(const RunConfig& c) {
  return Json{{"version", RunConfig::kVersion},
              {"model", to_json(c.model)},
              {"loss", to_json(c.loss)},
              {"train", to_json(c.train)}};
}

inline void from_json(const Json& j, RunConfig& c) {
  detail::reject_unknown(j, {"version", "model", "loss", "train"}, "config");
  int version = 0;
  detail::read_opt(j, "version", version);
  CRICA_CHECK(version == RunConfig::kVersion, ErrorCode::ConfigError, "unsupported config version ",
              version);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  if (j.contains("train")) from_json(j.at("train"), c.train);
}

inline RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    detail::fail(ErrorCode::ConfigError, "config is not valid JSON: ", e.what());
  }
  RunConfig c;
  from_json(j, c);
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  CRICA_CHECK(in.good(), ErrorCode::IoError, "cannot open config ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  try {
    from_json(Json::parse(text), c);
  } catch (const nlohmann::json::exception& e) {
    detail::fail(ErrorCode::BadCheckpoint, "model config is not valid JSON: ", e.what());
  }
  c.validate();
  return c;
}

}  // namespace crica
