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
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "crica/dataset.hpp"
#include "crica/random.hpp"

// Procedural place generator. Each place is a seeded canvas of gradients,
// rectangles and gratings; its images are jittered crops of that canvas under
// photometric changes. Every random draw comes from a stream derived from
// (master seed, place id), so places can be generated in any order.
namespace crica {

struct SynthOptions {
  std::size_t crop = 64;
  std::size_t canvas = 112;
  double max_shift = 0.25;  // fraction of the crop
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_magnitude = 1.0;  // condition transform strength is U[0, max]
  double spacing = 100.0;      // meters between neighboring places
};

struct SyntheticPlaceSpec {
  std::int64_t place = 0;
  std::uint64_t seed = 0;
  Geotag geo;
  std::size_t canvas = 112;
};

struct ConditionTransform {
  enum class Kind { Brightness, Contrast, Tint, Noise };
  Kind kind = Kind::Brightness;
  double magnitude = 0.0;
};

/// Crop window in canvas pixels: center and side length.
struct CropWindow {
  double cx = 0.0;
  double cy = 0.0;
  double size = 0.0;
};

namespace detail {

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

inline double truncated_normal(Rng& rng, double bound) {
  for (;;) {
    const double z = rng.normal();
    if (std::abs(z) <= bound) return z;
  }
}

}  // namespace detail

/// Renders the place's canvas [3 x C x C] with intensities in [0, 1].
inline Tensor<float> render_place_canvas(const SyntheticPlaceSpec& spec) {
  const std::size_t c = spec.canvas;
  Rng rng(spec.seed);
  std::vector<double> img(3 * c * c);
  const auto at = [&](std::size_t ch, std::size_t y, std::size_t x) -> double& {
    return img[(ch * c + y) * c + x];
  };

  // Oriented background gradient.
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::array<double, 3> base{}, slope{};
  for (int ch = 0; ch < 3; ++ch) {
    base[ch] = rng.uniform(0.2, 0.8);
    slope[ch] = rng.uniform(-0.5, 0.5);
  }
  for (std::size_t y = 0; y < c; ++y)
    for (std::size_t x = 0; x < c; ++x) {
      const double t = (std::cos(theta) * (x + 0.5) + std::sin(theta) * (y + 0.5)) / c - 0.5;
      for (int ch = 0; ch < 3; ++ch) at(ch, y, x) = base[ch] + slope[ch] * t;
    }

  // Periodic textures, each confined to a soft disc.
  const std::size_t gratings = 2 + rng.below(3);
  for (std::size_t g = 0; g < gratings; ++g) {
    const double freq = rng.uniform(0.05, 0.35);
    const double orient = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double gx = rng.uniform(0.0, static_cast<double>(c));
    const double gy = rng.uniform(0.0, static_cast<double>(c));
    const double radius = rng.uniform(0.15, 0.45) * c;
    std::array<double, 3> amp{};
    for (int ch = 0; ch < 3; ++ch) amp[ch] = rng.uniform(-0.35, 0.35);
    for (std::size_t y = 0; y < c; ++y)
      for (std::size_t x = 0; x < c; ++x) {
        const double dx = x + 0.5 - gx, dy = y + 0.5 - gy;
        const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
        const double u = std::cos(orient) * (x + 0.5) + std::sin(orient) * (y + 0.5);
        const double s = std::sin(2.0 * std::numbers::pi * freq * u + phase);
        for (int ch = 0; ch < 3; ++ch) at(ch, y, x) += w * amp[ch] * s;
      }
  }

  // Opaque and translucent rectangles.
  const std::size_t rects = 5 + rng.below(6);
  for (std::size_t r = 0; r < rects; ++r) {
    const double w = rng.uniform(0.08, 0.35) * c, h = rng.uniform(0.08, 0.35) * c;
    const double x0 = rng.uniform(-0.1 * c, c - 0.5 * w), y0 = rng.uniform(-0.1 * c, c - 0.5 * h);
    const double alpha = rng.uniform(0.5, 1.0);
    std::array<double, 3> color{};
    for (int ch = 0; ch < 3; ++ch) color[ch] = rng.uniform();
    const auto lo_x = static_cast<std::size_t>(std::max(0.0, std::floor(x0)));
    const auto lo_y = static_cast<std::size_t>(std::max(0.0, std::floor(y0)));
    const auto hi_x = static_cast<std::size_t>(std::clamp(std::ceil(x0 + w), 0.0, double(c)));
    const auto hi_y = static_cast<std::size_t>(std::clamp(std::ceil(y0 + h), 0.0, double(c)));
    for (std::size_t y = lo_y; y < hi_y; ++y)
      for (std::size_t x = lo_x; x < hi_x; ++x)
        for (int ch = 0; ch < 3; ++ch)
          at(ch, y, x) = (1.0 - alpha) * at(ch, y, x) + alpha * color[ch];
  }

  Tensor<float> out({3, c, c});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = detail::clamp01(img[i]);
  return out;
}

/// Bilinear resampling of a square window of `canvas` to crop x crop.
inline Tensor<float> crop_window(const Tensor<float>& canvas, const CropWindow& win,
                                 std::size_t crop) {
  const std::size_t ch = canvas.dim(0), h = canvas.dim(1), w = canvas.dim(2);
  const double x_lo = win.cx - win.size / 2.0, y_lo = win.cy - win.size / 2.0;
  CRICA_CHECK(x_lo >= 0.0 && y_lo >= 0.0 && x_lo + win.size <= static_cast<double>(w) &&
                  y_lo + win.size <= static_cast<double>(h),
              ErrorCode::CanvasTooSmall, "crop window leaves the ", h, "x", w, " canvas");
  Tensor<float> out({ch, crop, crop});
  const double step = win.size / static_cast<double>(crop);
  for (std::size_t i = 0; i < crop; ++i) {
    const double sy = std::clamp(y_lo + (i + 0.5) * step - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < crop; ++j) {
      const double sx =
          std::clamp(x_lo + (j + 0.5) * step - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t k = 0; k < ch; ++k) {
        const double top = (1 - fx) * canvas(k, y0, x0) + fx * canvas(k, y0, x1);
        const double bot = (1 - fx) * canvas(k, y1, x0) + fx * canvas(k, y1, x1);
        out(k, i, j) = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

/// Photometric change; magnitude 0 leaves the image untouched.
inline Tensor<float> apply_condition_transform(const Tensor<float>& image,
                                               const ConditionTransform& t, Rng& rng) {
  using Kind = ConditionTransform::Kind;
  Tensor<float> out = image;
  const double m = t.magnitude;
  const std::size_t channels = image.dim(0), plane = image.numel() / channels;
  switch (t.kind) {
    case Kind::Brightness: {
      const double delta = m * rng.uniform(-0.4, 0.4);
      for (float& v : out.data()) v = detail::clamp01(v + delta);
      break;
    }
    case Kind::Contrast: {
      const double factor = 1.0 + m * rng.uniform(-0.6, 0.6);
      double mean = 0.0;
      for (float v : image.data()) mean += v;
      mean /= static_cast<double>(image.numel());
      for (float& v : out.data()) v = detail::clamp01(mean + (v - mean) * factor);
      break;
    }
    case Kind::Tint: {
      for (std::size_t c = 0; c < channels; ++c) {
        const double gain = 1.0 + m * rng.uniform(-0.3, 0.3);
        for (std::size_t i = 0; i < plane; ++i)
          out[c * plane + i] = detail::clamp01(image[c * plane + i] * gain);
      }
      break;
    }
    case Kind::Noise: {
      // Standard normal truncated at 3 sigma, scaled by m.
      for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = detail::clamp01(image[i] + m * detail::truncated_normal(rng, 3.0));
      break;
    }
  }
  return out;
}

inline void check_canvas(const SynthOptions& o) {
  const double need = o.crop * o.max_scale + 2.0 * o.max_shift * o.crop;
  CRICA_CHECK(static_cast<double>(o.canvas) >= need, ErrorCode::CanvasTooSmall, "canvas ",
              o.canvas, " cannot hold crops of ", o.crop, " (needs ", need, ")");
}

struct PlaceImages {
  std::int64_t place = 0;
  Geotag geo;
  std::vector<Tensor<float>> images;
  std::vector<CropWindow> windows;
  std::vector<ConditionTransform> conditions;
};

/// K jittered, photometrically altered crops of one place.
inline PlaceImages gen_place(const SyntheticPlaceSpec& spec, std::size_t k, Rng& rng,
                             const SynthOptions& opts = {}) {
  CRICA_CHECK(k >= 1, ErrorCode::InvalidArgument, "need at least one image per place");
  SynthOptions o = opts;
  o.canvas = spec.canvas;
  check_canvas(o);
  const Tensor<float> canvas = render_place_canvas(spec);
  PlaceImages out{spec.place, spec.geo, {}, {}, {}};
  const double mid = static_cast<double>(spec.canvas) / 2.0;
  for (std::size_t i = 0; i < k; ++i) {
    CropWindow win;
    win.size = o.crop * rng.uniform(o.min_scale, o.max_scale);
    win.cx = mid + o.crop * rng.uniform(-o.max_shift, o.max_shift);
    win.cy = mid + o.crop * rng.uniform(-o.max_shift, o.max_shift);
    ConditionTransform t;
    t.kind = static_cast<ConditionTransform::Kind>(rng.below(4));
    t.magnitude = rng.uniform(0.0, o.max_magnitude);
    out.images.push_back(apply_condition_transform(crop_window(canvas, win, o.crop), t, rng));
    out.windows.push_back(win);
    out.conditions.push_back(t);
  }
  return out;
}

struct DatasetOptions {
  std::size_t places = 50;        // evaluation places: 1 query + K-1 database images each
  std::size_t per_place = 4;
  std::size_t train_places = 0;   // extra places used only for training
  std::size_t val_places = 0;     // extra places used for validation
  std::uint64_t seed = 0;
  SynthOptions synth;
};

struct GeneratedDataset {
  Manifest manifest;
  SplitMap split;
  std::vector<std::string> split_order;  // image ids in generation order
};

/// Place layout: a square lattice with `spacing` meters between places,
/// each position jittered by up to 10% of the spacing per axis.
inline SyntheticPlaceSpec place_spec(std::int64_t place, std::size_t total, std::uint64_t seed,
                                     const SynthOptions& o) {
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(total))));
  const auto idx = static_cast<std::size_t>(place);
  SyntheticPlaceSpec s;
  s.place = place;
  Rng rng = derive_rng(seed, 2 * idx);
  s.seed = rng.next_u64();
  // Jitter of at most a tenth of the spacing keeps places well apart.
  const double jx = rng.uniform(-0.1, 0.1) * o.spacing, jy = rng.uniform(-0.1, 0.1) * o.spacing;
  s.geo = Geotag::planar(static_cast<double>(idx % side) * o.spacing + jx,
                         static_cast<double>(idx / side) * o.spacing + jy);
  s.canvas = o.canvas;
  return s;
}

/// Writes images under `root/images`, plus `manifest.txt` and `split.txt`.
inline GeneratedDataset gen_dataset(const DatasetOptions& opts, const std::filesystem::path& root) {
  CRICA_CHECK(opts.places >= 4, ErrorCode::InvalidArgument, "need at least 4 places, got ",
              opts.places);
  CRICA_CHECK(opts.per_place >= 2, ErrorCode::InvalidArgument,
              "need at least 2 images per place (one query, one database)");
  check_canvas(opts.synth);
  const std::size_t total = opts.places + opts.train_places + opts.val_places;
  GeneratedDataset ds;
  for (std::size_t p = 0; p < total; ++p) {
    const auto place = static_cast<std::int64_t>(p);
    const SyntheticPlaceSpec spec = place_spec(place, total, opts.seed, opts.synth);
    Rng rng = derive_rng(opts.seed, 2 * p + 1);
    const PlaceImages imgs = gen_place(spec, opts.per_place, rng, opts.synth);
    for (std::size_t i = 0; i < imgs.images.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "images/p%05zu_%02zu.img", p, i);
      write_image(root / name, imgs.images[i]);
      ds.manifest.push_back({name, place, spec.geo});
      Role role = Role::Train;
      if (p < opts.places)
        role = i == 0 ? Role::Query : Role::Database;
      else if (p >= opts.places + opts.train_places)
        role = Role::Val;
      ds.split[name] = role;
      ds.split_order.push_back(name);
    }
  }
  io::write_text(root / "manifest.txt", format_manifest(ds.manifest));
  std::string split_text;
  for (const auto& id : ds.split_order)
    split_text += id + ' ' + std::string(role_name(ds.split.at(id))) + '\n';
  io::write_text(root / "split.txt", split_text);
  return ds;
}

}  // namespace crica
