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

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crica/binary_io.hpp"
#include "crica/tensor.hpp"

namespace crica {

/// Planar position in meters, or a frame number along a sequence.
struct Geotag {
  enum class Kind { Planar, Frame };
  Kind kind = Kind::Planar;
  double x = 0.0;
  double y = 0.0;
  std::int64_t frame = 0;

  static Geotag planar(double x, double y) { return {Kind::Planar, x, y, 0}; }
  static Geotag at_frame(std::int64_t f) { return {Kind::Frame, 0.0, 0.0, f}; }
};

struct ManifestEntry {
  std::string path;  // doubles as the image id
  std::int64_t place = 0;
  Geotag geo;
};

using Manifest = std::vector<ManifestEntry>;

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename N>
N parse_number(std::string_view s, std::size_t line_no) {
  N v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  CRICA_CHECK(ec == std::errc() && ptr == s.data() + s.size(), ErrorCode::MissingMetadata,
              "line ", line_no, ": bad number '", s, "'");
  return v;
}

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename F>
void for_each_record(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = text.substr(pos, end - pos);
    const auto fields = split_ws(line);
    if (!fields.empty() && fields[0].front() != '#') f(fields, line_no);
    pos = end + 1;
  }
}

}  // namespace detail

/// One record per line: `path place x y` or `path place frame`.
inline Manifest parse_manifest(std::string_view text) {
  Manifest m;
  detail::for_each_record(text, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    CRICA_CHECK(f.size() == 3 || f.size() == 4, ErrorCode::MissingMetadata, "manifest line ", ln,
                ": expected 3 or 4 fields, got ", f.size());
    ManifestEntry e;
    e.path = std::string(f[0]);
    e.place = detail::parse_number<std::int64_t>(f[1], ln);
    if (f.size() == 4)
      e.geo = Geotag::planar(detail::parse_number<double>(f[2], ln),
                             detail::parse_number<double>(f[3], ln));
    else
      e.geo = Geotag::at_frame(detail::parse_number<std::int64_t>(f[2], ln));
    m.push_back(std::move(e));
  });
  return m;
}

inline std::string format_manifest(const Manifest& m) {
  std::string out = "# path place x y | path place frame\n";
  for (const auto& e : m) {
    out += e.path + ' ' + std::to_string(e.place) + ' ';
    if (e.geo.kind == Geotag::Kind::Planar)
      out += detail::format_double(e.geo.x) + ' ' + detail::format_double(e.geo.y);
    else
      out += std::to_string(e.geo.frame);
    out += '\n';
  }
  return out;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(io::read_text(path));
}

enum class Role { Train, Val, Query, Database };

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::Train: return "train";
    case Role::Val: return "val";
    case Role::Query: return "query";
    case Role::Database: return "db";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  for (Role r : {Role::Train, Role::Val, Role::Query, Role::Database})
    if (role_name(r) == s) return r;
  detail::fail(ErrorCode::MissingMetadata, "unknown split role '", s, "'");
}

using SplitMap = std::map<std::string, Role>;

inline SplitMap parse_split(std::string_view text) {
  SplitMap split;
  detail::for_each_record(text, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    CRICA_CHECK(f.size() == 2, ErrorCode::MissingMetadata, "split line ", ln,
                ": expected 'image-id role'");
    split[std::string(f[0])] = parse_role(f[1]);
  });
  return split;
}

inline SplitMap load_split(const std::filesystem::path& path) {
  return parse_split(io::read_text(path));
}

/// Manifest entries whose split role is `role`, in manifest order.
inline Manifest select_role(const Manifest& m, const SplitMap& split, Role role) {
  Manifest out;
  for (const auto& e : m) {
    const auto it = split.find(e.path);
    CRICA_CHECK(it != split.end(), ErrorCode::MissingMetadata, "no split role for ", e.path);
    if (it->second == role) out.push_back(e);
  }
  return out;
}

/// Raw planar float image: u32 H, u32 W, then 3*H*W little-endian floats.
inline void write_image(const std::filesystem::path& path, const Tensor<float>& img) {
  CRICA_CHECK(img.rank() == 3 && img.dim(0) == 3, ErrorCode::BadImageSize, "image shape ",
              img.shape());
  std::ofstream out = io::open_out(path);
  io::Writer w(out);
  w.u32(static_cast<std::uint32_t>(img.dim(1)));
  w.u32(static_cast<std::uint32_t>(img.dim(2)));
  w.f32s(img.data());
  CRICA_CHECK(out.good(), ErrorCode::IoError, "short write to ", path.string());
}

inline Tensor<float> read_image(const std::filesystem::path& path) {
  std::ifstream in = io::open_in(path);
  io::Reader r(in, ErrorCode::IoError, path.string());
  const std::uint32_t h = r.u32(), w = r.u32();
  CRICA_CHECK(h > 0 && w > 0 && h <= 1u << 14 && w <= 1u << 14, ErrorCode::BadImageSize,
              path.string(), ": implausible size ", h, "x", w);
  Tensor<float> img({3, h, w});
  r.f32s(std::span<float>(img.ptr(), img.numel()));
  return img;
}

/// Stacks same-sized images into [B x 3 x H x W].
template <typename T = float>
Tensor<T> stack_images(const std::vector<const Tensor<float>*>& imgs) {
  CRICA_CHECK(!imgs.empty(), ErrorCode::InvalidArgument, "no images to stack");
  const Shape s = imgs[0]->shape();
  Shape out_shape{imgs.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor<T> out(out_shape);
  const std::size_t n = imgs[0]->numel();
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    CRICA_CHECK(imgs[i]->shape() == s, ErrorCode::BadImageSize, "image ", i, " has shape ",
                imgs[i]->shape(), " vs ", s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>((*imgs[i])[j]);
  }
  return out;
}

/// Loads every image of `m`, resolving relative paths against `root`.
inline std::vector<Tensor<float>> load_images(const Manifest& m, const std::filesystem::path& root) {
  std::vector<Tensor<float>> imgs;
  imgs.reserve(m.size());
  for (const auto& e : m) {
    const std::filesystem::path p(e.path);
    imgs.push_back(read_image(p.is_absolute() ? p : root / p));
  }
  return imgs;
}

}  // namespace crica
