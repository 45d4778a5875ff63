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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crica/binary_io.hpp"
#include "crica/crica_encoder.hpp"

namespace crica {

/// A row-major block of descriptors with their image ids.
struct DescriptorSet {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> values;  // ids.size() x dim

  std::size_t size() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * dim, dim}; }

  void append(const GlobalDescriptor& g) {
    if (ids.empty() && dim == 0) dim = g.vector.size();
    CRICA_CHECK(g.vector.size() == dim, ErrorCode::DimMismatch, "descriptor for ", g.image_id,
                " has dim ", g.vector.size(), ", expected ", dim);
    ids.push_back(g.image_id);
    values.insert(values.end(), g.vector.begin(), g.vector.end());
  }

  friend bool operator==(const DescriptorSet&, const DescriptorSet&) = default;
};

inline constexpr std::uint32_t kDescriptorFileVersion = 1;

/// "CRCA", u32 version, u32 count, u32 dim, count*dim floats, then the ids.
inline void write_descriptors(std::ostream& out, const DescriptorSet& set) {
  io::Writer w(out);
  w.bytes("CRCA");
  w.u32(kDescriptorFileVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(set.dim));
  w.f32s(set.values);
  for (const auto& id : set.ids) w.str(id);
}

inline DescriptorSet read_descriptors(std::istream& in, const std::string& what = "descriptors") {
  io::Reader r(in, ErrorCode::IoError, what);
  r.expect_magic("CRCA");
  const std::uint32_t version = r.u32();
  CRICA_CHECK(version == kDescriptorFileVersion, ErrorCode::IoError, what,
              ": unsupported version ", version);
  DescriptorSet set;
  const std::uint32_t count = r.u32();
  set.dim = r.u32();
  CRICA_CHECK(count == 0 || set.dim > 0, ErrorCode::DimMismatch, what, ": zero dimension");
  set.values.resize(static_cast<std::size_t>(count) * set.dim);
  r.f32s(set.values);
  set.ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) set.ids.push_back(r.str(4096));
  return set;
}

inline void save_descriptors(const std::filesystem::path& path, const DescriptorSet& set) {
  std::ofstream out = io::open_out(path);
  write_descriptors(out, set);
  CRICA_CHECK(out.good(), ErrorCode::IoError, "short write to ", path.string());
}

inline DescriptorSet load_descriptors(const std::filesystem::path& path) {
  std::ifstream in = io::open_in(path);
  return read_descriptors(in, path.string());
}

/// Scales a row to unit length; all-zero rows are rejected.
inline void normalize_row(std::span<float> v) {
  double ss = 0.0;
  for (float x : v) ss += static_cast<double>(x) * x;
  CRICA_CHECK(ss > 0.0, ErrorCode::ZeroVector, "cannot normalize a zero vector");
  const double inv = 1.0 / std::sqrt(ss);
  for (float& x : v) x = static_cast<float>(x * inv);
}

}  // namespace crica
