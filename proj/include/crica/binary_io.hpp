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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>

#include "crica/error.hpp"

// Little-endian primitives shared by the image, descriptor, PCA and
// checkpoint formats. Values are assembled byte by byte so the files do not
// depend on host endianness.
namespace crica::io {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    out_.write(b, 4);
  }

  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    out_.write(b, 8);
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }

  /// u32 length followed by raw bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  /// `code` is raised on truncated input.
  Reader(std::istream& in, ErrorCode code, std::string what)
      : in_(in), code_(code), what_(std::move(what)) {}

  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    CRICA_CHECK(static_cast<std::size_t>(in_.gcount()) == n, code_, what_, ": truncated");
    return s;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read_raw(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    read_raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  void f32s(std::span<float> out) {
    for (float& x : out) x = f32();
  }

  std::string str(std::size_t limit = 1u << 26) {
    const std::uint32_t n = u32();
    CRICA_CHECK(n <= limit, code_, what_, ": string length ", n, " exceeds limit");
    return bytes(n);
  }

  void expect_magic(std::string_view magic) {
    const std::string got = bytes(magic.size());
    CRICA_CHECK(got == magic, code_, what_, ": bad magic");
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  void read_raw(unsigned char* b, std::size_t n) {
    in_.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
    CRICA_CHECK(static_cast<std::size_t>(in_.gcount()) == n, code_, what_, ": truncated");
  }

  std::istream& in_;
  ErrorCode code_;
  std::string what_;
};

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  CRICA_CHECK(out.good(), ErrorCode::IoError, "cannot write ", path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  CRICA_CHECK(in.good(), ErrorCode::IoError, "cannot read ", path.string());
  return in;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out = open_out(path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  CRICA_CHECK(out.good(), ErrorCode::IoError, "short write to ", path.string());
}

}  // namespace crica::io
