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

#include <functional>
#include <optional>

#include "crica/error.hpp"

namespace crica::testing {

/// Runs `f` and returns the code of the crica::Error it throws, if any.
inline std::optional<ErrorCode> error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace crica::testing

#define EXPECT_CRICA_ERROR(stmt, ecode) \
  EXPECT_EQ(::crica::testing::error_code_of([&] { (void)(stmt); }), ::crica::ErrorCode::ecode)
