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

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crica/binary_io.hpp"
#include "crica/config.hpp"
#include "crica/model.hpp"
#include "crica/trainer.hpp"

// Checkpoint layout, all little-endian:
//   "CRCK" u32 version, str run-config JSON,
//   u32 parameter count, then per parameter: str name, u32 rank, u32 dims, floats,
//   u8 has_optimizer; if set: u64 step, f64 lr, u64 next_epoch, f64 best_r5,
//   u64 stale_epochs, u8 stopped_early, u32 slots, then m and v per slot.
namespace crica {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerSnapshot {
  std::uint64_t step = 0;
  double lr = 0.0;
  TrainProgress progress;
  std::vector<Tensor<float>> m, v;
};

struct Checkpoint {
  RunConfig config;
  std::unique_ptr<CricaModel<float>> model;
  std::optional<OptimizerSnapshot> optimizer;
};

namespace detail {

inline void write_tensor(io::Writer& w, const Tensor<float>& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(t.data());
}

inline Tensor<float> read_tensor(io::Reader& r) {
  const std::uint32_t rank = r.u32();
  CRICA_CHECK(rank >= 1 && rank <= 8, ErrorCode::BadCheckpoint, "implausible tensor rank ", rank);
  Shape s(rank);
  std::size_t n = 1;
  for (auto& d : s) {
    d = r.u32();
    CRICA_CHECK(d >= 1, ErrorCode::BadCheckpoint, "zero tensor extent");
    n *= d;
    CRICA_CHECK(n <= (std::size_t{1} << 31), ErrorCode::BadCheckpoint, "tensor too large");
  }
  Tensor<float> t(s);
  r.f32s(t.data());
  return t;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                            const CricaModel<float>& model,
                            const Trainer<float>* trainer = nullptr) {
  std::ofstream out = io::open_out(path);
  io::Writer w(out);
  w.bytes("CRCK");
  w.u32(kCheckpointVersion);
  w.str(to_json(cfg).dump());
  std::uint32_t count = 0;
  model.for_each_param([&](const Parameter<float>&) { ++count; });
  w.u32(count);
  model.for_each_param([&](const Parameter<float>& p) {
    w.str(p.name);
    detail::write_tensor(w, p.value);
  });
  w.u32(trainer ? 1u : 0u);
  if (trainer) {
    const Adam<float>& opt = trainer->optimizer();
    const TrainProgress& pr = trainer->progress();
    w.u64(opt.steps());
    w.f64(opt.lr());
    w.u64(pr.next_epoch);
    w.f64(pr.best_r5);
    w.u64(pr.stale_epochs);
    w.u32(pr.stopped_early ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(opt.first_moments().size()));
    for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
      detail::write_tensor(w, opt.first_moments()[i]);
      detail::write_tensor(w, opt.second_moments()[i]);
    }
  }
  CRICA_CHECK(out.good(), ErrorCode::IoError, "short write to ", path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  CRICA_CHECK(in.good(), ErrorCode::BadCheckpoint, "cannot read checkpoint ", path.string());
  io::Reader r(in, ErrorCode::BadCheckpoint, path.string());
  r.expect_magic("CRCK");
  const std::uint32_t version = r.u32();
  CRICA_CHECK(version == kCheckpointVersion, ErrorCode::BadCheckpoint,
              "unsupported checkpoint version ", version);
  Checkpoint ck;
  try {
    ck.config = parse_run_config(r.str());
  } catch (const Error& e) {
    detail::fail(ErrorCode::BadCheckpoint, "checkpoint config: ", e.what());
  }
  ck.model = std::make_unique<CricaModel<float>>(ck.config.model);
  std::uint32_t expected = 0;
  ck.model->for_each_param([&](const Parameter<float>&) { ++expected; });
  const std::uint32_t count = r.u32();
  CRICA_CHECK(count == expected, ErrorCode::BadCheckpoint, "checkpoint holds ", count,
              " parameters, model has ", expected);
  ck.model->for_each_param([&](Parameter<float>& p) {
    const std::string name = r.str(1024);
    CRICA_CHECK(name == p.name, ErrorCode::BadCheckpoint, "expected parameter ", p.name, ", found ",
                name);
    Tensor<float> t = detail::read_tensor(r);
    CRICA_CHECK(t.shape() == p.value.shape(), ErrorCode::BadCheckpoint, "parameter ", name,
                " has shape ", t.shape(), ", expected ", p.value.shape());
    p.value = std::move(t);
  });
  if (r.u32() == 1u) {
    OptimizerSnapshot s;
    s.step = r.u64();
    s.lr = r.f64();
    s.progress.next_epoch = r.u64();
    s.progress.best_r5 = r.f64();
    s.progress.stale_epochs = r.u64();
    s.progress.stopped_early = r.u32() != 0;
    const std::uint32_t slots = r.u32();
    for (std::uint32_t i = 0; i < slots; ++i) {
      s.m.push_back(detail::read_tensor(r));
      s.v.push_back(detail::read_tensor(r));
    }
    ck.optimizer = std::move(s);
  }
  return ck;
}

/// Puts a trainer back into the state recorded in a checkpoint.
inline void restore_trainer(Trainer<float>& trainer, const OptimizerSnapshot& s) {
  const auto& params = trainer.trainable();
  CRICA_CHECK(s.m.empty() || s.m.size() == params.size(), ErrorCode::BadCheckpoint,
              "optimizer state for ", s.m.size(), " parameters, model trains ", params.size());
  for (std::size_t i = 0; i < s.m.size(); ++i)
    CRICA_CHECK(s.m[i].shape() == params[i]->value.shape() && s.v[i].shape() == s.m[i].shape(),
                ErrorCode::BadCheckpoint, "optimizer moment shape mismatch for ",
                params[i]->name);
  trainer.optimizer().restore(s.step, s.m, s.v);
  trainer.optimizer().set_lr(s.lr);
  trainer.progress() = s.progress;
}

}  // namespace crica
