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
#include <string>
#include <vector>

#include "crica/backbone.hpp"
#include "crica/crica_encoder.hpp"
#include "crica/grad_check.hpp"
#include "crica/metric_learning.hpp"
#include "crica/model.hpp"
#include "crica/spm.hpp"

// Finite-difference checks, in double precision, for every differentiable
// op and the composites built from them. Tensors are small (extents <= 8) so
// the whole suite runs in seconds.
namespace crica {

struct GradCheckResult {
  std::string module;
  std::string name;
  double max_rel_err = 0.0;
};

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

namespace gradcheck {

using D = double;
using Fn = MultiFn<D>;

inline Tensor<D> normal(Shape s, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return random_normal<D>(std::move(s), rng, sd);
}

inline Tensor<D> uniform(Shape s, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  return random_uniform<D>(std::move(s), rng, lo, hi);
}

inline double check(const Fn& f, std::vector<Tensor<D>> inputs, std::uint64_t probe_seed = 99) {
  std::vector<Tensor<D>*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  const Fn probed = [&](Tape<D>& tape, const std::vector<Var<D>>& v) {
    Var<D> out = f(tape, v);
    return out.numel() == 1 ? out : random_projection(out, probe_seed);
  };
  return grad_check<D>(probed, ptrs, kGradCheckStep);
}

/// Every trainable parameter gets fresh random values so no gradient path is
/// silenced by a zero initialization.
template <typename P>
std::vector<Parameter<D>*> randomize_params(P& params, std::uint64_t seed, double sd = 0.3) {
  Rng rng(seed);
  std::vector<Parameter<D>*> out;
  params.for_each([&](Parameter<D>& p) {
    p.value = random_normal<D>(p.value.shape(), rng, sd);
    if (p.trainable) out.push_back(&p);
  });
  return out;
}

inline double check_bound(const BoundFn<D>& f, std::vector<Tensor<D>> inputs,
                          std::vector<Parameter<D>*> params, std::uint64_t probe_seed = 99) {
  std::vector<Tensor<D>*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  const BoundFn<D> probed = [&](ParamBinder<D>& bind, const std::vector<Var<D>>& v) {
    Var<D> out = f(bind, v);
    return out.numel() == 1 ? out : random_projection(out, probe_seed);
  };
  return grad_check_bound<D>(probed, ptrs, std::move(params), kGradCheckStep);
}

/// A backbone small enough for exhaustive differencing: 6 px images, 2 px
/// patches (3 x 3 grid), width 8.
inline BackboneConfig tiny_backbone() {
  BackboneConfig c;
  c.image_size = 6;
  c.patch_size = 2;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 1.0;
  c.adapter.embed_dim = 8;
  c.adapter.bottleneck_ratio = 0.5;
  c.adapter.reduce_channels = 2;
  c.adapter.path_out_1x1 = 2;
  c.adapter.path_out_3x3 = 1;
  c.adapter.path_out_5x5 = 1;
  c.validate();
  return c;
}

inline CricaConfig tiny_encoder() {
  CricaConfig c;
  c.layers = 2;
  c.embed_dim = 4;
  c.heads = 2;
  c.mlp_hidden = 8;
  return c;
}

struct Case {
  std::string module;
  std::string name;
  std::function<double()> run;
};

inline std::vector<Case> tensor_cases() {
  std::vector<Case> cs;
  auto add_case = [&](std::string name, std::function<double()> run) {
    cs.push_back({"tensor", std::move(name), std::move(run)});
  };
  add_case("matmul", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return matmul(v[0], v[1]); },
                 {normal({3, 4}, 1), normal({4, 5}, 2)});
  });
  add_case("matmul_bt", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return matmul_bt(v[0], v[1]); },
                 {normal({3, 4}, 3), normal({5, 4}, 4)});
  });
  add_case("linear", [] {
    return check(
        [](Tape<D>&, const std::vector<Var<D>>& v) { return linear(v[0], v[1], v[2]); },
        {normal({3, 4}, 5), normal({4, 2}, 6), normal({2}, 7)});
  });
  add_case("transpose", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return transpose(v[0]); },
                 {normal({3, 5}, 8)});
  });
  add_case("add_sub_mul", [] {
    return check(
        [](Tape<D>&, const std::vector<Var<D>>& v) {
          return mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.7)));
        },
        {normal({2, 3}, 9), normal({2, 3}, 10)});
  });
  add_case("add_row", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return add_row(v[0], v[1]); },
                 {normal({4, 3}, 11), normal({3}, 12)});
  });
  add_case("relu", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return relu(v[0]); },
                 {normal({4, 5}, 13)});
  });
  add_case("gelu", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return gelu(v[0]); },
                 {normal({4, 5}, 14, 2.0)});
  });
  add_case("clamp_min", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return clamp_min(v[0], 0.1); },
                 {normal({4, 5}, 15)});
  });
  add_case("reciprocal", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return reciprocal(v[0]); },
                 {uniform({3, 4}, 16, 0.5, 2.0)});
  });
  add_case("power_const", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return power(v[0], 2.7); },
                 {uniform({3, 4}, 17, 0.2, 2.0)});
  });
  add_case("power_var", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return power(v[0], v[1]); },
                 {uniform({3, 4}, 18, 0.2, 2.0), Tensor<D>({1}, 2.3)});
  });
  add_case("sum_mean", [] {
    return check(
        [](Tape<D>&, const std::vector<Var<D>>& v) {
          return concat(std::vector<Var<D>>{sum(v[0], 0), mean(v[0], 0)}, 0);
        },
        {normal({3, 4}, 19)});
  });
  add_case("mean_axis1", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return mean(v[0], 1); },
                 {normal({2, 3, 4}, 20)});
  });
  add_case("softmax", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return softmax(v[0], 1); },
                 {normal({3, 5}, 21, 2.0)});
  });
  add_case("layer_norm", [] {
    return check(
        [](Tape<D>&, const std::vector<Var<D>>& v) { return layer_norm(v[0], v[1], v[2], 1e-6); },
        {normal({3, 6}, 22), normal({6}, 23), normal({6}, 24)});
  });
  add_case("l2_normalize", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return l2_normalize(v[0], 1); },
                 {normal({3, 6}, 25)});
  });
  add_case("conv2d_3x3", [] {
    return check(
        [](Tape<D>&, const std::vector<Var<D>>& v) { return conv2d(v[0], v[1], v[2]); },
        {normal({2, 4, 5}, 26), normal({3, 2, 3, 3}, 27), normal({3}, 28)});
  });
  add_case("conv2d_5x5", [] {
    return check([](Tape<D>&, const std::vector<Var<D>>& v) { return conv2d(v[0], v[1]); },
                 {normal({2, 4, 4}, 29), normal({2, 2, 5, 5}, 30)});
  });
  add_case("shape_ops", [] {
    return check(
        [](Tape<D>&, const std::vector<Var<D>>& v) {
          Var<D> a = slice(v[0], 1, 1, 4);
          Var<D> b = gather_rows(v[0], {2, 0, 2});
          return reshape(concat(std::vector<Var<D>>{a, slice(b, 1, 0, 3)}, 0), {2, 9});
        },
        {normal({3, 5}, 31)});
  });
  return cs;
}

inline std::vector<Case> backbone_cases() {
  std::vector<Case> cs;
  cs.push_back({"backbone", "multi_head_attention", [] {
                  Rng rng(40);
                  AttentionParams<D> p = AttentionParams<D>::init("a", 4, rng, 0.5, true);
                  auto params = randomize_params(p, 41);
                  return check_bound(
                      [&](ParamBinder<D>& bind, const std::vector<Var<D>>& v) {
                        return multi_head_attention(bind, p, v[0], 2, 3);
                      },
                      {normal({6, 4}, 42)}, params);
                }});
  cs.push_back({"backbone", "mlp_gelu", [] {
                  Rng rng(43);
                  MlpParams<D> p = MlpParams<D>::init("m", 4, 6, rng, 0.5, true);
                  auto params = randomize_params(p, 44);
                  return check_bound(
                      [&](ParamBinder<D>& bind, const std::vector<Var<D>>& v) {
                        return apply_mlp(bind, p, v[0], Activation::Gelu);
                      },
                      {normal({3, 4}, 45)}, params);
                }});
  cs.push_back({"backbone", "adapted_block", [] {
                  const BackboneConfig cfg = tiny_backbone();
                  Rng rng(46);
                  BlockParams<D> block = BlockParams<D>::init(cfg, "b", rng);
                  auto params = randomize_params(block, 47);
                  const std::size_t seq = cfg.num_patches() + 1;
                  return check_bound(
                      [&](ParamBinder<D>& bind, const std::vector<Var<D>>& v) {
                        return adapted_block(bind, block, cfg, v[0], cfg.adapter_scale);
                      },
                      {normal({2 * seq, cfg.embed_dim}, 48)}, params);
                }});
  cs.push_back({"backbone", "backbone_forward", [] {
                  BackboneConfig cfg = tiny_backbone();
                  Rng rng(49);
                  BackboneParams<D> bp = BackboneParams<D>::init(cfg, rng);
                  auto params = randomize_params(bp, 50);
                  const Tensor<D> images = uniform({2, 3, 6, 6}, 51, 0.0, 1.0);
                  return check_bound(
                      [&](ParamBinder<D>& bind, const std::vector<Var<D>>&) {
                        BackboneOutput<D> out = backbone_forward(bind, bp, cfg, images);
                        return add(sum(mul(out.class_tokens, out.class_tokens)),
                                   random_projection(out.patch_maps, 52));
                      },
                      {}, params);
                }});
  return cs;
}

inline std::vector<Case> adapter_cases() {
  std::vector<Case> cs;
  cs.push_back({"adapter", "mulconv_adapter", [] {
                  const BackboneConfig cfg = tiny_backbone();
                  Rng rng(60);
                  AdapterParams<D> p = AdapterParams<D>::init(cfg.adapter, "ad", rng);
                  auto params = randomize_params(p, 61);
                  return check_bound(
                      [&](ParamBinder<D>& bind, const std::vector<Var<D>>& v) {
                        return adapter_forward(bind, p, v[0], cfg.grid());
                      },
                      {normal({2 * (cfg.num_patches() + 1), cfg.embed_dim}, 62)}, params);
                }});
  return cs;
}

inline std::vector<Case> gem_cases() {
  std::vector<Case> cs;
  cs.push_back({"gem", "gem", [] {
                  return check(
                      [](Tape<D>&, const std::vector<Var<D>>& v) { return gem(v[0], v[1], 1e-6); },
                      {uniform({5, 4}, 70, 0.1, 2.0), Tensor<D>({1}, 3.0)});
                }});
  cs.push_back({"gem", "gem_clamped", [] {
                  // Some entries sit below eps and take the clamp's zero gradient.
                  return check(
                      [](Tape<D>&, const std::vector<Var<D>>& v) { return gem(v[0], v[1], 0.05); },
                      {normal({4, 3}, 71), Tensor<D>({1}, 2.5)});
                }});
  cs.push_back({"gem", "spm_aggregate", [] {
                  return check(
                      [](Tape<D>&, const std::vector<Var<D>>& v) {
                        return spm_aggregate(v[0], v[1], v[2], 1e-6);
                      },
                      {normal({2, 3}, 72), uniform({2, 4, 4, 3}, 73, 0.1, 2.0),
                       Tensor<D>({1}, 3.0)});
                }});
  return cs;
}

inline std::vector<Case> crica_cases() {
  std::vector<Case> cs;
  cs.push_back({"crica", "cross_image_encoder", [] {
                  const CricaConfig cfg = tiny_encoder();
                  Rng rng(80);
                  CricaEncoderParams<D> p = CricaEncoderParams<D>::init(cfg, rng);
                  auto params = randomize_params(p, 81);
                  return check_bound(
                      [&](ParamBinder<D>& bind, const std::vector<Var<D>>& v) {
                        return cross_image_encode(bind, p, cfg, v[0]);
                      },
                      {normal({3, 4, 4}, 82)}, params);
                }});
  cs.push_back({"crica", "finalize_descriptors", [] {
                  return check(
                      [](Tape<D>&, const std::vector<Var<D>>& v) {
                        return finalize_descriptors(v[0]);
                      },
                      {normal({3, 4, 2}, 83)});
                }});
  return cs;
}

inline std::vector<Case> loss_cases() {
  std::vector<Case> cs;
  cs.push_back({"loss", "ms_loss", [] {
                  const std::vector<std::int64_t> labels = {0, 0, 1, 1, 2, 2, 2, 3};
                  const Tensor<D> raw = normal({8, 5}, 90);
                  // Masks come from the unperturbed batch and stay fixed.
                  MinedPairs mined;
                  {
                    Tape<D> tape;
                    Var<D> s = cosine_sim_matrix(l2_normalize(tape.constant(raw), 1));
                    mined = ms_mine(s.value(), labels, 0.1);
                  }
                  return check(
                      [&](Tape<D>&, const std::vector<Var<D>>& v) {
                        return ms_loss(cosine_sim_matrix(l2_normalize(v[0], 1)), mined, MsHyper{});
                      },
                      {raw});
                }});
  cs.push_back({"loss", "ms_loss_sims", [] {
                  const std::vector<std::int64_t> labels = {0, 0, 1, 1, 1, 2};
                  const Tensor<D> s = uniform({6, 6}, 91, -0.5, 0.9);
                  const MinedPairs mined = ms_mine(s, labels, 0.1);
                  return check(
                      [&](Tape<D>&, const std::vector<Var<D>>& v) {
                        return ms_loss(v[0], mined, MsHyper{});
                      },
                      {s});
                }});
  return cs;
}

inline std::vector<Case> model_cases() {
  std::vector<Case> cs;
  cs.push_back({"model", "full_pipeline", [] {
                  ModelConfig cfg;
                  cfg.backbone = tiny_backbone();
                  cfg.crica = tiny_encoder();
                  cfg.crica.embed_dim = cfg.backbone.embed_dim;
                  cfg.crica.layers = 1;
                  CricaModel<D> model(cfg);
                  Rng rng(100);
                  std::vector<Parameter<D>*> params;
                  model.for_each_param([&](Parameter<D>& p) {
                    if (!p.trainable) return;
                    if (p.name != "gem.p") p.value = random_normal<D>(p.value.shape(), rng, 0.3);
                    params.push_back(&p);
                  });
                  const Tensor<D> images = uniform({3, 3, 6, 6}, 101, 0.0, 1.0);
                  return check_bound(
                      [&](ParamBinder<D>& bind, const std::vector<Var<D>>&) {
                        return model.forward(bind, images);
                      },
                      {}, params);
                }});
  return cs;
}

inline std::vector<Case> all_cases() {
  std::vector<Case> all;
  for (auto&& group : {tensor_cases(), backbone_cases(), adapter_cases(), gem_cases(),
                       crica_cases(), loss_cases(), model_cases()})
    all.insert(all.end(), group.begin(), group.end());
  return all;
}

}  // namespace gradcheck

inline std::vector<std::string> gradcheck_modules() {
  return {"tensor", "backbone", "adapter", "gem", "crica", "loss", "model"};
}

/// Runs the checks of `module` ("all" for everything). Unknown names raise
/// InvalidArgument.
inline std::vector<GradCheckResult> run_gradcheck_suite(
    const std::string& module, const std::function<void(const GradCheckResult&)>& on_result = {}) {
  bool known = module == "all";
  for (const auto& m : gradcheck_modules()) known = known || m == module;
  CRICA_CHECK(known, ErrorCode::InvalidArgument, "unknown gradcheck module '", module, "'");
  std::vector<GradCheckResult> results;
  for (const auto& c : gradcheck::all_cases()) {
    if (module != "all" && c.module != module) continue;
    results.push_back({c.module, c.name, c.run()});
    if (on_result) on_result(results.back());
  }
  return results;
}

}  // namespace crica
