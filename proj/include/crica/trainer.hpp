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
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crica/dataset.hpp"
#include "crica/metric_learning.hpp"
#include "crica/model.hpp"
#include "crica/optimizer.hpp"
#include "crica/retrieval.hpp"

namespace crica {

/// In-memory images with their place labels and metadata.
struct ImageSet {
  Manifest meta;
  std::vector<Tensor<float>> images;

  std::vector<std::int64_t> labels() const {
    std::vector<std::int64_t> out;
    out.reserve(meta.size());
    for (const auto& e : meta) out.push_back(e.place);
    return out;
  }
};

inline ImageSet load_image_set(const Manifest& m, const std::filesystem::path& root) {
  return {m, load_images(m, root)};
}

/// Descriptors in input order, `batch` images per forward pass; the last
/// batch may be partial.
template <typename T>
DescriptorSet extract_descriptors(const CricaModel<T>& model, const ImageSet& set,
                                  std::size_t batch) {
  CRICA_CHECK(batch >= 1, ErrorCode::InvalidArgument, "inference batch must be >= 1");
  DescriptorSet out;
  for (std::size_t start = 0; start < set.images.size(); start += batch) {
    const std::size_t end = std::min(start + batch, set.images.size());
    std::vector<const Tensor<float>*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&set.images[i]);
    const Tensor<T> d = model.describe(stack_images<T>(ptrs));
    const std::size_t dim = d.dim(1);
    for (std::size_t i = start; i < end; ++i) {
      GlobalDescriptor g{set.meta[i].path, std::vector<float>(dim)};
      for (std::size_t j = 0; j < dim; ++j) g.vector[j] = static_cast<float>(d((i - start), j));
      out.append(g);
    }
  }
  return out;
}

/// Splits a labeled set into query (first image of each place) and database.
inline std::pair<ImageSet, ImageSet> query_db_split(const ImageSet& set) {
  ImageSet q, db;
  std::map<std::int64_t, bool> seen;
  for (std::size_t i = 0; i < set.meta.size(); ++i) {
    ImageSet& dst = seen[set.meta[i].place] ? db : q;
    seen[set.meta[i].place] = true;
    dst.meta.push_back(set.meta[i]);
    dst.images.push_back(set.images[i]);
  }
  return {std::move(q), std::move(db)};
}

template <typename T>
RecallTable evaluate_model(const CricaModel<T>& model, const ImageSet& queries, const ImageSet& db,
                           const GroundTruthRule& rule, std::vector<std::size_t> ns,
                           std::size_t batch) {
  const DescriptorIndex index = build_index(extract_descriptors(model, db, batch), db.meta);
  return evaluate(index, extract_descriptors(model, queries, batch), queries.meta, rule,
                  std::move(ns));
}

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  std::size_t steps = 0;
  std::optional<double> val_r1;
  std::optional<double> val_r5;

  std::string format() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.6f lr=%.6g steps=%zu", epoch, mean_loss, lr,
                  steps);
    std::string s = buf;
    if (val_r1 && val_r5) {
      std::snprintf(buf, sizeof buf, " val_r1=%.2f val_r5=%.2f", *val_r1, *val_r5);
      s += buf;
    }
    return s;
  }
};

/// Everything needed to continue a run where it stopped.
struct TrainProgress {
  std::size_t next_epoch = 0;
  double best_r5 = -1.0;
  std::size_t stale_epochs = 0;
  bool stopped_early = false;
};

/// Trains the trainable parameters (adapters, GeM p, encoder) with the MS
/// loss; frozen backbone weights are never written.
template <typename T>
class Trainer {
 public:
  Trainer(CricaModel<T>& model, TrainConfig cfg, MsHyper loss)
      : model_(model),
        cfg_(cfg),
        loss_(loss),
        opt_(AdamHyper{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps}) {
    cfg_.validate();
    loss_.validate();
    model_.for_each_param([&](Parameter<T>& p) {
      if (p.trainable) params_.push_back(&p);
    });
  }

  Adam<T>& optimizer() { return opt_; }
  const Adam<T>& optimizer() const { return opt_; }
  TrainProgress& progress() { return progress_; }
  const TrainProgress& progress() const { return progress_; }
  const std::vector<Parameter<T>*>& trainable() const { return params_; }

  /// One optimizer step on a batch; returns the loss.
  double step(const ImageSet& data, const TrainBatch& batch) {
    std::vector<const Tensor<float>*> ptrs;
    for (std::size_t i : batch.indices) ptrs.push_back(&data.images[i]);
    Tape<T> tape;
    ParamBinder<T> bind(tape, true);
    Var<T> desc = model_.forward(bind, stack_images<T>(ptrs));
    Var<T> sims = cosine_sim_matrix(desc);
    const MinedPairs mined = ms_mine(sims.value(), batch.labels, loss_.margin);
    Var<T> loss = ms_loss(sims, mined, loss_);
    std::vector<Tensor<T>> grads;
    grads.reserve(params_.size());
    if (mined.count() > 0) {
      tape.backward(loss);
      for (Parameter<T>* p : params_) grads.push_back(bind.grad(*p));
    } else {
      for (Parameter<T>* p : params_) grads.emplace_back(p->value.shape());
    }
    opt_.step(params_, grads);
    model_.clamp_gem();
    return static_cast<double>(loss.value()[0]);
  }

  /// Runs one epoch with batches drawn from a stream keyed on the epoch, so a
  /// resumed run sees the same batches as an uninterrupted one.
  EpochRecord run_epoch(const ImageSet& data, std::size_t epoch,
                        const std::function<void(std::size_t, double)>& on_step = {}) {
    opt_.set_lr(cfg_.lr_at(epoch));
    Rng rng = derive_rng(cfg_.seed, 1000 + epoch);
    const auto batches = epoch_batches(group_by_place(data.labels()), cfg_.places_per_batch,
                                       cfg_.images_per_place, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt_.lr();
    double total = 0.0;
    for (const TrainBatch& b : batches) {
      const double l = step(data, b);
      total += l;
      if (on_step) on_step(rec.steps, l);
      ++rec.steps;
    }
    rec.mean_loss = rec.steps ? total / static_cast<double>(rec.steps) : 0.0;
    return rec;
  }

  /// Trains from progress().next_epoch up to cfg.epochs. With validation data
  /// and a nonzero patience, stops once R@5 has not improved for `patience`
  /// epochs.
  std::vector<EpochRecord> train(const ImageSet& data, const ImageSet* val = nullptr,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    std::vector<EpochRecord> log;
    std::optional<std::pair<ImageSet, ImageSet>> val_split;
    if (val && !val->images.empty()) val_split = query_db_split(*val);
    while (progress_.next_epoch < cfg_.epochs && !progress_.stopped_early) {
      EpochRecord rec = run_epoch(data, progress_.next_epoch);
      if (val_split) {
        const RecallTable t =
            evaluate_model(model_, val_split->first, val_split->second,
                           GroundTruthRule::euclidean(25.0), {1, 5}, cfg_.inference_batch);
        rec.val_r1 = t.at(1);
        rec.val_r5 = t.at(5);
        if (*rec.val_r5 > progress_.best_r5) {
          progress_.best_r5 = *rec.val_r5;
          progress_.stale_epochs = 0;
        } else {
          ++progress_.stale_epochs;
        }
        if (cfg_.patience > 0 && progress_.stale_epochs >= cfg_.patience)
          progress_.stopped_early = true;
      }
      ++progress_.next_epoch;
      log.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
    return log;
  }

 private:
  CricaModel<T>& model_;
  TrainConfig cfg_;
  MsHyper loss_;
  Adam<T> opt_;
  TrainProgress progress_;
  std::vector<Parameter<T>*> params_;
};

}  // namespace crica
