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

// Command-line front end: gen-data, train, extract, pca, eval, gradcheck.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crica/crica.hpp"

namespace fs = std::filesystem;
using namespace crica;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Seed precedence: explicit flag, then CRICA_SEED, then the fallback.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("CRICA_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("CRICA_SEED is not an unsigned integer: '") + env + "'");
  }
  return fallback;
}

void write_config(const fs::path& path, const Json& j) { io::write_text(path, j.dump(2) + "\n"); }

fs::path sibling_config(const fs::path& output) {
  return output.parent_path() / (output.filename().string() + ".config.json");
}

Json to_json(const DatasetOptions& o) {
  return Json{{"places", o.places},
              {"per_place", o.per_place},
              {"train_places", o.train_places},
              {"val_places", o.val_places},
              {"seed", o.seed},
              {"synth",
               {{"crop", o.synth.crop},
                {"canvas", o.synth.canvas},
                {"max_shift", o.synth.max_shift},
                {"min_scale", o.synth.min_scale},
                {"max_scale", o.synth.max_scale},
                {"max_magnitude", o.synth.max_magnitude},
                {"spacing", o.synth.spacing}}}};
}

/// Manifest entries, optionally restricted to one split role.
Manifest select_entries(const fs::path& manifest, const std::string& split, const std::string& role) {
  Manifest m = load_manifest(manifest);
  if (role.empty()) return m;
  const fs::path split_path = split.empty() ? manifest.parent_path() / "split.txt" : fs::path(split);
  return select_role(m, load_split(split_path), parse_role(role));
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  DatasetOptions opts;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  DatasetOptions o = a.opts;
  if (o.places < 4) throw UsageError("--places must be at least 4");
  if (o.per_place < 2) throw UsageError("--per-place must be at least 2");
  o.seed = resolve_seed(a.seed, o.seed);
  const fs::path root(a.out);
  const GeneratedDataset ds = gen_dataset(o, root);
  write_config(root / "gen-data.config.json", to_json(o));
  std::printf("wrote %zu images for %zu places to %s\n", ds.manifest.size(),
              o.places + o.train_places + o.val_places, root.string().c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out, resume;
  bool no_crica = false;
  std::optional<std::size_t> epochs, patience;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg;
  std::unique_ptr<CricaModel<float>> model;
  std::optional<OptimizerSnapshot> snapshot;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    if (!ck.optimizer) throw UsageError("checkpoint " + a.resume + " holds no optimizer state");
    cfg = ck.config;
    model = std::move(ck.model);
    snapshot = std::move(ck.optimizer);
    if (a.no_crica && cfg.model.crica.enabled)
      throw UsageError("--no-crica cannot change the architecture of a resumed run");
  } else {
    if (!a.config.empty()) cfg = load_run_config(a.config);
    if (a.no_crica) cfg.model.crica.enabled = false;
    const std::uint64_t seed = resolve_seed(a.seed, cfg.train.seed);
    cfg.model.seed = seed;
    cfg.train.seed = seed;
  }
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.patience) cfg.train.patience = *a.patience;
  if (a.lr) cfg.train.lr = *a.lr;
  cfg.validate();
  if (!model) model = std::make_unique<CricaModel<float>>(cfg.model);

  const fs::path data(a.data), out(a.out);
  const Manifest manifest = load_manifest(data / "manifest.txt");
  const SplitMap split = load_split(data / "split.txt");
  const ImageSet train = load_image_set(select_role(manifest, split, Role::Train), data);
  const ImageSet val = load_image_set(select_role(manifest, split, Role::Val), data);
  CRICA_CHECK(!train.images.empty(), ErrorCode::InsufficientPlaces, "no images with role 'train' in ",
              (data / "split.txt").string());

  fs::create_directories(out);
  write_config(out / "config.json", to_json(cfg));
  std::cout << "resolved config: " << to_json(cfg).dump() << '\n';
  std::printf("training on %zu images (%zu validation), %zu trainable / %zu frozen parameters\n",
              train.images.size(), val.images.size(), model->count_params(true),
              model->count_params(false));

  Trainer<float> trainer(*model, cfg.train, cfg.loss);
  if (snapshot) restore_trainer(trainer, *snapshot);
  const fs::path log_path = out / "metrics.log";
  std::ofstream log(log_path, snapshot ? std::ios::app : std::ios::trunc);
  CRICA_CHECK(log.good(), ErrorCode::IoError, "cannot write ", log_path.string());
  trainer.train(train, val.images.empty() ? nullptr : &val, [&](const EpochRecord& rec) {
    const std::string line = rec.format();
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    log << line << '\n';
    log.flush();
    save_checkpoint(out / "checkpoint.ckpt", cfg, *model, &trainer);
  });
  if (trainer.progress().stopped_early) std::printf("stopped early: validation R@5 stalled\n");
  save_checkpoint(out / "checkpoint.ckpt", cfg, *model, &trainer);
  return kExitOk;
}

struct ExtractArgs {
  std::string checkpoint, manifest, split, role, out;
  std::optional<std::size_t> batch;
};

int run_extract(const ExtractArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const std::size_t batch = a.batch.value_or(ck.config.train.inference_batch);
  if (batch == 0) throw UsageError("--batch must be at least 1");
  if (batch == 1 && ck.config.model.crica.enabled)
    std::fprintf(stderr,
                 "warning: --batch 1 gives the cross-image encoder no other images to attend to; "
                 "descriptors degrade to single-image encodings\n");
  const fs::path manifest(a.manifest);
  const ImageSet set = load_image_set(select_entries(manifest, a.split, a.role), manifest.parent_path());
  CRICA_CHECK(!set.images.empty(), ErrorCode::MissingMetadata, "no images selected from ",
              manifest.string());
  const DescriptorSet d = extract_descriptors(*ck.model, set, batch);
  save_descriptors(a.out, d);
  write_config(sibling_config(a.out), Json{{"checkpoint", a.checkpoint},
                                           {"manifest", a.manifest},
                                           {"role", a.role},
                                           {"batch", batch},
                                           {"model", to_json(ck.config.model)}});
  const std::size_t full = set.images.size() / batch, rest = set.images.size() % batch;
  std::printf("wrote %zu descriptors of dim %zu (%zu batches of %zu%s) to %s\n", d.size(), d.dim,
              full, batch, rest ? (" + one of " + std::to_string(rest)).c_str() : "",
              a.out.c_str());
  return kExitOk;
}

struct PcaArgs {
  std::string descriptors, out;
  std::size_t dim = 0;
  bool whiten = false;
  std::vector<std::string> project;
};

int run_pca(const PcaArgs& a) {
  const DescriptorSet fit_on = load_descriptors(a.descriptors);
  if (a.dim == 0 || a.dim > fit_on.dim)
    throw UsageError("--dim must be in [1, " + std::to_string(fit_on.dim) + "]");
  std::vector<std::pair<std::string, std::string>> jobs;
  for (const auto& spec : a.project) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw UsageError("--project expects IN=OUT, got '" + spec + "'");
    jobs.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  const PcaModel m = pca_fit(fit_on, a.dim);
  if (m.rank_deficient)
    std::fprintf(stderr, "warning: some of the %zu kept directions carry no variance\n", a.dim);
  save_pca(a.out, m);
  Json cfg{{"descriptors", a.descriptors}, {"dim", a.dim}, {"whiten", a.whiten}};
  Json projected = Json::array();
  for (const auto& [in, out] : jobs) {
    save_descriptors(out, pca_transform(load_descriptors(in), m, a.whiten));
    projected.push_back({{"in", in}, {"out", out}});
    std::printf("projected %s -> %s\n", in.c_str(), out.c_str());
  }
  cfg["project"] = projected;
  write_config(sibling_config(a.out), cfg);
  std::printf("PCA %zu -> %zu written to %s\n", m.dim, m.out_dim, a.out.c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string db, queries, manifest, rule = "euclidean:25", out;
  std::vector<std::size_t> ns = {1, 5, 10};
};

int run_eval(const EvalArgs& a) {
  GroundTruthRule rule;
  try {
    rule = GroundTruthRule::parse(a.rule);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  for (std::size_t n : a.ns)
    if (n == 0) throw UsageError("--Ns entries must be >= 1");
  const Manifest manifest = load_manifest(a.manifest);
  const DescriptorIndex index = build_index(a.db, manifest);
  const DescriptorSet queries = load_descriptors(a.queries);
  std::unordered_map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest) by_id.emplace(e.path, &e);
  Manifest query_meta;
  for (const auto& id : queries.ids) {
    const auto it = by_id.find(id);
    CRICA_CHECK(it != by_id.end(), ErrorCode::MissingMetadata, "no manifest record for query ", id);
    query_meta.push_back(*it->second);
  }
  const RecallTable t = evaluate(index, queries, query_meta, rule, a.ns);
  std::printf("rule=%s queries=%zu evaluable=%zu database=%zu\n%s", rule.str().c_str(),
              queries.size(), t.evaluable, index.size(), t.format().c_str());
  if (!a.out.empty()) {
    io::write_text(a.out, t.format());
    write_config(sibling_config(a.out), Json{{"db", a.db},
                                             {"queries", a.queries},
                                             {"manifest", a.manifest},
                                             {"rule", rule.str()},
                                             {"ns", t.ns}});
  }
  return kExitOk;
}

int run_gradcheck(const std::string& module) {
  bool ok = true;
  std::size_t count = 0;
  try {
    run_gradcheck_suite(module, [&](const GradCheckResult& r) {
      const bool pass = r.max_rel_err < kGradCheckTolerance;
      ok = ok && pass;
      ++count;
      std::printf("%-8s %-24s max_rel_err=%.3e %s\n", r.module.c_str(), r.name.c_str(),
                  r.max_rel_err, pass ? "PASS" : "FAIL");
      std::fflush(stdout);
    });
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw UsageError(e.what());
    throw;
  }
  std::printf("%zu checks, %s (tolerance %.0e)\n", count, ok ? "all passed" : "FAILURES",
              kGradCheckTolerance);
  return ok ? kExitOk : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crica: cross-image correlation-aware place recognition at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "crica 0.1.0");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic place-recognition dataset");
  gen_cmd->add_option("--places", gen.opts.places, "Evaluation places (one query each)")
      ->capture_default_str();
  gen_cmd->add_option("--per-place", gen.opts.per_place, "Images per place")->capture_default_str();
  gen_cmd->add_option("--train-places", gen.opts.train_places, "Extra training-only places")
      ->capture_default_str();
  gen_cmd->add_option("--val-places", gen.opts.val_places, "Extra validation places")
      ->capture_default_str();
  gen_cmd->add_option("--max-magnitude", gen.opts.synth.max_magnitude,
                      "Upper bound of condition-change strength")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--seed", gen.seed, "Master seed (default: CRICA_SEED or 0)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train adapters, GeM p and the cross-image encoder");
  train_cmd->add_option("--config", tr.config, "JSON run config (defaults to the desk config)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Dataset directory with manifest.txt and split.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_flag("--no-crica", tr.no_crica, "Disable the cross-image encoder (ablation)");
  train_cmd->add_option("--epochs", tr.epochs, "Override the number of epochs");
  train_cmd->add_option("--lr", tr.lr, "Override the initial learning rate")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--patience", tr.patience, "Early-stopping patience in epochs (0 = off)");
  train_cmd->add_option("--seed", tr.seed, "Seed for initialization and batching");
  auto* resume_opt = train_cmd->add_option("--resume", tr.resume, "Continue from a checkpoint")
                         ->check(CLI::ExistingFile);
  resume_opt->excludes(train_cmd->get_option("--config"));
  resume_opt->excludes(train_cmd->get_option("--seed"));

  ExtractArgs ex;
  auto* extract_cmd = app.add_subcommand("extract", "Compute global descriptors for a manifest");
  extract_cmd->add_option("--checkpoint", ex.checkpoint, "Trained checkpoint")->required();
  extract_cmd->add_option("--manifest", ex.manifest, "Image manifest")
      ->required()
      ->check(CLI::ExistingFile);
  extract_cmd->add_option("--role", ex.role, "Only images with this split role")
      ->check(CLI::IsMember({"train", "val", "query", "db"}));
  extract_cmd->add_option("--split", ex.split, "Split file (default: split.txt next to the manifest)");
  extract_cmd->add_option("--batch", ex.batch, "Inference batch size (default from the checkpoint)");
  extract_cmd->add_option("--out", ex.out, "Descriptor file")->required();

  PcaArgs pc;
  auto* pca_cmd = app.add_subcommand("pca", "Fit PCA on descriptors and optionally project sets");
  pca_cmd->add_option("--descriptors", pc.descriptors, "Descriptors to fit on")
      ->required()
      ->check(CLI::ExistingFile);
  pca_cmd->add_option("--dim", pc.dim, "Output dimension")->required();
  pca_cmd->add_option("--out", pc.out, "PCA model file")->required();
  pca_cmd->add_flag("--whiten", pc.whiten, "Whiten projected descriptors");
  pca_cmd->add_option("--project", pc.project, "IN=OUT descriptor files to project (repeatable)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Recall@N of query descriptors against a database");
  eval_cmd->add_option("--db", ev.db, "Database descriptors")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--queries", ev.queries, "Query descriptors")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest with geotags for both sets")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--rule", ev.rule, "euclidean[:meters] | frame[:k] | unique")
      ->capture_default_str();
  eval_cmd->add_option("--Ns", ev.ns, "Comma-separated N values")->delimiter(',')->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "Also write the recall table here");

  std::string module = "all";
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  std::string modules_help = "all";
  for (const auto& m : gradcheck_modules()) modules_help += " | " + m;
  gc_cmd->add_option("--module", module, modules_help)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*extract_cmd) return run_extract(ex);
    if (*pca_cmd) return run_pca(pc);
    if (*eval_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(module);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
