// Copyright (c) 2026 The StyleInject Lab Authors. All Rights Reserved.
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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "styleinject/manifest.hpp"
#include "styleinject/router_trace.hpp"
#include "styleinject/run_config.hpp"

namespace styleinject {

namespace fs = std::filesystem;

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

class LockError : public Error {
 public:
  using Error::Error;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Exclusive ownership of an output directory for the lifetime of a run.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f) throw LockError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Checkpoint <-> model

inline constexpr const char* kKindBase = "base";
inline constexpr const char* kKindAdapted = "adapted";

inline Checkpoint make_run_checkpoint(const RunConfig& config, std::size_t step, const ParameterList& base,
                                      const ParameterList& adapters, double heldout, std::size_t id) {
  Checkpoint ckpt;
  ckpt.step = step;
  const std::string canonical = canonical_json(config);
  ckpt.config_hash = config_hash(canonical);
  append_tensors(ckpt, base, "base.");
  append_tensors(ckpt, adapters, "");
  ckpt.metadata["config"] = canonical;
  ckpt.metadata["kind"] = adapters.empty() && config.full_tuning ? kKindBase : kKindAdapted;
  ckpt.metadata["heldout"] = format_double(heldout);
  ckpt.metadata["seed"] = std::to_string(config.train_seed());
  ckpt.metadata["checkpoint_id"] = std::to_string(id);
  return ckpt;
}

// Loads a run checkpoint. Without an explicit expectation the header hash is
// checked against the embedded config.
inline Checkpoint open_run_checkpoint(const fs::path& path, std::optional<std::uint64_t> expected = std::nullopt,
                                      bool force = false) {
  Checkpoint ckpt = load_checkpoint(path);
  auto it = ckpt.metadata.find("config");
  if (it == ckpt.metadata.end()) throw FormatError(path.string() + ": checkpoint carries no run config");
  const std::uint64_t want = expected ? *expected : config_hash(it->second);
  if (want != ckpt.config_hash) {
    const std::string msg = path.string() + ": config hash " + hex64(ckpt.config_hash) + " does not match " +
                            hex64(want);
    if (!force) throw ConfigHashMismatch(msg + " (use --force to override)");
    ckpt.warnings.push_back(msg + "; loading anyway (--force)");
  }
  return ckpt;
}

inline RunConfig checkpoint_config(const Checkpoint& ckpt) {
  return parse_run_config_text(ckpt.metadata.at("config"), "checkpoint config");
}

inline ToyDenoiser base_from_checkpoint(const Checkpoint& ckpt) {
  const RunConfig cfg = checkpoint_config(ckpt);
  ToyDenoiser model = build_toy_denoiser(cfg.model);
  assign_from_checkpoint(ckpt, model.parameters(), "base.");
  return model;
}

inline AttachedModel attached_from_checkpoint(const Checkpoint& ckpt) {
  const RunConfig cfg = checkpoint_config(ckpt);
  if (cfg.full_tuning) throw UnsupportedError("checkpoint holds a fully tuned model without adapters");
  AttachedModel model(base_from_checkpoint(ckpt), cfg.adapter, cfg.adapter_seed());
  assign_from_checkpoint(ckpt, model.trainable_parameters(), "");
  return model;
}

inline ToyDenoiser load_base_model(const std::string& path, bool force, std::ostream& log) {
  Checkpoint ckpt = open_run_checkpoint(path, std::nullopt, force);
  for (const auto& w : ckpt.warnings) log << "warning: " << w << '\n';
  if (ckpt.metadata["kind"] != kKindBase) {
    throw ConfigError(path + " is an adapter checkpoint; a base (full tuning) checkpoint is required");
  }
  return base_from_checkpoint(ckpt);
}

// ---------------------------------------------------------------------------
// Run outputs

struct CommandOptions {
  std::optional<std::string> output_dir;  // overrides the config
  bool force = false;
};

struct RunReport {
  fs::path output_dir;
  TrainResult result;
  Json report;
};

namespace detail {

class RunWriter {
 public:
  RunWriter(const fs::path& dir, const RunConfig& config, const std::vector<std::string>& components)
      : dir_(dir), lock_(dir) {
    fs::create_directories(dir / "checkpoints");
    for (const auto& entry : fs::directory_iterator(dir / "checkpoints")) fs::remove(entry.path());
    std::ofstream(dir / "config.json") << to_json(config).dump(2) << '\n';
    metrics_.open(dir / "metrics.csv", std::ios::trunc);
    metrics_ << "step,total";
    for (const auto& c : components) metrics_ << ',' << c;
    metrics_ << ",lr,checkpoint_id" << std::endl;
    validation_.open(dir / "validation.csv", std::ios::trunc);
    validation_ << "checkpoint_id,step,heldout,path" << std::endl;
    fs::remove(dir / "report.json");
  }

  void row(const TrainLogRow& r) {
    metrics_ << r.step << ',' << format_double(r.total);
    for (double c : r.components) metrics_ << ',' << format_double(c);
    metrics_ << ',' << format_double(r.lr) << ',';
    if (r.checkpoint_id) metrics_ << *r.checkpoint_id;
    metrics_ << std::endl;  // flushed per step
  }

  std::string checkpoint(const CheckpointRecord& rec, const Checkpoint& ckpt) {
    char name[48];
    std::snprintf(name, sizeof name, "ckpt-%04zu.sinj", rec.id);
    const fs::path rel = fs::path("checkpoints") / name;
    save_checkpoint(dir_ / rel, ckpt);
    validation_ << rec.id << ',' << rec.step << ',' << format_double(rec.heldout) << ',' << rel.generic_string()
                << std::endl;
    paths_.push_back(rel.generic_string());
    return rel.generic_string();
  }

  const std::string& path_of(std::size_t id) const { return paths_.at(id); }

  void report(const Json& j) { std::ofstream(dir_ / "report.json") << j.dump(2) << '\n'; }

 private:
  fs::path dir_;
  DirectoryLock lock_;
  std::ofstream metrics_;
  std::ofstream validation_;
  std::vector<std::string> paths_;
};

inline Json summarize(const TrainResult& r, const RunWriter& writer) {
  const auto& best = r.checkpoints.at(r.best_checkpoint);
  return Json{{"initial_heldout", r.initial_heldout},
              {"final_heldout", r.final_heldout},
              {"steps", r.rows.size()},
              {"checkpoints", r.checkpoints.size()},
              {"best_checkpoint",
               {{"id", best.id}, {"step", best.step}, {"heldout", best.heldout}, {"path", writer.path_of(best.id)}}}};
}

// Runs `body`; on failure leaves a report naming the error.
template <typename Body>
TrainResult guarded(RunWriter& writer, Body&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    writer.report(Json{{"status", "failed"}, {"error", e.what()}});
    throw;
  }
}

}  // namespace detail

inline ToyDataset training_data(const RunConfig& config) {
  ToyDataset data = make_dataset(config.data.spec, config.model.data_width);
  if (config.data.translator_seed != 0) {
    data = translate_conditions(std::move(data), make_translator(config.model.vocab, config.data.translator_seed));
  }
  if (config.mode == RunMode::kFewshot) data = data.head(config.data.fewshot_samples);
  return data;
}

// finetune / fewshot: adapter training, or full tuning with adapter.method "full".
inline RunReport cmd_train(RunConfig config, const CommandOptions& options = {}, std::ostream& log = std::cerr) {
  if (options.output_dir) config.output_dir = *options.output_dir;
  if (config.mode == RunMode::kDistill) throw ConfigError("mode 'distill' runs through the distill command");
  validate(config);

  ToyDenoiser base = config.base_checkpoint.empty() ? build_toy_denoiser(config.model)
                                                    : load_base_model(config.base_checkpoint, options.force, log);
  if (!(base.spec() == config.model)) {
    throw ConfigError("model section does not match the base checkpoint's model");
  }
  const NoiseSchedule schedule = config.schedule.build();
  const ToyDataset data = training_data(config);

  RunReport out;
  out.output_dir = config.output_dir;
  detail::RunWriter writer(out.output_dir, config, {"task"});
  TrainHooks hooks;
  hooks.on_row = [&](const TrainLogRow& r) { writer.row(r); };

  Json audit;
  if (config.full_tuning) {
    hooks.on_checkpoint = [&](const CheckpointRecord& rec) {
      writer.checkpoint(rec, make_run_checkpoint(config, rec.step, base.parameters(), {}, rec.heldout, rec.id));
    };
    const std::uint64_t embed_before = parameter_fingerprint({{"cond.embedding", base.condition_table()}});
    out.result = detail::guarded(writer, [&] { return finetune_full(base, schedule, data, config.train, hooks); });
    audit = {{"trainable_parameters", count_elements(base.denoiser_parameters())},
             {"condition_embedder_unchanged",
              embed_before == parameter_fingerprint({{"cond.embedding", base.condition_table()}})}};
  } else {
    AttachedModel model(base, config.adapter, config.adapter_seed());
    const ParameterList frozen = model.base().parameters();
    const std::uint64_t before = parameter_fingerprint(frozen);
    hooks.on_checkpoint = [&](const CheckpointRecord& rec) {
      writer.checkpoint(rec, make_run_checkpoint(config, rec.step, frozen, model.trainable_parameters(), rec.heldout,
                                                 rec.id));
    };
    out.result = detail::guarded(writer, [&] { return finetune_adapters(model, schedule, data, config.train, hooks); });
    const std::uint64_t after = parameter_fingerprint(frozen);
    audit = {{"trainable_parameters", count_elements(model.trainable_parameters())},
             {"base_fingerprint_before", hex64(before)},
             {"base_fingerprint_after", hex64(after)},
             {"base_unchanged", before == after}};
  }
  out.report = detail::summarize(out.result, writer);
  out.report["status"] = "ok";
  out.report["mode"] = to_string(config.mode);
  out.report["method"] = config.full_tuning ? std::string("full") : to_string(config.adapter.method);
  out.report["audit"] = audit;
  writer.report(out.report);
  log << "train: held-out task loss " << out.result.initial_heldout << " -> " << out.result.final_heldout
      << " (best checkpoint " << out.result.best_checkpoint << ")\n";
  return out;
}

inline RunReport cmd_train(const fs::path& config_path, const CommandOptions& options = {},
                           std::ostream& log = std::cerr) {
  return cmd_train(load_run_config(config_path), options, log);
}

inline RunReport cmd_distill(RunConfig config, const CommandOptions& options = {}, std::ostream& log = std::cerr) {
  if (options.output_dir) config.output_dir = *options.output_dir;
  if (config.mode != RunMode::kDistill) throw ConfigError("distill command needs mode 'distill'");
  validate(config);

  ToyDenoiser teacher = load_base_model(config.distill.teacher_checkpoint, options.force, log);
  const std::string student_path =
      config.distill.student_base_checkpoint.empty() ? config.base_checkpoint : config.distill.student_base_checkpoint;
  if (student_path.empty()) throw ConfigError("distill.student_base_checkpoint (or model.base_checkpoint) is required");
  ToyDenoiser student_base = load_base_model(student_path, options.force, log);
  if (config.distill.scenario == DistillScenario::kShared) {
    const auto a = teacher.condition_table().values();
    const auto b = student_base.condition_table().values();
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) {
      throw ConfigError("shared scenario needs identical condition embedders in teacher and student base");
    }
  }
  config.model = student_base.spec();

  const NoiseSchedule schedule = config.schedule.build();
  const ToyDataset generic = make_dataset(config.data.spec, teacher.spec().data_width);

  AttachedModel student(student_base, config.adapter, config.adapter_seed());
  if (config.distill.feature_layers.empty() && config.distill.lambda_featkd > 0.0) {
    for (const auto& [name, a] : student.adapters()) config.distill.feature_layers.push_back(name);
  }
  TeacherStudentPair pair = make_pair(teacher, student, config.distill.scenario, config.distill.translator_seed);

  DistillConfig dc;
  dc.scenario = config.distill.scenario;
  dc.lambda_outkd = config.distill.lambda_outkd;
  dc.lambda_featkd = config.distill.lambda_featkd;
  dc.feature_layers = config.distill.feature_layers;
  dc.settings = config.train;
  dc.validate();

  const std::uint64_t teacher_before = parameter_fingerprint(pair.teacher.parameters());
  const ParameterList frozen = pair.student.base().parameters();
  const std::uint64_t student_before = parameter_fingerprint(frozen);

  RunReport out;
  out.output_dir = config.output_dir;
  detail::RunWriter writer(out.output_dir, config, {"outkd", "featkd"});
  TrainHooks hooks;
  hooks.on_row = [&](const TrainLogRow& r) { writer.row(r); };
  hooks.on_checkpoint = [&](const CheckpointRecord& rec) {
    writer.checkpoint(rec, make_run_checkpoint(config, rec.step, frozen, pair.student.trainable_parameters(),
                                               rec.heldout, rec.id));
  };
  out.result = detail::guarded(writer, [&] { return run_distillation(pair, dc, schedule, generic, hooks); });

  const std::uint64_t teacher_after = parameter_fingerprint(pair.teacher.parameters());
  const std::uint64_t student_after = parameter_fingerprint(frozen);
  out.report = detail::summarize(out.result, writer);
  out.report["status"] = "ok";
  out.report["mode"] = "distill";
  out.report["scenario"] = to_string(config.distill.scenario);
  out.report["converged_at_init"] = out.result.converged_at_init;
  out.report["audit"] = {{"trainable_parameters", count_elements(pair.student.trainable_parameters())},
                         {"teacher_fingerprint_before", hex64(teacher_before)},
                         {"teacher_fingerprint_after", hex64(teacher_after)},
                         {"student_base_fingerprint_before", hex64(student_before)},
                         {"student_base_fingerprint_after", hex64(student_after)},
                         {"frozen_unchanged", teacher_before == teacher_after && student_before == student_after}};
  writer.report(out.report);
  if (out.result.converged_at_init) {
    log << "distill: student already matches the teacher (held-out outkd " << out.result.initial_heldout << ")\n";
  } else {
    const auto& best = out.result.checkpoints[out.result.best_checkpoint];
    log << "distill: held-out outkd " << out.result.initial_heldout << " -> best " << best.heldout << " at step "
        << best.step << '\n';
  }
  return out;
}

inline RunReport cmd_distill(const fs::path& config_path, const CommandOptions& options = {},
                             std::ostream& log = std::cerr) {
  return cmd_distill(load_run_config(config_path), options, log);
}

// ---------------------------------------------------------------------------
// Parameter accounting

struct CountParamsOptions {
  std::string manifest;
  AdapterMethod method = AdapterMethod::kLora;
  std::size_t rank = 32;
  std::size_t styles = 16;
  std::optional<std::string> out;  // JSON breakdown
};

inline Json breakdown_json(const ParamBreakdown& b) {
  Json layers = Json::array();
  for (const auto& l : b.layers) {
    layers.push_back({{"name", l.name},
                      {"policy", to_string(l.policy)},
                      {"down", l.down},
                      {"up", l.up},
                      {"router", l.router},
                      {"hypernet", l.hypernet},
                      {"total", l.total()}});
  }
  return Json{{"layers", layers}, {"total", b.total}, {"total_millions", format_millions(b.total)}};
}

inline ParamBreakdown cmd_count_params(const CountParamsOptions& opt, std::ostream& out = std::cout) {
  const LayerManifest manifest = LayerManifest::load(opt.manifest);
  AdapterConfig config = AdapterConfig::defaults();
  config.method = opt.method;
  config.rank = opt.rank;
  config.styles = opt.styles;
  config.alpha = static_cast<double>(opt.rank);
  config.targets.clear();  // policies come from the manifest
  const ParamBreakdown b = count_params(config, manifest);

  out << std::left << std::setw(64) << "layer" << std::setw(12) << "policy" << std::right << std::setw(10) << "down"
      << std::setw(10) << "up" << std::setw(9) << "router" << std::setw(10) << "hypernet" << std::setw(11) << "total"
      << '\n';
  for (const auto& l : b.layers) {
    out << std::left << std::setw(64) << l.name << std::setw(12) << to_string(l.policy) << std::right
        << std::setw(10) << l.down << std::setw(10) << l.up << std::setw(9) << l.router << std::setw(10) << l.hypernet
        << std::setw(11) << l.total() << '\n';
  }
  out << "total " << b.total << " (" << format_millions(b.total) << ")\n";
  if (opt.out) {
    std::ofstream f(*opt.out);
    if (!f) throw Error("cannot write " + *opt.out);
    f << breakdown_json(b).dump(2) << '\n';
  }
  return b;
}

// ---------------------------------------------------------------------------
// Router export and inspection

struct ExportRouterOptions {
  std::string checkpoint;
  std::string out;
  std::size_t instances = 2;
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  std::optional<std::string> config;  // expected producing config
  bool force = false;
};

inline std::size_t cmd_export_router(const ExportRouterOptions& opt, std::ostream& log = std::cerr) {
  std::optional<std::uint64_t> expected;
  if (opt.config) expected = config_hash(load_run_config(*opt.config));
  Checkpoint ckpt = open_run_checkpoint(opt.checkpoint, expected, opt.force);
  for (const auto& w : ckpt.warnings) log << "warning: " << w << '\n';
  const RunConfig cfg = checkpoint_config(ckpt);
  if (cfg.full_tuning) throw UnsupportedError("checkpoint has no adapters, so there is no router to export");
  AttachedModel model = attached_from_checkpoint(ckpt);
  if (model.routed_layers().empty()) {
    throw UnsupportedError("checkpoint has only LoRA adapters; router export needs StyleInject layers");
  }
  if (opt.instances == 0) throw ConfigError("export-router needs at least one instance");

  const ToyDataset probe = make_dataset(cfg.data.spec, cfg.model.data_width);
  std::vector<int> conditions(opt.instances);
  for (std::size_t i = 0; i < opt.instances; ++i) conditions[i] = probe.conditions[i % probe.size()];

  std::ofstream out(opt.out, std::ios::trunc);
  if (!out) throw Error("cannot write " + opt.out);
  RouterTraceWriter writer(out);
  std::size_t current_step = 0;
  int current_t = 0;
  auto predictor = [&](const Tensor& z, std::span<const int> c, std::span<const int> t) {
    return model.forward(z, c, t, nullptr, [&](const std::string& layer, const Tensor& s) {
      writer.write_batch(current_step, layer, current_t, s);
    });
  };
  ancestral_sample(predictor, cfg.schedule.build(), conditions, cfg.model.data_width, opt.seed, opt.steps, false,
                   [&](std::size_t step, int t) {
                     current_step = step;
                     current_t = t;
                   });
  log << "export-router: " << writer.records() << " records to " << opt.out << '\n';
  return writer.records();
}

struct InspectOptions {
  std::string checkpoint;
  std::optional<std::string> config;
  bool force = false;
};

inline Json cmd_inspect_checkpoint(const InspectOptions& opt, std::ostream& out = std::cout,
                                   std::ostream& log = std::cerr) {
  std::optional<std::uint64_t> expected;
  if (opt.config) expected = config_hash(load_run_config(*opt.config));
  Checkpoint ckpt = open_run_checkpoint(opt.checkpoint, expected, opt.force);
  for (const auto& w : ckpt.warnings) log << "warning: " << w << '\n';
  Json tensors = Json::array();
  std::size_t elements = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
    elements += t.numel();
  }
  Json meta = Json::object();
  for (const auto& [k, v] : ckpt.metadata)
    if (k != "config") meta[k] = v;
  Json j{{"version", ckpt.version},
         {"step", ckpt.step},
         {"config_hash", hex64(ckpt.config_hash)},
         {"tensor_count", ckpt.tensors.size()},
         {"elements", elements},
         {"tensors", tensors},
         {"metadata", meta}};
  out << j.dump(2) << '\n';
  return j;
}

}  // namespace styleinject
