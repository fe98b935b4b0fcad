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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "styleinject/checkpoint.hpp"
#include "styleinject/distill.hpp"

namespace styleinject {

using Json = nlohmann::json;

enum class RunMode { kFinetune, kDistill, kFewshot };

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::kFinetune: return "finetune";
    case RunMode::kDistill: return "distill";
    case RunMode::kFewshot: return "fewshot";
  }
  return "finetune";
}

inline RunMode parse_mode(const std::string& text) {
  if (text == "finetune") return RunMode::kFinetune;
  if (text == "distill") return RunMode::kDistill;
  if (text == "fewshot") return RunMode::kFewshot;
  throw ConfigError("unknown mode '" + text + "' (expected finetune|distill|fewshot)");
}

struct ScheduleSpec {
  std::size_t steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  NoiseSchedule build() const { return make_schedule(steps, beta_min, beta_max); }
};

struct DataSection {
  DatasetSpec spec;
  std::size_t fewshot_samples = 4;
  std::uint64_t translator_seed = 0;  // nonzero: condition ids are relabelled
};

struct DistillSection {
  std::string teacher_checkpoint;
  std::string student_base_checkpoint;
  DistillScenario scenario = DistillScenario::kShared;
  double lambda_outkd = kDefaultLambdaOutKd;
  double lambda_featkd = kDefaultLambdaFeatKd;
  std::vector<std::string> feature_layers;  // empty: every adapted layer
  std::uint64_t translator_seed = 0;
};

// Everything a run needs, together with the code version.
struct RunConfig {
  RunMode mode = RunMode::kFinetune;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DenoiserSpec model;
  std::string base_checkpoint;
  bool full_tuning = false;  // adapter.method == "full"
  AdapterConfig adapter = AdapterConfig::defaults();
  DataSection data;
  ScheduleSpec schedule;
  TrainSettings train;
  DistillSection distill;

  std::uint64_t adapter_seed() const { return seed ^ 0xada9ULL; }
  std::uint64_t train_seed() const { return seed; }
};

namespace detail {

// Object view that records every key read, so leftovers can be rejected.
class JsonSection {
 public:
  JsonSection(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected true or false");
      }
      out = it->get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(where() + key + ": " + e.what());
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where() + key + ": wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  std::optional<JsonSection> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return JsonSection(*it, path_ + key + ".");
  }

  const Json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path_ + it.key() + "'");
    }
  }

  std::string where() const { return path_.empty() ? std::string("config: ") : "config " + path_; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json model_to_json(const DenoiserSpec& m) {
  return Json{{"data_width", m.data_width}, {"tokens", m.tokens}, {"width", m.width},
              {"blocks", m.blocks},         {"vocab", m.vocab},   {"seed", m.seed}};
}

inline DenoiserSpec model_from_json(const Json& j) {
  detail::JsonSection s(j, "model.");
  DenoiserSpec m;
  s.read("data_width", m.data_width);
  s.read("tokens", m.tokens);
  s.read("width", m.width);
  s.read("blocks", m.blocks);
  s.read("vocab", m.vocab);
  s.read("seed", m.seed);
  std::string ignored;
  s.read("base_checkpoint", ignored);
  s.finish();
  m.validate();
  return m;
}

inline Json adapter_to_json(const AdapterConfig& a, bool full_tuning) {
  Json targets = Json::object();
  for (const auto& t : a.targets) targets[t.layer] = to_string(t.policy);
  return Json{{"method", full_tuning ? std::string("full") : to_string(a.method)},
              {"rank", a.rank},
              {"styles", a.styles},
              {"alpha", a.alpha},
              {"eps", a.eps},
              {"targets", targets}};
}

inline AdapterConfig adapter_from_json(const Json& j, bool* full_tuning = nullptr) {
  detail::JsonSection s(j, "adapter.");
  AdapterConfig a = AdapterConfig::defaults();
  std::string method = "styleinject";
  s.read("method", method);
  const bool full = method == "full";
  if (!full) a.method = parse_method(method);
  if (full_tuning) *full_tuning = full;
  s.read("rank", a.rank);
  a.alpha = static_cast<double>(a.rank);  // alpha defaults to 1.0 × r
  s.read("styles", a.styles);
  s.read("alpha", a.alpha);
  s.read("eps", a.eps);
  if (const Json* targets = s.raw("targets")) {
    if (!targets->is_object()) throw ConfigError("config adapter.targets must map layer names to policies");
    a.targets.clear();
    for (auto it = targets->begin(); it != targets->end(); ++it) {
      if (!it->is_string()) throw ConfigError("config adapter.targets." + it.key() + ": expected a policy name");
      a.targets.push_back({it.key(), parse_policy(it->get<std::string>())});
    }
  }
  s.finish();
  a.validate();
  return a;
}

inline Json to_json(const RunConfig& c) {
  Json model = model_to_json(c.model);
  model["base_checkpoint"] = c.base_checkpoint;
  const auto& d = c.data.spec;
  return Json{
      {"mode", to_string(c.mode)},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"model", model},
      {"adapter", adapter_to_json(c.adapter, c.full_tuning)},
      {"data",
       {{"conditions", d.conditions},
        {"samples", d.samples},
        {"center_scale", d.center_scale},
        {"spread", d.spread},
        {"anisotropy", d.anisotropy},
        {"seed", d.seed},
        {"style_seed", d.style_seed},
        {"fewshot_samples", c.data.fewshot_samples},
        {"translator_seed", c.data.translator_seed}}},
      {"schedule", {{"steps", c.schedule.steps}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch_size", c.train.batch_size},
        {"grad_accum", c.train.grad_accum},
        {"lr", c.train.lr},
        {"checkpoint_interval", c.train.checkpoint_interval},
        {"validation_size", c.train.validation_size}}},
      {"distill",
       {{"teacher_checkpoint", c.distill.teacher_checkpoint},
        {"student_base_checkpoint", c.distill.student_base_checkpoint},
        {"scenario", to_string(c.distill.scenario)},
        {"lambda_outkd", c.distill.lambda_outkd},
        {"lambda_featkd", c.distill.lambda_featkd},
        {"feature_layers", c.distill.feature_layers},
        {"translator_seed", c.distill.translator_seed}}},
  };
}

// Sorted keys, defaults filled in, output location dropped: the form that is
// hashed and stored in checkpoints.
inline std::string canonical_json(const RunConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  return j.dump();
}

inline std::uint64_t config_hash(const RunConfig& c) { return config_hash(canonical_json(c)); }

inline void validate(const RunConfig& c) {
  c.model.validate();
  c.adapter.validate();
  c.data.spec.validate();
  c.train.validate();
  if (c.data.spec.conditions > c.model.vocab) {
    throw ConfigError("data.conditions (" + std::to_string(c.data.spec.conditions) + ") exceeds model.vocab (" +
                      std::to_string(c.model.vocab) + ")");
  }
  if (c.mode == RunMode::kFewshot && c.data.fewshot_samples == 0) {
    throw ConfigError("fewshot mode needs data.fewshot_samples >= 1");
  }
  if (c.mode == RunMode::kDistill) {
    if (c.full_tuning) throw ConfigError("distillation trains adapters only; adapter.method 'full' is not allowed");
    if (c.distill.teacher_checkpoint.empty()) throw ConfigError("distill.teacher_checkpoint is required");
    DistillConfig dc;
    dc.scenario = c.distill.scenario;
    dc.lambda_outkd = c.distill.lambda_outkd;
    dc.lambda_featkd = c.distill.lambda_featkd;
    dc.settings = c.train;
    dc.validate();
  }
  if (c.schedule.steps == 0) throw ConfigError("schedule.steps must be positive");
  (void)c.schedule.build();
}

inline RunConfig parse_run_config(const Json& j) {
  detail::JsonSection root(j, "");
  RunConfig c;
  std::string mode = "finetune";
  root.read("mode", mode);
  c.mode = parse_mode(mode);
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  if (const Json* m = root.raw("model")) {
    c.model = model_from_json(*m);
    if (m->contains("base_checkpoint")) {
      if (!(*m)["base_checkpoint"].is_string()) throw ConfigError("config model.base_checkpoint: expected a path");
      c.base_checkpoint = (*m)["base_checkpoint"].get<std::string>();
    }
  }
  if (const Json* a = root.raw("adapter")) c.adapter = adapter_from_json(*a, &c.full_tuning);
  if (auto d = root.child("data")) {
    auto& spec = c.data.spec;
    d->read("conditions", spec.conditions);
    d->read("samples", spec.samples);
    d->read("center_scale", spec.center_scale);
    d->read("spread", spec.spread);
    d->read("anisotropy", spec.anisotropy);
    d->read("seed", spec.seed);
    d->read("style_seed", spec.style_seed);
    d->read("fewshot_samples", c.data.fewshot_samples);
    d->read("translator_seed", c.data.translator_seed);
    d->finish();
  }
  if (auto s = root.child("schedule")) {
    s->read("steps", c.schedule.steps);
    s->read("beta_min", c.schedule.beta_min);
    s->read("beta_max", c.schedule.beta_max);
    s->finish();
  }
  if (auto t = root.child("train")) {
    t->read("steps", c.train.steps);
    t->read("batch_size", c.train.batch_size);
    t->read("grad_accum", c.train.grad_accum);
    t->read("lr", c.train.lr);
    t->read("checkpoint_interval", c.train.checkpoint_interval);
    t->read("validation_size", c.train.validation_size);
    t->finish();
  }
  if (auto d = root.child("distill")) {
    d->read("teacher_checkpoint", c.distill.teacher_checkpoint);
    d->read("student_base_checkpoint", c.distill.student_base_checkpoint);
    std::string scenario = "shared";
    d->read("scenario", scenario);
    c.distill.scenario = parse_scenario(scenario);
    // Unshared encoders rule out feature distillation, so its weight
    // defaults to 0 there and any explicit positive value is rejected.
    if (c.distill.scenario == DistillScenario::kUnshared) c.distill.lambda_featkd = 0.0;
    d->read("lambda_outkd", c.distill.lambda_outkd);
    d->read("lambda_featkd", c.distill.lambda_featkd);
    d->read("feature_layers", c.distill.feature_layers);
    d->read("translator_seed", c.distill.translator_seed);
    d->finish();
  }
  root.finish();
  c.train.seed = c.train_seed();
  validate(c);
  return c;
}

inline RunConfig parse_run_config_text(const std::string& text, const std::string& source = "config") {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
  return parse_run_config(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str(), path.string());
}

}  // namespace styleinject
