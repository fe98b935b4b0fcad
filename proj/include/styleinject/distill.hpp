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

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "styleinject/training.hpp"

namespace styleinject {

enum class DistillScenario { kShared, kUnshared };

inline std::string to_string(DistillScenario s) {
  return s == DistillScenario::kShared ? "shared" : "unshared";
}

inline DistillScenario parse_scenario(const std::string& text) {
  if (text == "shared") return DistillScenario::kShared;
  if (text == "unshared") return DistillScenario::kUnshared;
  throw ConfigError("unknown distillation scenario '" + text + "' (expected shared or unshared)");
}

inline constexpr double kDefaultLambdaOutKd = 1.0;
inline constexpr double kDefaultLambdaFeatKd = 0.1;
// Held-out outkd at or below this counts as already converged. Adam would
// otherwise amplify rounding-level gradients into lr-sized steps.
inline constexpr double kConvergedOutKd = 1e-20;

struct DistillConfig {
  double lambda_outkd = kDefaultLambdaOutKd;
  double lambda_featkd = kDefaultLambdaFeatKd;
  DistillScenario scenario = DistillScenario::kShared;
  std::vector<std::string> feature_layers;
  TrainSettings settings;

  void validate() const {
    if (!(lambda_outkd >= 0.0) || !std::isfinite(lambda_outkd) || !(lambda_featkd >= 0.0) ||
        !std::isfinite(lambda_featkd)) {
      throw ConfigError("distillation weights must be finite and >= 0");
    }
    if (scenario == DistillScenario::kUnshared && lambda_featkd > 0.0) {
      throw ConfigError(
          "unshared-encoder distillation uses only the output-level loss: lambda_featkd must be 0, got " +
          std::to_string(lambda_featkd));
    }
    settings.validate();
  }
};

// Teacher and student see the same z_t and t. The student receives the
// teacher's condition id mapped through `translator`.
struct TeacherStudentPair {
  ToyDenoiser teacher;
  AttachedModel student;
  std::vector<int> translator;
  DistillScenario scenario = DistillScenario::kShared;

  void validate() const {
    if (teacher.spec().data_width != student.base().spec().data_width) {
      throw ConfigError("teacher and student must share the data width");
    }
    if (translator.size() != teacher.spec().vocab || student.base().spec().vocab != teacher.spec().vocab) {
      throw ConfigError("translator must cover the condition vocabulary of both models");
    }
  }

  std::vector<int> translate(std::span<const int> conditions) const {
    std::vector<int> out(conditions.size());
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      const int c = conditions[i];
      if (c < 0 || static_cast<std::size_t>(c) >= translator.size()) {
        throw ContractError("condition " + std::to_string(c) + " has no translation");
      }
      out[i] = translator[static_cast<std::size_t>(c)];
    }
    return out;
  }
};

inline TeacherStudentPair make_pair(ToyDenoiser teacher, AttachedModel student, DistillScenario scenario,
                                    std::uint64_t translator_seed) {
  TeacherStudentPair pair;
  const std::size_t vocab = teacher.spec().vocab;
  pair.teacher = std::move(teacher);
  pair.student = std::move(student);
  pair.scenario = scenario;
  pair.translator = make_translator(vocab, scenario == DistillScenario::kShared ? 0 : translator_seed);
  pair.validate();
  return pair;
}

namespace detail {

inline Tensor feature_distance(const std::map<std::string, Tensor>& teacher,
                               const std::map<std::string, Tensor>& student,
                               const std::vector<std::string>& layers) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& name : layers) {
    auto t = teacher.find(name);
    auto s = student.find(name);
    if (t == teacher.end() || s == student.end()) {
      throw ContractError("feature layer '" + name + "' is missing from " +
                          (t == teacher.end() ? "the teacher" : "the student"));
    }
    if (t->second.shape() != s->second.shape()) {
      throw ContractError("feature layer '" + name + "' has teacher shape " + shape_string(t->second.shape()) +
                          " but student shape " + shape_string(s->second.shape()));
    }
    total = add(total, mse(s->second, t->second));
  }
  return total;
}

inline void require_shared(const TeacherStudentPair& pair) {
  if (pair.scenario != DistillScenario::kShared) {
    throw ContractError("feature-level distillation needs a shared condition encoder");
  }
}

}  // namespace detail

// mean over elements of (ε_T − ε_S)².
inline Tensor outkd_loss(const TeacherStudentPair& pair, const Tensor& z, std::span<const int> conditions,
                         std::span<const int> t) {
  Tensor teacher = pair.teacher.forward(z, conditions, t);
  Tensor student = pair.student.forward(z, pair.translate(conditions), t);
  return mse(student, teacher);
}

// Σ over layers of the per-layer element mean of (f_T − f_S)².
inline Tensor featkd_loss(const TeacherStudentPair& pair, const Tensor& z, std::span<const int> conditions,
                          std::span<const int> t, const std::vector<std::string>& layers) {
  detail::require_shared(pair);
  if (layers.empty()) return Tensor::scalar(0.0);
  std::map<std::string, Tensor> tf, sf;
  ForwardHooks hooks;
  hooks.features = &tf;
  pair.teacher.forward(z, conditions, t, hooks);
  pair.student.forward(z, pair.translate(conditions), t, &sf);
  return detail::feature_distance(tf, sf, layers);
}

struct DistillLoss {
  Tensor total;
  double outkd = 0.0;
  double featkd = 0.0;
};

// λ_out·L_OutKD + λ_feat·L_FeatKD from one teacher and one student pass.
inline DistillLoss distill_total_loss(const TeacherStudentPair& pair, const DistillConfig& config,
                                      const NoisedBatch& batch) {
  config.validate();
  if (config.scenario != pair.scenario) {
    throw ConfigError("distillation config scenario '" + to_string(config.scenario) +
                      "' does not match the pair's '" + to_string(pair.scenario) + "'");
  }
  const bool features = config.lambda_featkd > 0.0 && !config.feature_layers.empty();
  std::map<std::string, Tensor> tf, sf;
  ForwardHooks hooks;
  if (features) hooks.features = &tf;
  const auto student_cond = pair.translate(batch.conditions);
  Tensor teacher = pair.teacher.forward(batch.z, batch.conditions, batch.timesteps, hooks);
  Tensor student = pair.student.forward(batch.z, student_cond, batch.timesteps, features ? &sf : nullptr);

  DistillLoss out;
  Tensor outkd = mse(student, teacher);
  out.outkd = outkd.item();
  out.total = scale(outkd, config.lambda_outkd);
  if (features) {
    Tensor featkd = detail::feature_distance(tf, sf, config.feature_layers);
    out.featkd = featkd.item();
    out.total = add(out.total, scale(featkd, config.lambda_featkd));
  }
  return out;
}

inline DistillLoss distill_total_loss(const TeacherStudentPair& pair, const DistillConfig& config,
                                      const NoiseSchedule& schedule, const Batch& batch, Rng& rng) {
  return distill_total_loss(pair, config, noise_batch(schedule, batch, rng));
}

// Adapter-only distillation on generic data. Log components are
// {outkd, featkd}; held-out metric is outkd on a fixed validation batch.
inline TrainResult run_distillation(TeacherStudentPair& pair, const DistillConfig& config,
                                    const NoiseSchedule& schedule, const ToyDataset& generic,
                                    const TrainHooks& hooks = {}) {
  config.validate();
  pair.validate();
  const NoisedBatch validation =
      make_validation_batch(schedule, generic, config.settings.validation_size, config.settings.seed ^ 0x5eedULL);
  auto heldout = [&] {
    return outkd_loss(pair, validation.z, validation.conditions, validation.timesteps).item();
  };
  auto loss = [&](Rng& rng) {
    Batch b = sample_batch(generic, config.settings.batch_size, rng);
    DistillLoss l = distill_total_loss(pair, config, schedule, b, rng);
    return LossParts{l.total, {l.outkd, l.featkd}};
  };
  TrainSettings settings = config.settings;
  settings.converged_below = kConvergedOutKd;
  return run_training_loop(settings, pair.student.trainable_parameters(), loss, heldout, hooks);
}

}  // namespace styleinject
