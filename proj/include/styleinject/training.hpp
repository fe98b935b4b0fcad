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
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "styleinject/diffusion.hpp"
#include "styleinject/host.hpp"
#include "styleinject/optim.hpp"

namespace styleinject {

struct TrainSettings {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  std::size_t grad_accum = 2;
  double lr = 1e-4;
  std::size_t checkpoint_interval = 1000;
  std::size_t validation_size = 64;
  std::uint64_t seed = 0;
  // Skip optimisation when the initial held-out loss is at or below this.
  // Negative disables the check.
  double converged_below = -1.0;

  void validate() const {
    if (batch_size == 0 || grad_accum == 0) throw ConfigError("batch_size and grad_accum must be positive");
    if (checkpoint_interval == 0) throw ConfigError("checkpoint_interval must be positive");
    if (validation_size == 0) throw ConfigError("validation_size must be positive");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  }
};

// Scalar objective for one micro-batch plus named components for logging.
struct LossParts {
  Tensor total;
  std::vector<double> components;
};

struct TrainLogRow {
  std::size_t step = 0;
  double total = 0.0;
  std::vector<double> components;
  double lr = 0.0;
  std::optional<std::size_t> checkpoint_id;
};

struct CheckpointRecord {
  std::size_t id = 0;
  std::size_t step = 0;
  double heldout = 0.0;
  ParameterList snapshot;  // cloned trainable parameters
};

struct TrainResult {
  std::vector<TrainLogRow> rows;
  std::vector<CheckpointRecord> checkpoints;
  std::size_t best_checkpoint = 0;  // index into checkpoints, lowest held-out loss
  double initial_heldout = 0.0;
  double final_heldout = 0.0;
  bool converged_at_init = false;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_row;
  std::function<void(const CheckpointRecord&)> on_checkpoint;
};

inline ParameterList snapshot(const ParameterList& params) {
  ParameterList out;
  for (const auto& p : params) out.push_back({p.name, p.tensor.detach().clone()});
  return out;
}

// Adam over `trainable`, averaging gradients over grad_accum micro-batches.
// Checkpoint 0 is the initial state; checkpoint k is taken after step
// k·interval. The best checkpoint has the lowest held-out loss.
inline TrainResult run_training_loop(const TrainSettings& settings, ParameterList trainable,
                                     const std::function<LossParts(Rng&)>& micro_batch_loss,
                                     const std::function<double()>& heldout,
                                     const TrainHooks& hooks = {}) {
  settings.validate();
  TrainResult result;
  AdamState optimizer;
  optimizer.lr = settings.lr;
  Rng rng(settings.seed);

  result.checkpoints.reserve(settings.steps / settings.checkpoint_interval + 1);
  {
    CheckpointRecord init;
    init.heldout = heldout();
    init.snapshot = snapshot(trainable);
    result.initial_heldout = init.heldout;
    if (hooks.on_checkpoint) hooks.on_checkpoint(init);
    result.checkpoints.push_back(std::move(init));
  }
  if (result.initial_heldout <= settings.converged_below) {
    result.converged_at_init = true;
    result.final_heldout = result.initial_heldout;
    return result;
  }

  zero_grads(trainable);
  const double accum_scale = 1.0 / static_cast<double>(settings.grad_accum);
  for (std::size_t step = 1; step <= settings.steps; ++step) {
    TrainLogRow row;
    row.step = step;
    row.lr = settings.lr;
    for (std::size_t micro = 0; micro < settings.grad_accum; ++micro) {
      Tape tape;
      LossParts parts;
      Tensor scaled;
      {
        auto rec = tape.record();
        parts = micro_batch_loss(rng);
        scaled = scale(parts.total, accum_scale);
      }
      const double value = parts.total.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (micro-batch " +
                           std::to_string(micro) + ")");
      }
      if (scaled.requires_grad()) tape.backward(scaled);
      row.total += value * accum_scale;
      if (row.components.empty()) row.components.assign(parts.components.size(), 0.0);
      for (std::size_t c = 0; c < parts.components.size(); ++c) {
        row.components[c] += parts.components[c] * accum_scale;
      }
    }
    optimizer_step(trainable, optimizer);
    if (step % settings.checkpoint_interval == 0) {
      row.checkpoint_id = result.checkpoints.size();
      CheckpointRecord ckpt;
      ckpt.id = *row.checkpoint_id;
      ckpt.step = step;
      ckpt.heldout = heldout();
      ckpt.snapshot = snapshot(trainable);
      if (hooks.on_checkpoint) hooks.on_checkpoint(ckpt);
      if (ckpt.heldout < result.checkpoints[result.best_checkpoint].heldout) result.best_checkpoint = ckpt.id;
      result.checkpoints.push_back(std::move(ckpt));
    }
    if (hooks.on_row) hooks.on_row(row);
    result.rows.push_back(std::move(row));
  }
  result.final_heldout = heldout();
  return result;
}

// Restores trainable parameters from a checkpoint snapshot (same order/names).
inline void restore(ParameterList& params, const ParameterList& snap) {
  if (params.size() != snap.size()) throw ContractError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != snap[i].name || params[i].tensor.shape() != snap[i].tensor.shape()) {
      throw ContractError("restore: parameter '" + params[i].name + "' does not match snapshot");
    }
    auto dst = params[i].tensor.mutable_values();
    auto src = snap[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// Fixed validation draw used for every held-out evaluation in a run.
inline NoisedBatch make_validation_batch(const NoiseSchedule& schedule, const ToyDataset& data,
                                         std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Batch b = sample_batch(data, size, rng);
  return noise_batch(schedule, b, rng);
}

// ---------------------------------------------------------------------------
// Data-driven fine-tuning (task loss).

// Adapter-only fine-tuning; base weights receive no gradient.
inline TrainResult finetune_adapters(AttachedModel& model, const NoiseSchedule& schedule,
                                     const ToyDataset& data, const TrainSettings& settings,
                                     const TrainHooks& hooks = {}) {
  auto predictor = [&](const Tensor& z, std::span<const int> c, std::span<const int> t) {
    return model.forward(z, c, t);
  };
  const NoisedBatch validation =
      make_validation_batch(schedule, data, settings.validation_size, settings.seed ^ 0x5eedULL);
  auto heldout = [&] {
    return mse(predictor(validation.z, validation.conditions, validation.timesteps), validation.noise).item();
  };
  auto loss = [&](Rng& rng) {
    Batch b = sample_batch(data, settings.batch_size, rng);
    Tensor l = task_loss(predictor, schedule, b, rng);
    return LossParts{l, {l.item()}};
  };
  return run_training_loop(settings, model.trainable_parameters(), loss, heldout, hooks);
}

// Full tuning of every denoiser weight except the condition embedder.
inline TrainResult finetune_full(ToyDenoiser& model, const NoiseSchedule& schedule, const ToyDataset& data,
                                 const TrainSettings& settings, const TrainHooks& hooks = {}) {
  ParameterList params = model.denoiser_parameters();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  auto predictor = [&](const Tensor& z, std::span<const int> c, std::span<const int> t) {
    return model.forward(z, c, t);
  };
  const NoisedBatch validation =
      make_validation_batch(schedule, data, settings.validation_size, settings.seed ^ 0x5eedULL);
  auto heldout = [&] {
    return mse(predictor(validation.z, validation.conditions, validation.timesteps), validation.noise).item();
  };
  auto loss = [&](Rng& rng) {
    Batch b = sample_batch(data, settings.batch_size, rng);
    Tensor l = task_loss(predictor, schedule, b, rng);
    return LossParts{l, {l.item()}};
  };
  TrainResult result;
  try {
    result = run_training_loop(settings, params, loss, heldout, hooks);
  } catch (...) {
    for (auto& p : params) p.tensor.set_requires_grad(false);
    throw;
  }
  for (auto& p : params) {
    p.tensor.set_requires_grad(false);
    p.tensor.clear_grad();
  }
  return result;
}

}  // namespace styleinject
