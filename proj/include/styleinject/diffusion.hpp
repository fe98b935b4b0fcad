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

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "styleinject/ops.hpp"
#include "styleinject/random.hpp"

namespace styleinject {

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  std::size_t steps() const { return betas.size(); }
};

// Linear β ramp from beta_min to beta_max over T steps.
inline NoiseSchedule make_schedule(std::size_t T, double beta_min, double beta_max) {
  if (T == 0) throw ConfigError("noise schedule needs T >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("noise schedule bounds must satisfy 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double running = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    s.betas[i] = beta_min + (beta_max - beta_min) * frac;
    s.alphas[i] = 1.0 - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

// z_t = √ᾱ_t·x0 + √(1-ᾱ_t)·noise, one timestep per row of x0.
inline Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, std::span<const int> t,
                       const Tensor& noise) {
  if (x0.shape() != noise.shape()) {
    throw DimensionError("q_sample: noise shape " + shape_string(noise.shape()) +
                         " differs from x0 " + shape_string(x0.shape()));
  }
  const std::size_t rows = x0.rank() == 0 ? 1 : x0.dim(0);
  if (t.size() != rows) throw ContractError("q_sample: need one timestep per row");
  const std::size_t width = x0.numel() / std::max<std::size_t>(rows, 1);
  std::vector<double> out(x0.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    if (t[r] < 0 || static_cast<std::size_t>(t[r]) >= schedule.steps()) {
      throw ContractError("q_sample: timestep " + std::to_string(t[r]) + " outside [0, " +
                          std::to_string(schedule.steps()) + ")");
    }
    const double ab = schedule.alpha_bars[t[r]];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      out[i] = a * x0[i] + b * noise[i];
    }
  }
  return Tensor(x0.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Synthetic data

// Per-condition Gaussian clusters. The cluster centre carries the
// condition's "semantics"; the per-dimension spread profile is the "style".
struct DatasetSpec {
  std::size_t conditions = 4;
  std::size_t samples = 256;
  double center_scale = 1.0;
  double spread = 0.3;
  double anisotropy = 0.0;     // 0: isotropic; towards 1: strongly dimension-dependent spread
  std::uint64_t seed = 7;      // centres and samples
  std::uint64_t style_seed = 0;  // orientation of the spread profile

  void validate() const {
    if (conditions == 0) throw ConfigError("dataset needs at least one condition");
    if (samples == 0) throw ConfigError("dataset needs at least one sample");
    if (!(spread >= 0.0) || !(center_scale >= 0.0)) throw ConfigError("dataset scales must be >= 0");
    if (!(anisotropy >= 0.0 && anisotropy < 1.0)) throw ConfigError("anisotropy must be in [0, 1)");
  }
};

// Seeded bijection over condition ids; stands in for translating prompts
// between two condition vocabularies.
inline std::vector<int> make_translator(std::size_t vocab, std::uint64_t seed) {
  std::vector<int> perm(vocab);
  std::iota(perm.begin(), perm.end(), 0);
  if (seed == 0) return perm;
  Rng rng(seed);
  for (std::size_t i = vocab; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  return perm;
}

struct ToyDataset {
  std::size_t width = 0;
  std::vector<double> samples;  // row-major [count, width]
  std::vector<int> conditions;

  std::size_t size() const { return conditions.size(); }

  Tensor rows(std::span<const std::size_t> index) const {
    std::vector<double> out(index.size() * width);
    for (std::size_t r = 0; r < index.size(); ++r)
      std::copy_n(samples.begin() + index[r] * width, width, out.begin() + r * width);
    return Tensor({index.size(), width}, std::move(out));
  }

  // First `count` samples only; the few-shot regime.
  ToyDataset head(std::size_t count) const {
    ToyDataset out;
    out.width = width;
    count = std::min(count, size());
    out.samples.assign(samples.begin(), samples.begin() + count * width);
    out.conditions.assign(conditions.begin(), conditions.begin() + count);
    return out;
  }
};

inline ToyDataset make_dataset(const DatasetSpec& spec, std::size_t width) {
  spec.validate();
  if (width == 0) throw ConfigError("dataset width must be positive");
  Rng rng(spec.seed);
  std::vector<double> centers(spec.conditions * width);
  for (auto& c : centers) c = spec.center_scale * rng.normal();
  std::vector<double> profile(width, spec.spread);
  if (spec.anisotropy > 0.0) {
    const double phase = Rng(spec.style_seed).uniform() * 2.0 * std::numbers::pi;
    for (std::size_t j = 0; j < width; ++j) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(width);
      profile[j] = spec.spread * (1.0 + spec.anisotropy * std::cos(angle + phase));
    }
  }
  ToyDataset data;
  data.width = width;
  data.samples.resize(spec.samples * width);
  data.conditions.resize(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t c = i % spec.conditions;
    data.conditions[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < width; ++j) {
      data.samples[i * width + j] = centers[c * width + j] + profile[j] * rng.normal();
    }
  }
  return data;
}

// Same samples, condition ids mapped through `translator`.
inline ToyDataset translate_conditions(ToyDataset data, std::span<const int> translator) {
  for (auto& c : data.conditions) {
    if (c < 0 || static_cast<std::size_t>(c) >= translator.size()) {
      throw ContractError("condition " + std::to_string(c) + " has no translation");
    }
    c = translator[static_cast<std::size_t>(c)];
  }
  return data;
}

struct Batch {
  Tensor x0;
  std::vector<int> conditions;
};

// Uniform draw with replacement.
inline Batch sample_batch(const ToyDataset& data, std::size_t batch_size, Rng& rng) {
  if (data.size() == 0) throw ContractError("cannot sample from an empty dataset");
  std::vector<std::size_t> index(batch_size);
  Batch b;
  for (auto& i : index) {
    i = rng.index(data.size());
    b.conditions.push_back(data.conditions[i]);
  }
  b.x0 = data.rows(index);
  return b;
}

// ---------------------------------------------------------------------------
// Training objective and sampler

// Anything mapping (z_t, conditions, timesteps) to predicted noise.
template <typename F>
concept NoisePredictor = requires(const F& f, const Tensor& z, std::span<const int> c,
                                  std::span<const int> t) {
  { f(z, c, t) } -> std::convertible_to<Tensor>;
};

// Noised inputs drawn for one batch: the same draw can be replayed against
// several models.
struct NoisedBatch {
  Tensor z;
  Tensor noise;
  std::vector<int> timesteps;
  std::vector<int> conditions;
};

inline NoisedBatch noise_batch(const NoiseSchedule& schedule, const Batch& batch, Rng& rng) {
  if (batch.conditions.empty()) throw ContractError("batch must be non-empty");
  NoisedBatch nb;
  nb.timesteps.resize(batch.conditions.size());
  for (auto& t : nb.timesteps) t = static_cast<int>(rng.index(schedule.steps()));
  nb.noise = rng.normal(batch.x0.shape());
  nb.z = q_sample(schedule, batch.x0, nb.timesteps, nb.noise);
  nb.conditions = batch.conditions;
  return nb;
}

// E‖ε − ε_θ(z_t, y, t)‖², reduced as the mean over all elements.
template <NoisePredictor Model>
Tensor task_loss(const Model& model, const NoiseSchedule& schedule, const Batch& batch, Rng& rng) {
  NoisedBatch nb = noise_batch(schedule, batch, rng);
  return mse(model(nb.z, nb.conditions, nb.timesteps), nb.noise);
}

struct SampleTrajectory {
  std::vector<int> timesteps;  // visited, descending
  std::vector<Tensor> states;  // states[0] is the initial noise; one more per update
  Tensor final_sample;
  std::size_t model_calls = 0;
};

// Evenly strided timesteps, ascending: floor(i·T/steps).
inline std::vector<int> sampler_timesteps(std::size_t T, std::size_t steps) {
  if (steps == 0 || steps > T) {
    throw ContractError("sampler steps must be in [1, " + std::to_string(T) + "]");
  }
  std::vector<int> out(steps);
  for (std::size_t i = 0; i < steps; ++i) out[i] = static_cast<int>(i * T / steps);
  return out;
}

using SamplerStepObserver = std::function<void(std::size_t step, int t)>;

// DDPM ancestral sampling on a strided schedule, starting from N(0, I).
template <NoisePredictor Model>
SampleTrajectory ancestral_sample(const Model& model, const NoiseSchedule& schedule,
                                  std::span<const int> conditions, std::size_t data_width,
                                  std::uint64_t seed, std::size_t steps, bool keep_states = true,
                                  const SamplerStepObserver& on_step = {}) {
  const auto taus = sampler_timesteps(schedule.steps(), steps);
  const std::size_t batch = conditions.size();
  if (batch == 0) throw ContractError("ancestral_sample: no conditions given");
  Rng rng(seed);
  SampleTrajectory traj;
  Tensor x = rng.normal({batch, data_width});
  if (keep_states) traj.states.push_back(x);
  std::vector<int> cond(conditions.begin(), conditions.end());
  for (std::size_t k = steps; k-- > 0;) {
    const int t = taus[k];
    const double ab = schedule.alpha_bars[t];
    const double ab_prev = k == 0 ? 1.0 : schedule.alpha_bars[taus[k - 1]];
    const double alpha = ab / ab_prev;
    const double beta = 1.0 - alpha;
    if (on_step) on_step(steps - 1 - k, t);
    std::vector<int> tt(batch, t);
    Tensor eps = model(x, cond, tt);
    ++traj.model_calls;
    traj.timesteps.push_back(t);
    const double coef = beta / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    const double sigma = k == 0 ? 0.0 : std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
    std::vector<double> next(x.numel());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = inv_sqrt_alpha * (x[i] - coef * eps[i]);
      if (sigma > 0.0) next[i] += sigma * rng.normal();
    }
    x = Tensor(x.shape(), std::move(next));
    if (keep_states) traj.states.push_back(x);
  }
  traj.final_sample = x;
  return traj;
}

// `step,instance,x0,x1,...` with one row per stored state and instance.
inline void write_trajectory_csv(std::ostream& out, const SampleTrajectory& traj) {
  if (traj.states.empty()) return;
  const std::size_t width = traj.states.front().dim(1);
  out << "step,instance";
  for (std::size_t j = 0; j < width; ++j) out << ",x" << j;
  out << '\n';
  char buf[32];
  for (std::size_t s = 0; s < traj.states.size(); ++s) {
    const auto& st = traj.states[s];
    for (std::size_t b = 0; b < st.dim(0); ++b) {
      out << s << ',' << b;
      for (std::size_t j = 0; j < width; ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", st[b * width + j]);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace styleinject
