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
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "styleinject/adapters.hpp"
#include "styleinject/manifest.hpp"

namespace styleinject {

struct DenoiserSpec {
  std::size_t data_width = 16;  // flattened sample width D
  std::size_t tokens = 4;       // D is split into `tokens` patches of D / tokens values
  std::size_t width = 16;       // model width d
  std::size_t blocks = 2;       // K
  std::size_t vocab = 8;        // condition vocabulary
  std::uint64_t seed = 1;

  std::size_t patch() const { return data_width / tokens; }

  void validate() const {
    if (data_width == 0 || tokens == 0 || width == 0 || blocks == 0 || vocab == 0) {
      throw ConfigError("denoiser widths, token count, block count and vocab must be positive");
    }
    if (data_width % tokens != 0) {
      throw ConfigError("data_width " + std::to_string(data_width) + " is not divisible by tokens " +
                        std::to_string(tokens));
    }
    if (width % 2 != 0) throw ConfigError("model width must be even for the timestep embedding");
  }

  bool operator==(const DenoiserSpec&) const = default;
};

// Called for every named projection. Returning an undefined tensor keeps the
// frozen projection.
using ProjectionHook =
    std::function<Tensor(const std::string& name, const FrozenLinear& base, const Tensor& x)>;

struct ForwardHooks {
  ProjectionHook project;
  std::map<std::string, Tensor>* features = nullptr;  // captures every projection output
};

// Fixed sin/cos features of the integer timestep, [B, d].
inline Tensor timestep_features(std::span<const int> t, std::size_t width) {
  const std::size_t half = width / 2;
  std::vector<double> out(t.size() * width);
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      out[b * width + i] = std::sin(t[b] * freq);
      out[b * width + half + i] = std::cos(t[b] * freq);
    }
  return Tensor({t.size(), width}, std::move(out));
}

// Conditional noise predictor at desk scale: a patch stem, K attention-style
// blocks with named to_q/to_k/to_v/to_out projections whose keys and values
// see the condition embedding, and a linear head back to data width.
class ToyDenoiser {
 public:
  ToyDenoiser() = default;

  static ToyDenoiser build(const DenoiserSpec& spec) {
    spec.validate();
    ToyDenoiser m;
    m.spec_ = spec;
    Rng rng(spec.seed);
    const std::size_t d = spec.width, p = spec.patch();
    auto dense = [&](std::size_t out, std::size_t in) {
      return rng.normal({out, in}, 1.0 / std::sqrt(static_cast<double>(in)));
    };
    m.in_weight_ = dense(d, p);
    m.in_bias_ = Tensor::zeros({d});
    m.positions_ = rng.normal({spec.tokens, d}, 0.5);
    m.time_weight_ = dense(d, d);
    m.condition_table_ = rng.normal({spec.vocab, d}, 1.0);
    for (std::size_t j = 0; j < spec.blocks; ++j) {
      const std::string block = "block" + std::to_string(j);
      m.layers_.push_back({block + ".to_q", {dense(d, d), Tensor()}});
      m.layers_.push_back({block + ".to_k", {dense(d, d), Tensor()}});
      m.layers_.push_back({block + ".to_v", {dense(d, d), Tensor()}});
      m.layers_.push_back({block + ".to_out", {dense(d, d), Tensor::zeros({d})}});
    }
    m.layers_.push_back({"head", {dense(p, d), Tensor::zeros({p})}});
    return m;
  }

  const DenoiserSpec& spec() const { return spec_; }

  // to_q layers are tagged styleinject and to_v layers lora; everything else
  // is frozen unless a config says otherwise.
  LayerManifest manifest() const {
    std::vector<ManifestEntry> entries;
    for (const auto& [name, layer] : layers_) {
      ManifestEntry e;
      e.name = name;
      e.kind = LayerKind::kLinear;
      e.d_in = layer.d_in();
      e.d_out = layer.d_out();
      e.policy = target_matches("to_q", name)   ? AdaptPolicy::kStyleInject
                 : target_matches("to_v", name) ? AdaptPolicy::kLora
                                                : AdaptPolicy::kFrozen;
      entries.push_back(e);
    }
    return LayerManifest(std::move(entries));
  }

  const FrozenLinear& layer(const std::string& name) const {
    for (const auto& [n, l] : layers_)
      if (n == name) return l;
    throw ContractError("no layer named '" + name + "'");
  }

  bool has_layer(const std::string& name) const {
    for (const auto& entry : layers_)
      if (entry.first == name) return true;
    return false;
  }

  // The condition embedder stands in for the text encoder.
  const Tensor& condition_table() const { return condition_table_; }

  // Every parameter, stable order.
  ParameterList parameters() const {
    ParameterList out = denoiser_parameters();
    out.insert(out.begin(), {"cond.embedding", condition_table_});
    return out;
  }

  // Everything except the condition embedder.
  ParameterList denoiser_parameters() const {
    ParameterList out{{"stem.in_proj.weight", in_weight_},
                      {"stem.in_proj.bias", in_bias_},
                      {"stem.positions", positions_},
                      {"stem.time.weight", time_weight_}};
    for (const auto& [name, layer] : layers_) {
      out.push_back({name + ".weight", layer.weight});
      if (layer.bias.defined()) out.push_back({name + ".bias", layer.bias});
    }
    return out;
  }

  // Independent storage with identical values.
  ToyDenoiser clone() const {
    ToyDenoiser m = *this;
    m.in_weight_ = in_weight_.clone();
    m.in_bias_ = in_bias_.clone();
    m.positions_ = positions_.clone();
    m.time_weight_ = time_weight_.clone();
    m.condition_table_ = condition_table_.clone();
    for (auto& [name, layer] : m.layers_) {
      layer.weight = layer.weight.clone();
      if (layer.bias.defined()) layer.bias = layer.bias.clone();
    }
    return m;
  }

  // Predicted noise for z: [B, D]; cond and t have one entry per instance.
  Tensor forward(const Tensor& z, std::span<const int> cond, std::span<const int> t,
                 const ForwardHooks& hooks = {}) const {
    const std::size_t batch = z.rank() == 2 ? z.dim(0) : 0;
    if (z.rank() != 2 || z.dim(1) != spec_.data_width) {
      throw DimensionError("denoiser input must be [B, " + std::to_string(spec_.data_width) +
                           "], got " + shape_string(z.shape()));
    }
    if (cond.size() != batch || t.size() != batch) {
      throw DimensionError("denoiser: need one condition and one timestep per instance");
    }
    const std::size_t d = spec_.width, L = spec_.tokens;
    const Shape tokens_shape{batch, L, d};

    auto project = [&](const std::string& name, const Tensor& x) {
      const auto& base = layer(name);
      Tensor out;
      if (hooks.project) out = hooks.project(name, base, x);
      if (!out.defined()) out = base(x);
      if (hooks.features) (*hooks.features)[name] = out;
      return out;
    };

    Tensor h = FrozenLinear{in_weight_, in_bias_}(reshape(z, {batch, L, spec_.patch()}));
    h = add(h, broadcast_to(positions_, tokens_shape));
    Tensor temb = linear(timestep_features(t, d), time_weight_);
    h = add(h, broadcast_to(reshape(temb, {batch, 1, d}), tokens_shape));
    Tensor context = broadcast_to(reshape(gather_rows(condition_table_, cond), {batch, 1, d}), tokens_shape);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t j = 0; j < spec_.blocks; ++j) {
      const std::string block = "block" + std::to_string(j);
      Tensor mixed = add(h, context);
      Tensor q = project(block + ".to_q", h);
      Tensor k = project(block + ".to_k", mixed);
      Tensor v = project(block + ".to_v", mixed);
      Tensor attention = softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), -1);
      Tensor o = project(block + ".to_out", matmul(attention, v));
      h = add(h, tanh(o));
    }
    return reshape(project("head", h), {batch, spec_.data_width});
  }

 private:
  DenoiserSpec spec_;
  Tensor in_weight_;
  Tensor in_bias_;
  Tensor positions_;
  Tensor time_weight_;
  Tensor condition_table_;
  std::vector<std::pair<std::string, FrozenLinear>> layers_;
};

inline ToyDenoiser build_toy_denoiser(const DenoiserSpec& spec) { return ToyDenoiser::build(spec); }

// Layer name and per-instance style distribution, reported on every routed call.
using LayerRouteObserver = std::function<void(const std::string& layer, const Tensor& s)>;

// A frozen base with adapters attached to a subset of its named projections.
class AttachedModel {
 public:
  AttachedModel() = default;

  AttachedModel(ToyDenoiser base, const AdapterConfig& config, std::uint64_t seed)
      : base_(std::move(base)), config_(config) {
    config_.validate();
    manifest_ = apply_targets(base_.manifest(), config_);
    Rng seeds(seed);
    for (const auto& e : manifest_.entries()) {
      const std::uint64_t layer_seed = seeds.next_seed();
      if (e.policy == AdaptPolicy::kFrozen) continue;
      adapters_.emplace_back(e.name, init_adapter(config_, e.policy, e.kind, e.d_in, e.d_out, layer_seed));
    }
  }

  const ToyDenoiser& base() const { return base_; }
  const AdapterConfig& config() const { return config_; }
  // Policies as configured (before method realisation).
  const LayerManifest& manifest() const { return manifest_; }

  const std::vector<std::pair<std::string, LayerAdapter>>& adapters() const { return adapters_; }

  LayerAdapter* adapter(const std::string& name) {
    for (auto& [n, a] : adapters_)
      if (n == name) return &a;
    return nullptr;
  }

  std::vector<std::string> routed_layers() const {
    std::vector<std::string> out;
    for (const auto& [name, a] : adapters_)
      if (std::holds_alternative<StyleInjectAdapter>(a)) out.push_back(name);
    return out;
  }

  // Adapter parameters only, in manifest order.
  ParameterList trainable_parameters() const {
    ParameterList out;
    for (const auto& [name, a] : adapters_) {
      auto params = adapter_parameters(a, "adapter." + name);
      out.insert(out.end(), params.begin(), params.end());
    }
    return out;
  }

  Tensor forward(const Tensor& z, std::span<const int> cond, std::span<const int> t,
                 std::map<std::string, Tensor>* features = nullptr,
                 const LayerRouteObserver& on_route = {}) const {
    ForwardHooks hooks;
    hooks.features = features;
    if (!adapters_.empty()) {
      hooks.project = [&](const std::string& name, const FrozenLinear& base, const Tensor& x) -> Tensor {
        for (const auto& [n, a] : adapters_) {
          if (n != name) continue;
          RouteObserver observer;
          if (on_route) observer = [&](const Tensor& s) { on_route(name, s); };
          return adapter_forward(a, base, x, observer);
        }
        return Tensor();
      };
    }
    return base_.forward(z, cond, t, hooks);
  }

  // Drops every adapter; the result evaluates exactly like the base.
  ToyDenoiser detach() const { return base_; }

 private:
  ToyDenoiser base_;
  AdapterConfig config_;
  LayerManifest manifest_;
  std::vector<std::pair<std::string, LayerAdapter>> adapters_;
};

inline AttachedModel attach_adapters(ToyDenoiser model, const AdapterConfig& config, std::uint64_t seed) {
  return AttachedModel(std::move(model), config, seed);
}

inline ParameterList trainable_parameters(const AttachedModel& model) {
  return model.trainable_parameters();
}

}  // namespace styleinject
