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
#include <utility>
#include <variant>
#include <vector>

#include "styleinject/ops.hpp"
#include "styleinject/optim.hpp"
#include "styleinject/random.hpp"

// Low-rank adapters for frozen projections: plain LoRA, and the style-routed
// variant that mixes n down-projections through one shared up-projection and
// re-scales the per-channel spread of the frozen output.
//
// Layer inputs are laid out [instances, positions, channels]: positions are
// tokens for linear layers and flattened spatial sites for 1×1 convolutions.
namespace styleinject {

enum class LayerKind { kLinear, kConv1x1 };
enum class AdaptPolicy { kLora, kStyleInject, kFrozen };
enum class AdapterMethod { kStyleInject, kDmaOnly, kStaOnly, kLora };

inline std::string to_string(LayerKind kind) {
  return kind == LayerKind::kLinear ? "linear" : "conv1x1";
}

inline std::string to_string(AdaptPolicy policy) {
  switch (policy) {
    case AdaptPolicy::kLora: return "lora";
    case AdaptPolicy::kStyleInject: return "styleinject";
    case AdaptPolicy::kFrozen: return "frozen";
  }
  return "frozen";
}

inline std::string to_string(AdapterMethod method) {
  switch (method) {
    case AdapterMethod::kStyleInject: return "styleinject";
    case AdapterMethod::kDmaOnly: return "dma";
    case AdapterMethod::kStaOnly: return "sta";
    case AdapterMethod::kLora: return "lora";
  }
  return "styleinject";
}

inline LayerKind parse_layer_kind(const std::string& text) {
  if (text == "linear") return LayerKind::kLinear;
  if (text == "conv1x1" || text == "conv-1x1") return LayerKind::kConv1x1;
  throw ConfigError("unknown layer kind '" + text + "'");
}

inline AdaptPolicy parse_policy(const std::string& text) {
  if (text == "lora") return AdaptPolicy::kLora;
  if (text == "styleinject") return AdaptPolicy::kStyleInject;
  if (text == "frozen") return AdaptPolicy::kFrozen;
  throw ConfigError("unknown adapt policy '" + text + "'");
}

inline AdapterMethod parse_method(const std::string& text) {
  if (text == "styleinject") return AdapterMethod::kStyleInject;
  if (text == "dma") return AdapterMethod::kDmaOnly;
  if (text == "sta") return AdapterMethod::kStaOnly;
  if (text == "lora") return AdapterMethod::kLora;
  throw ConfigError("unknown adapter method '" + text + "' (expected styleinject|dma|sta|lora)");
}

struct LayerTarget {
  std::string layer;  // full layer name, or its last dotted component ("to_q")
  AdaptPolicy policy = AdaptPolicy::kLora;
};

struct AdapterConfig {
  std::size_t rank = 32;
  std::size_t styles = 16;
  double alpha = 32.0;  // lora_alpha = 1.0 × rank
  double eps = 1e-5;
  AdapterMethod method = AdapterMethod::kStyleInject;
  std::vector<LayerTarget> targets;

  // r = 32, n = 16, alpha = r; style adapters after to_q, LoRA on to_v.
  static AdapterConfig defaults() {
    AdapterConfig c;
    c.targets = {{"to_q", AdaptPolicy::kStyleInject}, {"to_v", AdaptPolicy::kLora}};
    return c;
  }

  double scale() const { return alpha / static_cast<double>(rank); }

  std::size_t effective_styles() const {
    return method == AdapterMethod::kStaOnly ? 1 : styles;
  }

  // How a layer tagged `policy` is realised under this method.
  AdaptPolicy realised(AdaptPolicy policy) const {
    if (policy == AdaptPolicy::kStyleInject && method == AdapterMethod::kLora) {
      return AdaptPolicy::kLora;
    }
    return policy;
  }

  void validate() const {
    if (rank == 0) throw ConfigError("adapter rank must be positive");
    if (styles == 0) throw ConfigError("style count n must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive");
    if (!(eps > 0.0)) throw ConfigError("variance floor eps must be positive");
  }
};

// ---------------------------------------------------------------------------
// Frozen host projection h = W₀x (+ b).

struct FrozenLinear {
  Tensor weight;  // [d_out, d_in]
  Tensor bias;    // [d_out] or undefined

  std::size_t d_in() const { return weight.dim(1); }
  std::size_t d_out() const { return weight.dim(0); }

  Tensor operator()(const Tensor& x) const {
    Tensor h = linear(x, weight);
    if (bias.defined()) h = add(h, broadcast_to(bias, h.shape()));
    return h;
  }
};

// ---------------------------------------------------------------------------
// LoRA

struct LoraAdapter {
  Tensor A;  // [r, k]
  Tensor B;  // [d, r]
  double alpha = 1.0;

  std::size_t rank() const { return A.dim(0); }
  double scale() const { return alpha / static_cast<double>(rank()); }

  ParameterList parameters(const std::string& prefix) const {
    return {{prefix + ".A", A}, {prefix + ".B", B}};
  }
};

// scale · B(Ax)
inline Tensor lora_delta(const LoraAdapter& adapter, const Tensor& x) {
  if (x.shape().back() != adapter.A.dim(1)) {
    throw DimensionError("lora: input " + shape_string(x.shape()) + " does not match A " +
                         shape_string(adapter.A.shape()));
  }
  return scale(linear(linear(x, adapter.A), adapter.B), adapter.scale());
}

inline Tensor lora_forward(const LoraAdapter& adapter, const FrozenLinear& base, const Tensor& x) {
  if (adapter.B.dim(0) != base.d_out() || adapter.A.dim(1) != base.d_in()) {
    throw DimensionError("lora: adapter A " + shape_string(adapter.A.shape()) + ", B " +
                         shape_string(adapter.B.shape()) + " do not fit base weight " +
                         shape_string(base.weight.shape()));
  }
  return add(base(x), lora_delta(adapter, x));
}

// ---------------------------------------------------------------------------
// Style router

struct StyleRouter {
  Tensor weight;  // [n, k]
  Tensor bias;    // [n]
  LayerKind kind = LayerKind::kLinear;

  std::size_t styles() const { return weight.dim(0); }
};

// One row per instance: token mean for linear layers, feature-map sum for
// 1×1 convolutions. x: [B, P, C] -> [B, C].
inline Tensor pool_instances(const Tensor& x, LayerKind kind) {
  if (x.rank() != 3) {
    throw DimensionError("pool_instances: expected [instances, positions, channels], got " +
                         shape_string(x.shape()));
  }
  Tensor pooled = kind == LayerKind::kLinear ? mean_axes(x, {1}) : sum_axes(x, {1});
  return reshape(pooled, {x.dim(0), x.dim(2)});
}

// Per-instance style distribution s: [B, n].
inline Tensor route(const StyleRouter& router, const Tensor& x) {
  if (!router.weight.defined() || router.weight.dim(0) < 1) {
    throw ConfigError("route: router needs n >= 1 styles");
  }
  if (x.rank() != 3 || x.dim(1) == 0) {
    throw ContractError("route: instance features must be non-empty [B, P, C], got " +
                        shape_string(x.shape()));
  }
  Tensor pooled = pool_instances(x, router.kind);
  Tensor logits = linear(pooled, router.weight);
  logits = add(logits, broadcast_to(router.bias, logits.shape()));
  return softmax(logits, -1);
}

// ---------------------------------------------------------------------------
// Style-routed adapter

struct StyleInjectAdapter {
  std::vector<Tensor> A;  // n × [r, k]
  Tensor B;               // [d, r], shared by all styles
  StyleRouter router;
  Tensor hyper_weight;    // [d, r]; undefined when variance injection is off
  Tensor hyper_bias;      // [d]
  double alpha = 1.0;
  double eps = 1e-5;

  std::size_t styles() const { return A.size(); }
  std::size_t rank() const { return B.dim(1); }
  double scale() const { return alpha / static_cast<double>(rank()); }
  bool injects_variance() const { return hyper_weight.defined(); }
  LayerKind kind() const { return router.kind; }

  ParameterList parameters(const std::string& prefix) const {
    ParameterList out;
    for (std::size_t i = 0; i < A.size(); ++i) out.push_back({prefix + ".A." + std::to_string(i), A[i]});
    out.push_back({prefix + ".B", B});
    out.push_back({prefix + ".router.weight", router.weight});
    out.push_back({prefix + ".router.bias", router.bias});
    if (injects_variance()) {
      out.push_back({prefix + ".hypernet.weight", hyper_weight});
      out.push_back({prefix + ".hypernet.bias", hyper_bias});
    }
    return out;
  }
};

inline constexpr double kRouteTolerance = 1e-6;

// Σᵢ sᵢ·Aᵢx, the routed low-rank code. x: [B, P, k], s: [B, n] -> [B, P, r].
inline Tensor routed_code(const StyleInjectAdapter& adapter, const Tensor& x, const Tensor& s) {
  const std::size_t n = adapter.styles();
  if (s.rank() != 2 || s.dim(1) != n || s.dim(0) != x.dim(0)) {
    throw DimensionError("dma: style weights " + shape_string(s.shape()) + " do not match " +
                         std::to_string(n) + " styles for input " + shape_string(x.shape()));
  }
  for (std::size_t b = 0; b < s.dim(0); ++b) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += s[b * n + i];
    if (std::abs(total - 1.0) > kRouteTolerance) {
      throw ContractError("dma: style weights of instance " + std::to_string(b) + " sum to " +
                          std::to_string(total) + ", not 1");
    }
  }
  const Shape code_shape{x.dim(0), x.dim(1), adapter.rank()};
  Tensor code;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor weight = broadcast_to(reshape(slice(s, 1, i, 1), {x.dim(0), 1, 1}), code_shape);
    Tensor term = mul(weight, linear(x, adapter.A[i]));
    code = code.defined() ? add(code, term) : term;
  }
  return code;
}

// Δh = scale · B Σᵢ sᵢ Aᵢ(x)
inline Tensor dma_delta(const StyleInjectAdapter& adapter, const Tensor& x, const Tensor& s) {
  return scale(linear(routed_code(adapter, x, s), adapter.B), adapter.scale());
}

struct AdainParts {
  Tensor h_hat;
  Tensor mu;
  Tensor sigma;  // eps-floored standard deviation
};

// Per-instance, per-channel normalisation over `reduce_axes` (keepdim stats).
inline AdainParts adain_decompose(const Tensor& h, const std::vector<long>& reduce_axes, double eps) {
  auto [mu, var] = moments(h, reduce_axes);
  Tensor sigma = stddev_floor(var, eps);
  Tensor h_hat = div(sub(h, broadcast_to(mu, h.shape())), broadcast_to(sigma, h.shape()));
  return {h_hat, mu, sigma};
}

// g = W_g·code + b_g, one row per instance. code: [B, r] -> [B, d].
inline Tensor hypernet_correction(const StyleInjectAdapter& adapter, const Tensor& code) {
  Tensor g = linear(code, adapter.hyper_weight);
  return add(g, broadcast_to(adapter.hyper_bias, g.shape()));
}

// f_s(σ) = σ ⊙ (1 + g(code)). sigma: [B, 1, d], code: [B, r].
inline Tensor hypernet_scale(const StyleInjectAdapter& adapter, const Tensor& code, const Tensor& sigma) {
  Tensor g = hypernet_correction(adapter, code);
  Tensor factor = add_scalar(reshape(g, sigma.shape()), 1.0);
  return mul(sigma, factor);
}

using RouteObserver = std::function<void(const Tensor& s)>;

struct StyleInjectOutput {
  Tensor h_star;
  Tensor h;
  Tensor s;
  Tensor delta;
  Tensor mu;
  Tensor sigma;
  Tensor sigma_hat;  // undefined in DMA-only mode
};

// h* = ĥ·f_s(σ(h)) + μ(h) + Δh; DMA-only adapters give h* = h + Δh.
inline StyleInjectOutput styleinject_forward_detailed(const StyleInjectAdapter& adapter,
                                                      const FrozenLinear& base, const Tensor& x) {
  if (x.rank() != 3) {
    throw DimensionError("styleinject: expected [instances, positions, channels], got " +
                         shape_string(x.shape()));
  }
  if (adapter.B.dim(0) != base.d_out() || adapter.A.front().dim(1) != base.d_in()) {
    throw DimensionError("styleinject: adapter does not fit base weight " +
                         shape_string(base.weight.shape()));
  }
  StyleInjectOutput out;
  out.h = base(x);
  out.s = route(adapter.router, x);
  Tensor code = routed_code(adapter, x, out.s);
  out.delta = scale(linear(code, adapter.B), adapter.scale());
  if (!adapter.injects_variance()) {
    out.h_star = add(out.h, out.delta);
    return out;
  }
  auto parts = adain_decompose(out.h, {1}, adapter.eps);
  out.mu = parts.mu;
  out.sigma = parts.sigma;
  Tensor style_code = pool_instances(code, adapter.kind());
  out.sigma_hat = hypernet_scale(adapter, style_code, parts.sigma);
  const auto& shape = out.h.shape();
  Tensor restyled = mul(parts.h_hat, broadcast_to(out.sigma_hat, shape));
  out.h_star = add(add(restyled, broadcast_to(parts.mu, shape)), out.delta);
  return out;
}

inline Tensor styleinject_forward(const StyleInjectAdapter& adapter, const FrozenLinear& base,
                                  const Tensor& x, const RouteObserver& observer = {}) {
  auto out = styleinject_forward_detailed(adapter, base, x);
  if (observer) observer(out.s);
  return out.h_star;
}

// ---------------------------------------------------------------------------
// Initialisation

using LayerAdapter = std::variant<LoraAdapter, StyleInjectAdapter>;

inline void check_rank(const AdapterConfig& config, std::size_t d_in, std::size_t d_out) {
  if (d_in == 0 || d_out == 0) throw ConfigError("adapter dims must be positive");
  if (config.rank >= std::min(d_in, d_out)) {
    throw ConfigError("adapter rank " + std::to_string(config.rank) +
                      " must be smaller than min(d_in, d_out) = " +
                      std::to_string(std::min(d_in, d_out)));
  }
}

inline LoraAdapter init_lora(const AdapterConfig& config, std::size_t d_in, std::size_t d_out,
                             std::uint64_t seed) {
  config.validate();
  check_rank(config, d_in, d_out);
  Rng rng(seed);
  LoraAdapter adapter;
  adapter.A = rng.normal({config.rank, d_in}, 1.0 / static_cast<double>(config.rank));
  adapter.B = Tensor::zeros({d_out, config.rank});
  adapter.alpha = config.alpha;
  adapter.A.set_requires_grad(true);
  adapter.B.set_requires_grad(true);
  return adapter;
}

inline constexpr double kRouterInitStd = 0.02;

// Aᵢ ~ N(0, 1/r²), router ~ N(0, 0.02²), B = 0 and hypernet = 0 so that the
// adapted layer reproduces W₀x exactly at step 0.
inline StyleInjectAdapter init_styleinject(const AdapterConfig& config, LayerKind kind,
                                           std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  config.validate();
  check_rank(config, d_in, d_out);
  Rng rng(seed);
  const std::size_t n = config.effective_styles();
  StyleInjectAdapter adapter;
  for (std::size_t i = 0; i < n; ++i) {
    adapter.A.push_back(rng.normal({config.rank, d_in}, 1.0 / static_cast<double>(config.rank)));
  }
  adapter.B = Tensor::zeros({d_out, config.rank});
  adapter.router.weight = rng.normal({n, d_in}, kRouterInitStd);
  adapter.router.bias = Tensor::zeros({n});
  adapter.router.kind = kind;
  if (config.method != AdapterMethod::kDmaOnly) {
    adapter.hyper_weight = Tensor::zeros({d_out, config.rank});
    adapter.hyper_bias = Tensor::zeros({d_out});
  }
  adapter.alpha = config.alpha;
  adapter.eps = config.eps;
  for (auto& p : adapter.parameters("")) p.tensor.set_requires_grad(true);
  return adapter;
}

inline LayerAdapter init_adapter(const AdapterConfig& config, AdaptPolicy policy, LayerKind kind,
                                 std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  switch (config.realised(policy)) {
    case AdaptPolicy::kLora: return init_lora(config, d_in, d_out, seed);
    case AdaptPolicy::kStyleInject: return init_styleinject(config, kind, d_in, d_out, seed);
    case AdaptPolicy::kFrozen: break;
  }
  throw ConfigError("init_adapter: frozen layers carry no adapter");
}

inline ParameterList adapter_parameters(const LayerAdapter& adapter, const std::string& prefix) {
  return std::visit([&](const auto& a) { return a.parameters(prefix); }, adapter);
}

inline Tensor adapter_forward(const LayerAdapter& adapter, const FrozenLinear& base, const Tensor& x,
                              const RouteObserver& observer = {}) {
  if (const auto* lora = std::get_if<LoraAdapter>(&adapter)) return lora_forward(*lora, base, x);
  return styleinject_forward(std::get<StyleInjectAdapter>(adapter), base, x, observer);
}

}  // namespace styleinject
