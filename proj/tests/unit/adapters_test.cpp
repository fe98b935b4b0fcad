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

#include <gtest/gtest.h>

#include <cmath>

#include "styleinject/adapters.hpp"
#include "support/finite_difference.hpp"
#include "support/fixtures.hpp"

using namespace styleinject;
using namespace styleinject::testing;

namespace {

// Dense reference for y = W x over the last axis, x: [..., k], W: [d, k].
std::vector<double> apply_rows(const Tensor& w, const std::vector<double>& x, std::size_t rows) {
  const std::size_t d = w.dim(0), k = w.dim(1);
  std::vector<double> out(rows * d, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < k; ++j) out[r * d + i] += w[i * k + j] * x[r * k + j];
  return out;
}

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

AdapterConfig small_config(std::size_t rank, std::size_t styles, AdapterMethod method = AdapterMethod::kStyleInject) {
  AdapterConfig c = AdapterConfig::defaults();
  c.rank = rank;
  c.styles = styles;
  c.alpha = static_cast<double>(rank);
  c.method = method;
  return c;
}

// Per-instance, per-channel mean over positions of a [B, P, C] tensor.
std::vector<double> channel_means(const Tensor& t) {
  const std::size_t B = t.dim(0), P = t.dim(1), C = t.dim(2);
  std::vector<double> out(B * C, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += t[(b * P + p) * C + c] / static_cast<double>(P);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// LoRA

TEST(Lora, FreshInitReproducesBaseExactly) {
  auto base = random_linear(6, 5, 1, true);
  auto adapter = init_lora(small_config(2, 1), 6, 5, 7);
  Tensor x = random_tensor({3, 4, 6}, 2);
  Tensor got = lora_forward(adapter, base, x);
  Tensor want = base(x);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_EQ(got[i], want[i]);
}

TEST(Lora, PassThroughConstruction) {
  // W0 = 0, A = [I | 0], B = [I ; 0], scale 1: the first r inputs pass through.
  FrozenLinear base{Tensor::zeros({4, 4}), Tensor()};
  LoraAdapter adapter;
  adapter.A = Tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  adapter.B = Tensor({4, 2}, {1, 0, 0, 1, 0, 0, 0, 0});
  adapter.alpha = 2.0;
  Tensor x({1, 4}, {3, -1, 7, 9});
  Tensor out = lora_forward(adapter, base, x);
  EXPECT_EQ(values_of(out), (std::vector<double>{3, -1, 0, 0}));
}

TEST(Lora, MatchesExplicitMatrixChain) {
  auto base = random_linear(4, 4, 3);
  LoraAdapter adapter{random_tensor({2, 4}, 4), random_tensor({4, 2}, 5), 3.0};
  Tensor x = random_tensor({5, 4}, 6);
  Tensor out = lora_forward(adapter, base, x);
  const auto xv = values_of(x);
  const auto w0x = apply_rows(base.weight, xv, 5);
  const auto ax = apply_rows(adapter.A, xv, 5);
  const auto bax = apply_rows(adapter.B, ax, 5);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], w0x[i] + 1.5 * bax[i], 1e-12);
}

TEST(Lora, GradientsReachOnlyAAndB) {
  auto base = random_linear(4, 4, 3, true);
  auto adapter = init_lora(small_config(2, 1), 4, 4, 9);
  for (auto& v : adapter.B.mutable_values()) v = 0.5;
  Tensor x = random_tensor({3, 4}, 1);
  Tape tape;
  Tensor loss;
  {
    auto rec = tape.record();
    loss = sum(lora_forward(adapter, base, x));
  }
  tape.backward(loss);
  EXPECT_TRUE(adapter.A.has_grad());
  EXPECT_TRUE(adapter.B.has_grad());
  EXPECT_FALSE(base.weight.has_grad());
  EXPECT_FALSE(base.bias.has_grad());
  EXPECT_FALSE(x.has_grad());
}

TEST(Lora, ShapeMismatchIsDimensionError) {
  auto base = random_linear(4, 4, 3);
  auto adapter = init_lora(small_config(2, 1), 4, 4, 9);
  EXPECT_THROW(lora_forward(adapter, base, random_tensor({2, 5}, 1)), DimensionError);
  auto wide = random_linear(6, 4, 3);
  EXPECT_THROW(lora_forward(adapter, wide, random_tensor({2, 6}, 1)), DimensionError);
}

TEST(Lora, FiniteDifferenceGradients) {
  auto base = random_linear(4, 3, 3, true);
  LoraAdapter adapter{trainable({2, 4}, 4), trainable({3, 2}, 5), 2.0};
  Tensor x = random_tensor({2, 3, 4}, 6);
  Tensor target = random_tensor({2, 3, 3}, 7);
  auto results = check_gradients([&] { return mse(lora_forward(adapter, base, x), target); },
                                 adapter.parameters("lora"));
  for (const auto& r : results) EXPECT_LT(r.rel_error, kFdRelTol) << r.name;
}

// ---------------------------------------------------------------------------
// Router

TEST(Router, ZeroWeightsGiveUniformDistribution) {
  StyleRouter router{Tensor::zeros({4, 3}), Tensor::zeros({4}), LayerKind::kLinear};
  Tensor s = route(router, random_tensor({2, 5, 3}, 1));
  ASSERT_EQ(s.shape(), (Shape{2, 4}));
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_DOUBLE_EQ(s[i], 0.25);
}

TEST(Router, SingleStyleIsAlwaysOne) {
  StyleRouter router{random_tensor({1, 3}, 2), random_tensor({1}, 3), LayerKind::kLinear};
  Tensor s = route(router, random_tensor({3, 4, 3}, 1, 10.0));
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(s[i], 1.0);
}

TEST(Router, MatchesMeanPoolAffineSoftmaxOracle) {
  StyleRouter router{random_tensor({3, 4}, 2), random_tensor({3}, 3), LayerKind::kLinear};
  Tensor x = random_tensor({2, 5, 4}, 4);
  Tensor s = route(router, x);
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> pooled(4, 0.0);
    for (std::size_t p = 0; p < 5; ++p)
      for (std::size_t c = 0; c < 4; ++c) pooled[c] += x[(b * 5 + p) * 4 + c] / 5.0;
    std::vector<double> logits(3);
    double z = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      logits[i] = router.bias[i];
      for (std::size_t c = 0; c < 4; ++c) logits[i] += router.weight[i * 4 + c] * pooled[c];
      z += std::exp(logits[i]);
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s[b * 3 + i], std::exp(logits[i]) / z, 1e-9);
  }
}

TEST(Router, ConvLayersPoolBySummation) {
  StyleRouter router{random_tensor({2, 3}, 2, 0.1), Tensor::zeros({2}), LayerKind::kConv1x1};
  Tensor x = random_tensor({1, 6, 3}, 4);
  Tensor s = route(router, x);
  std::vector<double> pooled(3, 0.0);
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t c = 0; c < 3; ++c) pooled[c] += x[p * 3 + c];
  double l0 = 0.0, l1 = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    l0 += router.weight[c] * pooled[c];
    l1 += router.weight[3 + c] * pooled[c];
  }
  EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(l1 - l0)), 1e-12);
}

TEST(Router, OutputsAreProbabilityVectors) {
  StyleRouter router{random_tensor({5, 4}, 2), random_tensor({5}, 3), LayerKind::kLinear};
  Tensor s = route(router, random_tensor({7, 3, 4}, 4, 3.0));
  for (std::size_t b = 0; b < 7; ++b) {
    double total = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GT(s[b * 5 + i], 0.0);
      EXPECT_LT(s[b * 5 + i], 1.0);
      total += s[b * 5 + i];
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Router, ZeroStylesIsConfigError) {
  StyleRouter router{Tensor::zeros({0, 3}), Tensor::zeros({0}), LayerKind::kLinear};
  EXPECT_THROW(route(router, random_tensor({1, 2, 3}, 1)), ConfigError);
}

TEST(Router, EmptyInstanceIsRejected) {
  StyleRouter router{Tensor::zeros({2, 3}), Tensor::zeros({2}), LayerKind::kLinear};
  EXPECT_THROW(route(router, Tensor::zeros({1, 0, 3})), ContractError);
}

// ---------------------------------------------------------------------------
// Dynamic multi-style adaptation

TEST(Dma, SingleStyleReducesToLora) {
  auto adapter = init_styleinject(small_config(2, 1), LayerKind::kLinear, 4, 4, 3);
  randomize(adapter.parameters("a"), 8);
  LoraAdapter lora{adapter.A[0], adapter.B, adapter.alpha};
  Tensor x = random_tensor({2, 3, 4}, 1);
  Tensor s({2, 1}, {1.0, 1.0});
  Tensor got = dma_delta(adapter, x, s);
  Tensor want = lora_delta(lora, x);
  EXPECT_LE(max_abs_diff(got, want), 1e-15);
}

TEST(Dma, ZeroBGivesZeroDelta) {
  auto adapter = init_styleinject(small_config(2, 3), LayerKind::kLinear, 4, 4, 3);
  Tensor s({1, 3}, {0.2, 0.3, 0.5});
  Tensor delta = dma_delta(adapter, random_tensor({1, 3, 4}, 1), s);
  for (double v : delta.values()) EXPECT_EQ(v, 0.0);
}

TEST(Dma, MatchesTermByTermOracle) {
  auto adapter = init_styleinject(small_config(2, 3), LayerKind::kLinear, 4, 5, 3);
  randomize(adapter.parameters("a"), 9, 1.0);
  Tensor x = random_tensor({2, 3, 4}, 1);
  Tensor s({2, 3}, {0.2, 0.3, 0.5, 0.6, 0.1, 0.3});
  Tensor delta = dma_delta(adapter, x, s);
  const double scale = adapter.scale();
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> xb(x.values().begin() + b * 12, x.values().begin() + (b + 1) * 12);
    std::vector<double> want(15, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
      auto term = apply_rows(adapter.B, apply_rows(adapter.A[i], xb, 3), 3);
      for (std::size_t j = 0; j < 15; ++j) want[j] += s[b * 3 + i] * term[j];
    }
    for (std::size_t j = 0; j < 15; ++j) EXPECT_NEAR(delta[b * 15 + j], scale * want[j], 1e-12);
  }
}

TEST(Dma, UnnormalisedStyleWeightsAreRejected) {
  auto adapter = init_styleinject(small_config(2, 2), LayerKind::kLinear, 4, 4, 3);
  Tensor s({1, 2}, {0.5, 0.5 + 2e-6});
  EXPECT_THROW(dma_delta(adapter, random_tensor({1, 2, 4}, 1), s), ContractError);
  Tensor ok({1, 2}, {0.5, 0.5 + 5e-7});
  EXPECT_NO_THROW(dma_delta(adapter, random_tensor({1, 2, 4}, 1), ok));
}

TEST(Dma, LinearInInputForFixedStyles) {
  auto adapter = init_styleinject(small_config(2, 2), LayerKind::kLinear, 4, 4, 3);
  randomize(adapter.parameters("a"), 5, 1.0);
  Tensor s({1, 2}, {0.3, 0.7});
  Tensor x = random_tensor({1, 3, 4}, 1), y = random_tensor({1, 3, 4}, 2);
  Tensor combo = add(scale(x, 2.0), scale(y, -3.0));
  Tensor lhs = dma_delta(adapter, combo, s);
  Tensor rhs = add(scale(dma_delta(adapter, x, s), 2.0), scale(dma_delta(adapter, y, s), -3.0));
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Dma, OneSharedUpProjection) {
  auto adapter = init_styleinject(small_config(2, 5), LayerKind::kLinear, 4, 4, 3);
  EXPECT_EQ(adapter.A.size(), 5u);
  std::size_t b_count = 0;
  for (const auto& p : adapter.parameters("x"))
    if (p.name == "x.B") ++b_count;
  EXPECT_EQ(b_count, 1u);
}

// ---------------------------------------------------------------------------
// AdaIN

TEST(Adain, ConstantChannelNormalisesToZero) {
  Tensor h({1, 3, 1}, {5, 5, 5});
  auto parts = adain_decompose(h, {1}, 1e-5);
  for (double v : parts.h_hat.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(parts.mu[0], 5.0);
  EXPECT_EQ(parts.sigma[0], 1e-5);
}

TEST(Adain, TwoPointChannel) {
  Tensor h({1, 2, 1}, {1, 3});
  auto parts = adain_decompose(h, {1}, 1e-5);
  EXPECT_DOUBLE_EQ(parts.mu[0], 2.0);
  EXPECT_DOUBLE_EQ(parts.sigma[0], 1.0);
  EXPECT_DOUBLE_EQ(parts.h_hat[0], -1.0);
  EXPECT_DOUBLE_EQ(parts.h_hat[1], 1.0);
}

TEST(Adain, RoundTripReconstruction) {
  Tensor h = random_tensor({2, 8, 4}, 11, 3.0);
  auto parts = adain_decompose(h, {1}, 1e-5);
  Tensor back = add(mul(parts.h_hat, broadcast_to(parts.sigma, h.shape())), broadcast_to(parts.mu, h.shape()));
  EXPECT_LE(max_abs_diff(back, h), 1e-9);
}

TEST(Adain, NormalisedChannelsHaveZeroMeanUnitVariance) {
  Tensor h = add_scalar(random_tensor({3, 16, 5}, 12, 2.0), 4.0);
  auto parts = adain_decompose(h, {1}, 1e-5);
  auto [mean, var] = moments(parts.h_hat, {1});
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    EXPECT_LT(std::abs(mean[i]), 1e-6);
    EXPECT_LT(std::abs(var[i] - 1.0), 1e-4);
  }
}

// ---------------------------------------------------------------------------
// Hypernetwork

TEST(Hypernet, FreshInitIsBitExactIdentity) {
  auto adapter = init_styleinject(small_config(2, 2), LayerKind::kLinear, 4, 3, 1);
  Tensor sigma = random_tensor({2, 1, 3}, 2);
  for (auto& v : sigma.mutable_values()) v = std::abs(v);
  Tensor out = hypernet_scale(adapter, random_tensor({2, 2}, 3), sigma);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], sigma[i]);
}

TEST(Hypernet, MinusOneCorrectionErasesVariance) {
  auto adapter = init_styleinject(small_config(2, 2), LayerKind::kLinear, 4, 3, 1);
  for (auto& v : adapter.hyper_bias.mutable_values()) v = -1.0;
  Tensor sigma = Tensor::full({1, 1, 3}, 0.7);
  Tensor out = hypernet_scale(adapter, random_tensor({1, 2}, 3), sigma);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Hypernet, MatchesAffineThenMultiplyOracle) {
  auto adapter = init_styleinject(small_config(2, 2), LayerKind::kLinear, 4, 3, 1);
  adapter.hyper_weight = random_tensor({3, 2}, 4, 0.1);
  adapter.hyper_bias = random_tensor({3}, 5, 0.1);
  Tensor code = random_tensor({2, 2}, 6);
  Tensor sigma = Tensor({2, 1, 3}, {0.5, 1.0, 2.0, 0.1, 0.2, 0.3});
  Tensor out = hypernet_scale(adapter, code, sigma);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      double g = adapter.hyper_bias[c];
      for (std::size_t j = 0; j < 2; ++j) g += adapter.hyper_weight[c * 2 + j] * code[b * 2 + j];
      EXPECT_NEAR(out[b * 3 + c], sigma[b * 3 + c] * (1.0 + g), 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Full forward

TEST(StyleInjectForward, FreshInitIsIdentity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto base = random_linear(6, 5, 100 + seed, true);
    auto adapter = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, seed);
    Tensor x = random_tensor({3, 4, 6}, 200 + seed);
    EXPECT_LE(max_abs_diff(styleinject_forward(adapter, base, x), base(x)), 1e-9);
  }
}

TEST(StyleInjectForward, FreshInitIdentityWithConstantChannels) {
  // All positions equal: every channel hits the eps floor.
  FrozenLinear base{random_tensor({3, 2}, 1), Tensor()};
  auto adapter = init_styleinject(small_config(1, 2), LayerKind::kLinear, 2, 3, 4);
  Tensor x({1, 4, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
  EXPECT_LT(max_abs_diff(styleinject_forward(adapter, base, x), base(x)), 1e-6);
}

TEST(StyleInjectForward, ZeroCorrectionGivesDmaForm) {
  auto base = random_linear(6, 5, 1, true);
  auto adapter = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 2);
  adapter.B = random_tensor({5, 2}, 3);
  Tensor x = random_tensor({2, 4, 6}, 4);
  auto out = styleinject_forward_detailed(adapter, base, x);
  Tensor want = add(base(x), dma_delta(adapter, x, out.s));
  EXPECT_LE(max_abs_diff(out.h_star, want), 1e-9);
}

TEST(StyleInjectForward, DmaOnlyMethodIsExactlyBasePlusDelta) {
  auto base = random_linear(6, 5, 1);
  auto adapter = init_styleinject(small_config(2, 3, AdapterMethod::kDmaOnly), LayerKind::kLinear, 6, 5, 2);
  EXPECT_FALSE(adapter.injects_variance());
  adapter.B = random_tensor({5, 2}, 3);
  Tensor x = random_tensor({2, 4, 6}, 4);
  auto out = styleinject_forward_detailed(adapter, base, x);
  Tensor want = add(base(x), out.delta);
  for (std::size_t i = 0; i < want.numel(); ++i) EXPECT_EQ(out.h_star[i], want[i]);
}

TEST(StyleInjectForward, StaOnlyUsesSingleStyle) {
  auto adapter = init_styleinject(small_config(2, 16, AdapterMethod::kStaOnly), LayerKind::kLinear, 6, 5, 2);
  EXPECT_EQ(adapter.styles(), 1u);
  EXPECT_TRUE(adapter.injects_variance());
}

TEST(StyleInjectForward, MeanPreservation) {
  auto base = random_linear(6, 5, 1, true);
  auto adapter = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 2);
  randomize(adapter.parameters("a"), 3, 0.5);
  Tensor x = random_tensor({3, 7, 6}, 4);
  auto out = styleinject_forward_detailed(adapter, base, x);
  const auto m_star = channel_means(out.h_star), m_h = channel_means(out.h), m_d = channel_means(out.delta);
  for (std::size_t i = 0; i < m_star.size(); ++i) EXPECT_NEAR(m_star[i] - m_h[i], m_d[i], 1e-9);
}

TEST(StyleInjectForward, DegenerateConfigurationEqualsLora) {
  auto base = random_linear(6, 5, 1, true);
  auto adapter = init_styleinject(small_config(2, 1), LayerKind::kLinear, 6, 5, 2);
  adapter.A[0] = random_tensor({2, 6}, 3);
  adapter.B = random_tensor({5, 2}, 4);
  LoraAdapter lora{adapter.A[0], adapter.B, adapter.alpha};
  Tensor x = random_tensor({2, 4, 6}, 5);
  EXPECT_LE(max_abs_diff(styleinject_forward(adapter, base, x), lora_forward(lora, base, x)), 1e-9);
}

TEST(StyleInjectForward, ObserverSeesOneDistributionPerInstance) {
  auto base = random_linear(6, 5, 1);
  auto adapter = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 2);
  Tensor seen;
  styleinject_forward(adapter, base, random_tensor({4, 3, 6}, 5), [&](const Tensor& s) { seen = s; });
  ASSERT_TRUE(seen.defined());
  EXPECT_EQ(seen.shape(), (Shape{4, 3}));
}

TEST(StyleInjectForward, ConvLayerIsPointwiseLinear) {
  auto base = random_linear(4, 4, 1);
  auto adapter = init_styleinject(small_config(2, 2), LayerKind::kConv1x1, 4, 4, 2);
  randomize(adapter.parameters("a"), 3, 0.5);
  Tensor x = random_tensor({2, 9, 4}, 4);  // 3×3 feature map flattened to positions
  auto out = styleinject_forward_detailed(adapter, base, x);
  const auto m_star = channel_means(out.h_star), m_h = channel_means(out.h), m_d = channel_means(out.delta);
  for (std::size_t i = 0; i < m_star.size(); ++i) EXPECT_NEAR(m_star[i] - m_h[i], m_d[i], 1e-9);
}

TEST(StyleInjectForward, AllParametersPassFiniteDifferenceChecks) {
  auto base = random_linear(5, 4, 1, true);
  auto adapter = init_styleinject(small_config(2, 3), LayerKind::kLinear, 5, 4, 2);
  randomize(adapter.parameters("a"), 3, 0.5);
  Tensor x = random_tensor({2, 4, 5}, 4);
  Tensor target = random_tensor({2, 4, 4}, 5);
  auto results = check_gradients([&] { return mse(styleinject_forward(adapter, base, x), target); },
                                 adapter.parameters("a"));
  ASSERT_EQ(results.size(), 3u + 1 + 2 + 2);
  for (const auto& r : results) {
    EXPECT_LT(r.rel_error, kFdRelTol) << r.name;
    EXPECT_GT(r.grad_norm, 0.0) << r.name;
  }
}

// ---------------------------------------------------------------------------
// Initialisation

TEST(InitAdapter, SameSeedIsBitIdentical) {
  auto a = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 42);
  auto b = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 42);
  EXPECT_EQ(parameter_fingerprint(a.parameters("x")), parameter_fingerprint(b.parameters("x")));
}

TEST(InitAdapter, DifferentSeedsGiveDifferentA) {
  auto a = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 1);
  auto b = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 2);
  EXPECT_NE(values_of(a.A[0]), values_of(b.A[0]));
}

TEST(InitAdapter, ZeroUpProjectionAndHypernet) {
  auto a = init_styleinject(small_config(2, 3), LayerKind::kLinear, 6, 5, 1);
  for (double v : a.B.values()) EXPECT_EQ(v, 0.0);
  for (double v : a.hyper_weight.values()) EXPECT_EQ(v, 0.0);
  for (double v : a.hyper_bias.values()) EXPECT_EQ(v, 0.0);
  for (const auto& p : a.parameters("x")) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

TEST(InitAdapter, RankMustBeBelowLayerDims) {
  EXPECT_THROW(init_styleinject(small_config(4, 2), LayerKind::kLinear, 4, 8, 1), ConfigError);
  EXPECT_THROW(init_lora(small_config(5, 1), 8, 5, 1), ConfigError);
  EXPECT_NO_THROW(init_lora(small_config(3, 1), 8, 4, 1));
}

TEST(InitAdapter, LoraMethodRealisesStyleLayersAsLora) {
  auto config = small_config(2, 3, AdapterMethod::kLora);
  auto adapter = init_adapter(config, AdaptPolicy::kStyleInject, LayerKind::kLinear, 6, 5, 1);
  EXPECT_TRUE(std::holds_alternative<LoraAdapter>(adapter));
  EXPECT_THROW(init_adapter(config, AdaptPolicy::kFrozen, LayerKind::kLinear, 6, 5, 1), ConfigError);
}

TEST(AdapterConfigDefaults, Rank32SixteenStylesAlphaEqualsRank) {
  auto c = AdapterConfig::defaults();
  EXPECT_EQ(c.rank, 32u);
  EXPECT_EQ(c.styles, 16u);
  EXPECT_EQ(c.alpha, 32.0);
  EXPECT_EQ(c.scale(), 1.0);
  ASSERT_EQ(c.targets.size(), 2u);
  EXPECT_EQ(c.targets[0].layer, "to_q");
  EXPECT_EQ(c.targets[0].policy, AdaptPolicy::kStyleInject);
  EXPECT_EQ(c.targets[1].layer, "to_v");
  EXPECT_EQ(c.targets[1].policy, AdaptPolicy::kLora);
}
