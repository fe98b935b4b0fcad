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
#include <string>
#include <vector>

#include "styleinject/tensor.hpp"

namespace styleinject {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

inline std::size_t count_elements(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

inline void zero_grads(ParameterList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

// FNV-1a over a byte range, continuing from `hash`.
inline std::uint64_t fnv1a(const void* data, std::size_t size,
                           std::uint64_t hash = 14695981039346656037ull) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

// Hash of names, shapes and raw value bits; equal iff bit-identical.
inline std::uint64_t parameter_fingerprint(const ParameterList& params) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& p : params) {
    h = fnv1a(p.name.data(), p.name.size(), h);
    for (auto d : p.tensor.shape()) h = fnv1a(&d, sizeof d, h);
    auto v = p.tensor.values();
    h = fnv1a(v.data(), v.size() * sizeof(double), h);
  }
  return h;
}

// Adam with a constant learning rate.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Applies one update to every parameter, then zeroes the gradients.
inline void optimizer_step(ParameterList& params, AdamState& state) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw ContractError("optimizer_step: parameter '" + p.name + "' has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), 0.0);
      state.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("optimizer_step: parameter list changed between steps");
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p].tensor;
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != param.numel()) {
      throw ContractError("optimizer_step: moment buffer shape mismatch for '" + params[p].name + "'");
    }
    auto grad = param.grad();
    auto values = param.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    param.zero_grad();
  }
}

}  // namespace styleinject
