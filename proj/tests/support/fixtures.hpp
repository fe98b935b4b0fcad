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
#include <filesystem>
#include <string>
#include <vector>

#include "styleinject/adapters.hpp"
#include "styleinject/host.hpp"
#include "styleinject/random.hpp"

namespace styleinject::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  return Rng(seed).normal(std::move(shape), stddev);
}

inline Tensor trainable(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Tensor t = random_tensor(std::move(shape), seed, stddev);
  t.set_requires_grad(true);
  return t;
}

inline FrozenLinear random_linear(std::size_t d_in, std::size_t d_out, std::uint64_t seed, bool bias = false) {
  FrozenLinear f;
  f.weight = random_tensor({d_out, d_in}, seed, 1.0 / std::sqrt(static_cast<double>(d_in)));
  if (bias) f.bias = random_tensor({d_out}, seed + 1, 0.1);
  return f;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Overwrites every adapter parameter with a seeded draw, so that B and the
// hypernet are no longer zero.
inline void randomize(const ParameterList& params, std::uint64_t seed, double stddev = 0.3) {
  Rng rng(seed);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_values()) v = stddev * rng.normal();
  }
}

// Small host used across suites: K = 2 blocks, d = 8, data width 8.
inline DenoiserSpec small_spec(std::uint64_t seed = 3) {
  DenoiserSpec s;
  s.data_width = 8;
  s.tokens = 2;
  s.width = 8;
  s.blocks = 2;
  s.vocab = 4;
  s.seed = seed;
  return s;
}

inline std::filesystem::path source_root() { return STYLEINJECT_SOURCE_ROOT; }

// Fresh scratch directory in the system temp location.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("styleinject_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace styleinject::testing
