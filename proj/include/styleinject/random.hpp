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
#include <random>

#include "styleinject/tensor.hpp"

namespace styleinject {

// Seeded source for all randomness in a run (init, noise, t, batches).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t next_seed() { return engine_(); }

  Tensor normal(Shape shape, double stddev = 1.0) {
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = stddev * normal();
    return Tensor(std::move(shape), std::move(values));
  }

 private:
  std::mt19937_64 engine_;
};

inline Tensor rng_normal(std::uint64_t seed, Shape shape) {
  return Rng(seed).normal(std::move(shape));
}

}  // namespace styleinject
