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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "styleinject/diffusion.hpp"
#include "styleinject/host.hpp"
#include "support/fixtures.hpp"

using namespace styleinject;
using namespace styleinject::testing;

namespace {

// ε that exactly explains z_t around a fixed point x*.
struct PointMassOracle {
  const NoiseSchedule* schedule;
  std::vector<double> point;
  Tensor operator()(const Tensor& z, std::span<const int>, std::span<const int> t) const {
    const std::size_t w = point.size();
    std::vector<double> out(z.numel());
    for (std::size_t r = 0; r < t.size(); ++r) {
      const double ab = schedule->alpha_bars[t[r]];
      for (std::size_t j = 0; j < w; ++j)
        out[r * w + j] = (z[r * w + j] - std::sqrt(ab) * point[j]) / std::sqrt(1.0 - ab);
    }
    return Tensor(z.shape(), std::move(out));
  }
};

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST(Schedule, SingleStep) {
  auto s = make_schedule(1, 0.1, 0.1);
  ASSERT_EQ(s.alpha_bars.size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha_bars[0], 0.9);
}

TEST(Schedule, StandardScheduleEndsNearPureNoise) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  double product = 1.0;
  for (std::size_t i = 0; i < 1000; ++i) product *= 1.0 - (1e-4 + (0.02 - 1e-4) * static_cast<double>(i) / 999.0);
  EXPECT_NEAR(s.alpha_bars[999], product, 1e-15);
  EXPECT_LT(s.alpha_bars[999], 0.01);
}

TEST(Schedule, Invariants) {
  for (auto [lo, hi] : {std::pair{1e-4, 0.02}, std::pair{0.05, 0.05}, std::pair{0.3, 0.9}}) {
    auto s = make_schedule(50, lo, hi);
    for (std::size_t i = 0; i < 50; ++i) {
      EXPECT_GT(s.betas[i], 0.0);
      EXPECT_LT(s.betas[i], 1.0);
      if (i > 0) {
        EXPECT_GE(s.betas[i], s.betas[i - 1]);
        EXPECT_LT(s.alpha_bars[i], s.alpha_bars[i - 1]);
      }
      EXPECT_GT(s.alpha_bars[i], 0.0);
      EXPECT_LE(s.alpha_bars[i], 1.0);
    }
  }
}

TEST(Schedule, InvalidBoundsAreConfigErrors) {
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 0.03, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 1e-4, 1.0), ConfigError);
  EXPECT_THROW(make_schedule(0, 1e-4, 0.02), ConfigError);
}

TEST(QSample, NoNoiseLimitReturnsInput) {
  auto s = make_schedule(1, 1e-300, 1e-300);
  ASSERT_EQ(s.alpha_bars[0], 1.0);
  Tensor x0 = random_tensor({2, 3}, 1);
  std::vector<int> t{0, 0};
  EXPECT_TRUE(bit_equal(q_sample(s, x0, t, random_tensor({2, 3}, 2)), x0));
}

TEST(QSample, ZeroNoiseScalesInput) {
  auto s = make_schedule(100, 1e-4, 0.02);
  Tensor x0 = random_tensor({2, 3}, 1);
  std::vector<int> t{10, 90};
  Tensor z = q_sample(s, x0, t, Tensor::zeros({2, 3}));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z[r * 3 + c], std::sqrt(s.alpha_bars[t[r]]) * x0[r * 3 + c]);
}

TEST(QSample, MatchesDirectFormula) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  Tensor x0 = random_tensor({4, 5}, 1), noise = random_tensor({4, 5}, 2);
  std::vector<int> t{0, 17, 500, 999};
  Tensor z = q_sample(s, x0, t, noise);
  for (std::size_t r = 0; r < 4; ++r) {
    double ab = 1.0;
    for (int i = 0; i <= t[r]; ++i) ab *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999.0);
    for (std::size_t c = 0; c < 5; ++c) {
      const std::size_t k = r * 5 + c;
      EXPECT_NEAR(z[k], std::sqrt(ab) * x0[k] + std::sqrt(1.0 - ab) * noise[k], 1e-12);
    }
  }
}

TEST(QSample, OutOfRangeTimestepIsContractError) {
  auto s = make_schedule(10, 1e-4, 0.02);
  Tensor x0 = Tensor::zeros({1, 2});
  std::vector<int> late{10}, early{-1};
  EXPECT_THROW(q_sample(s, x0, late, x0), ContractError);
  EXPECT_THROW(q_sample(s, x0, early, x0), ContractError);
}

TEST(QSample, PreservesMarginalVariance) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  const std::size_t n = 10000;
  const double x_var = 4.0;
  for (int t : {50, 300, 700}) {
    Tensor x0 = random_tensor({n, 1}, 1, std::sqrt(x_var));
    Tensor noise = random_tensor({n, 1}, 2);
    std::vector<int> ts(n, t);
    Tensor z = q_sample(s, x0, ts, noise);
    double mean = 0.0, sq = 0.0;
    for (double v : z.values()) mean += v / n;
    for (double v : z.values()) sq += (v - mean) * (v - mean) / n;
    const double ab = s.alpha_bars[t];
    const double want = ab * x_var + (1.0 - ab);
    EXPECT_NEAR(sq / want, 1.0, 0.05) << "t=" << t;
  }
}

TEST(Dataset, ReproducibleFromSeeds) {
  DatasetSpec spec;
  spec.anisotropy = 0.5;
  spec.style_seed = 3;
  auto a = make_dataset(spec, 8), b = make_dataset(spec, 8);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.conditions, b.conditions);
  spec.seed += 1;
  EXPECT_NE(make_dataset(spec, 8).samples, a.samples);
}

TEST(Dataset, ClustersFollowConditions) {
  DatasetSpec spec;
  spec.conditions = 3;
  spec.samples = 300;
  spec.spread = 0.01;
  auto data = make_dataset(spec, 4);
  for (std::size_t i = 3; i < data.size(); ++i) {
    EXPECT_EQ(data.conditions[i], data.conditions[i % 3]);
    EXPECT_NEAR(data.samples[i * 4], data.samples[(i % 3) * 4], 0.1);
  }
}

TEST(Dataset, TranslatorIsSeededBijection) {
  auto identity = make_translator(8, 0);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(identity[i], i);
  auto perm = make_translator(8, 77);
  EXPECT_EQ(std::set<int>(perm.begin(), perm.end()).size(), 8u);
  EXPECT_NE(perm, identity);
  EXPECT_EQ(perm, make_translator(8, 77));
  auto data = make_dataset(DatasetSpec{}, 4);
  auto moved = translate_conditions(data, perm);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(moved.conditions[i], perm[data.conditions[i]]);
  EXPECT_EQ(moved.samples, data.samples);
}

TEST(Dataset, HeadKeepsFirstSamples) {
  auto data = make_dataset(DatasetSpec{}, 4);
  auto few = data.head(3);
  EXPECT_EQ(few.size(), 3u);
  EXPECT_TRUE(std::equal(few.samples.begin(), few.samples.end(), data.samples.begin()));
}

TEST(TaskLoss, OracleWiringGivesZero) {
  auto s = make_schedule(100, 1e-4, 0.02);
  Rng rng(1);
  Batch b = sample_batch(make_dataset(DatasetSpec{}, 6), 16, rng);
  // The oracle is handed the true noise through a side channel.
  Rng replay(9);
  NoisedBatch nb = noise_batch(s, b, replay);
  auto oracle = [&](const Tensor&, std::span<const int>, std::span<const int>) { return nb.noise; };
  Rng again(9);
  EXPECT_EQ(task_loss(oracle, s, b, again).item(), 0.0);
}

TEST(TaskLoss, ZeroModelMatchesUnitNoiseEnergy) {
  auto s = make_schedule(100, 1e-4, 0.02);
  const std::size_t width = 16;
  auto data = make_dataset(DatasetSpec{}, width);
  auto zero = [](const Tensor& z, std::span<const int>, std::span<const int>) { return Tensor::zeros(z.shape()); };
  Rng rng(3);
  double mean_loss = 0.0;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    Batch b = sample_batch(data, 1, rng);
    mean_loss += task_loss(zero, s, b, rng).item() / draws;
  }
  // Element mean of ε² is 1, so the per-sample squared norm is ≈ width.
  EXPECT_NEAR(mean_loss, 1.0, 0.1);
  EXPECT_NEAR(mean_loss * width, static_cast<double>(width), 0.1 * width);
}

TEST(TaskLoss, SeededRngIsBitDeterministic) {
  auto s = make_schedule(100, 1e-4, 0.02);
  auto model = build_toy_denoiser(small_spec());
  auto data = make_dataset(DatasetSpec{}, model.spec().data_width);
  auto predictor = [&](const Tensor& z, std::span<const int> c, std::span<const int> t) {
    return model.forward(z, c, t);
  };
  Rng r1(5), r2(5);
  Batch b1 = sample_batch(data, 8, r1), b2 = sample_batch(data, 8, r2);
  const double l1 = task_loss(predictor, s, b1, r1).item();
  const double l2 = task_loss(predictor, s, b2, r2).item();
  EXPECT_EQ(std::memcmp(&l1, &l2, sizeof l1), 0);
}

TEST(TaskLoss, EmptyBatchIsRejected) {
  auto s = make_schedule(10, 1e-4, 0.02);
  Rng rng(1);
  Batch empty{Tensor::zeros({0, 2}), {}};
  auto zero = [](const Tensor& z, std::span<const int>, std::span<const int>) { return z; };
  EXPECT_THROW(task_loss(zero, s, empty, rng), ContractError);
}

TEST(Sampler, StridedTimesteps) {
  EXPECT_EQ(sampler_timesteps(1000, 4), (std::vector<int>{0, 250, 500, 750}));
  EXPECT_EQ(sampler_timesteps(10, 10).back(), 9);
  EXPECT_THROW(sampler_timesteps(10, 11), ContractError);
  EXPECT_THROW(sampler_timesteps(10, 0), ContractError);
}

TEST(Sampler, PointMassOracleLandsOnThePoint) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  PointMassOracle oracle{&s, {1.5, -0.5, 0.25, 2.0}};
  std::vector<int> cond{0, 0, 0};
  auto traj = ancestral_sample(oracle, s, cond, 4, 7, 50);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(traj.final_sample[r * 4 + j], oracle.point[j], 0.1);
}

TEST(Sampler, SameSeedSameTrajectory) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  auto model = build_toy_denoiser(small_spec());
  auto predictor = [&](const Tensor& z, std::span<const int> c, std::span<const int> t) {
    return model.forward(z, c, t);
  };
  std::vector<int> cond{0, 3};
  auto a = ancestral_sample(predictor, s, cond, 8, 11, 20);
  auto b = ancestral_sample(predictor, s, cond, 8, 11, 20);
  ASSERT_EQ(a.states.size(), 21u);
  for (std::size_t i = 0; i < a.states.size(); ++i) EXPECT_TRUE(bit_equal(a.states[i], b.states[i])) << i;
  EXPECT_EQ(a.timesteps, b.timesteps);
  auto c = ancestral_sample(predictor, s, cond, 8, 12, 20);
  EXPECT_FALSE(bit_equal(a.final_sample, c.final_sample));
}

TEST(Sampler, SingleStepAppliesOneUpdate) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  int calls = 0;
  auto counting = [&](const Tensor& z, std::span<const int>, std::span<const int>) {
    ++calls;
    return Tensor::zeros(z.shape());
  };
  std::vector<int> cond{0};
  auto traj = ancestral_sample(counting, s, cond, 3, 1, 1);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(traj.model_calls, 1u);
  EXPECT_EQ(traj.states.size(), 2u);
  EXPECT_EQ(traj.timesteps, (std::vector<int>{0}));
}

TEST(Sampler, FreshAttachedModelSamplesLikeBase) {
  auto s = make_schedule(1000, 1e-4, 0.02);
  auto base = build_toy_denoiser(small_spec());
  AdapterConfig c = AdapterConfig::defaults();
  c.rank = 2;
  c.styles = 4;
  c.alpha = 2;
  AttachedModel attached(base, c, 3);
  auto run_base = [&](const Tensor& z, std::span<const int> cc, std::span<const int> t) {
    return base.forward(z, cc, t);
  };
  auto run_attached = [&](const Tensor& z, std::span<const int> cc, std::span<const int> t) {
    return attached.forward(z, cc, t);
  };
  std::vector<int> cond{0, 1, 2};
  auto a = ancestral_sample(run_base, s, cond, 8, 5, 25);
  auto b = ancestral_sample(run_attached, s, cond, 8, 5, 25);
  EXPECT_LT(max_abs_diff(a.final_sample, b.final_sample), 1e-5);
}

TEST(Sampler, TrajectoryCsvHasOneRowPerStateAndInstance) {
  auto s = make_schedule(100, 1e-4, 0.02);
  auto zero = [](const Tensor& z, std::span<const int>, std::span<const int>) { return Tensor::zeros(z.shape()); };
  std::vector<int> cond{0, 1};
  auto traj = ancestral_sample(zero, s, cond, 3, 1, 4);
  std::ostringstream out;
  write_trajectory_csv(out, traj);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,instance,x0,x1,x2");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 5 * 2);
}
