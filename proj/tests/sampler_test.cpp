// Copyright 2026 The adadiffuse Authors.
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
#include <random>
#include <vector>

#include "adadiffuse/diffusion.hpp"
#include "adadiffuse/sampler.hpp"

namespace adadiffuse {
namespace {

NoiseSchedule random_schedule(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> beta(1e-4, 0.3);
  std::vector<double> betas(n);
  for (auto& b : betas) b = beta(rng);
  return NoiseSchedule::from_betas(betas);
}

Denoiser small_denoiser(std::size_t dim, ConditioningMode mode = ConditioningMode::continuous_alpha) {
  return make_denoiser(dim, mode, NoiseSchedule::from_betas(linear_betas(1e-4, 2e-2, 1000)), 77,
                       {16, 16});
}

SamplerConfig small_config(std::size_t steps) {
  SamplerConfig cfg;
  cfg.steps = steps;
  cfg.sample_count = 32;
  return cfg;
}

TEST(DdpmUpdate, NearZeroBetaAtFinalStepIsNearIdentity) {
  const auto s = NoiseSchedule::from_betas({kMinBeta});
  Rng rng(1);
  const RealBuffer y = standard_normal({5, 2}, rng);
  const RealBuffer z = standard_normal({5, 2}, rng);
  const RealBuffer out = ddpm_update(y, RealBuffer(y.shape()), 1, s, z);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(out[i], y[i], 1e-5 * std::abs(y[i]) + 1e-15);
}

TEST(DdpmUpdate, ZeroNoisePredictionRescalesAtFinalStep) {
  const auto s = NoiseSchedule::from_betas({0.19});
  const RealBuffer y = RealBuffer::vector({0.9, -1.8});
  const RealBuffer out = ddpm_update(y, RealBuffer({2}), 1, s, RealBuffer::vector({5.0, 5.0}));
  EXPECT_NEAR(out[0], 0.9 / 0.9, 1e-15);
  EXPECT_NEAR(out[1], -1.8 / 0.9, 1e-15);
}

TEST(DdpmUpdate, MatchesIndependentFormula) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_schedule(8, rng);
    const std::size_t n = 1 + trial % 8;
    const RealBuffer y = standard_normal({4, 3}, rng);
    const RealBuffer e = standard_normal({4, 3}, rng);
    const RealBuffer z = standard_normal({4, 3}, rng);
    const RealBuffer out = ddpm_update(y, e, n, s, z);
    const double beta = s.betas()[n - 1];
    double ab = 1.0;
    for (std::size_t i = 0; i < n; ++i) ab *= 1.0 - s.betas()[i];
    for (std::size_t i = 0; i < y.size(); ++i) {
      double expected = (y[i] - beta / std::sqrt(1.0 - ab) * e[i]) / std::sqrt(1.0 - beta);
      if (n != 1) expected += std::sqrt(beta) * z[i];
      EXPECT_NEAR(out[i], expected, 1e-12 * std::max(1.0, std::abs(expected)));
    }
  }
}

TEST(DdpmUpdate, OutOfRangeStepRejected) {
  const auto s = NoiseSchedule::from_betas({0.1, 0.2});
  const RealBuffer y({1, 2});
  EXPECT_THROW(ddpm_update(y, y, 3, s, y), std::out_of_range);
  EXPECT_THROW(ddpm_update(y, y, 0, s, y), std::out_of_range);
}

TEST(DdimUpdate, InvertsForwardProcessWithTrueNoise) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_schedule(10, rng);
    const std::size_t n = 1 + trial % 10;
    const RealBuffer y0 = standard_normal({3, 2}, rng);
    const RealBuffer eps = standard_normal({3, 2}, rng);
    const RealBuffer yn = forward_diffuse(y0, s.alpha_bar(n), eps);
    const RealBuffer clean = predict_clean(yn, eps, n, s);
    for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_NEAR(clean[i], y0[i], 1e-10);
  }
}

TEST(DdimUpdate, EtaZeroIsDeterministicAndNoiseFree) {
  Rng rng(4);
  const auto s = random_schedule(6, rng);
  const RealBuffer y = standard_normal({4, 2}, rng);
  const RealBuffer e = standard_normal({4, 2}, rng);
  const RealBuffer z1 = standard_normal({4, 2}, rng);
  const RealBuffer z2 = standard_normal({4, 2}, rng);
  EXPECT_EQ(ddim_update(y, e, 4, s, 0.0, z1), ddim_update(y, e, 4, s, 0.0, z2));
}

TEST(DdimUpdate, EtaOneMatchesIndependentFormula) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_schedule(7, rng);
    const std::size_t n = 1 + trial % 7;
    const RealBuffer y = standard_normal({2, 3}, rng);
    const RealBuffer e = standard_normal({2, 3}, rng);
    const RealBuffer z = standard_normal({2, 3}, rng);
    const RealBuffer out = ddim_update(y, e, n, s, 1.0, z);
    double ab = 1.0, ab_prev = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      ab_prev = ab;
      ab *= 1.0 - s.betas()[i];
    }
    const double beta = s.betas()[n - 1];
    const double sigma = std::sqrt(beta * (1.0 - ab_prev) * (1.0 - ab));
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double y0_hat = (y[i] - std::sqrt(1.0 - ab) * e[i]) / std::sqrt(ab);
      const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
      const double expected = std::sqrt(ab_prev) * y0_hat + dir * e[i] + sigma * z[i];
      EXPECT_NEAR(out[i], expected, 1e-12 * std::max(1.0, std::abs(expected)));
    }
  }
}

TEST(DdimUpdate, InconsistentScheduleFlagged) {
  const auto s = NoiseSchedule::from_betas({0.5, 0.5});
  const RealBuffer y = RealBuffer::matrix(1, 2, {0.1, 0.2});
  // sigma^2 = 100 * 0.5 * 0.5 * 0.75 exceeds 1 - alpha_bar_1 = 0.5.
  EXPECT_THROW(ddim_update(y, y, 2, s, 10.0, y), ScheduleInconsistency);
  EXPECT_NO_THROW(ddim_update(y, y, 2, s, 1.0, y));
}

TEST(InitialSchedule, Examples) {
  SamplerConfig cfg = small_config(1);
  EXPECT_EQ(initial_noise_schedule(cfg).betas(), (std::vector<double>{cfg.family.beta0}));
  cfg.steps = 4;
  cfg.family = {ScheduleKind::fibonacci, 1e-4};
  const auto betas = initial_noise_schedule(cfg).betas();
  const std::vector<double> expected{1e-4, 1e-4, 2e-4, 3e-4};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(betas[i], expected[i], 1e-18);
}

TEST(InitialSchedule, InvariantsOverGrid) {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::fibonacci}) {
    for (std::size_t n : {1u, 2u, 6u, 20u, 50u, 1000u}) {
      for (double b0 : {1e-6, 1e-4, 1e-2}) {
        SamplerConfig cfg = small_config(n);
        cfg.family = {kind, b0};
        const auto s = initial_noise_schedule(cfg);
        ASSERT_EQ(s.steps(), n);
        for (double b : s.betas()) {
          EXPECT_GE(b, kMinBeta);
          EXPECT_LE(b, kMaxBeta);
        }
        for (std::size_t i = 1; i <= n; ++i) {
          if (s.alpha_bar(i - 1) > 0.0) {
            EXPECT_LT(s.alpha_bar(i), s.alpha_bar(i - 1));
          } else {
            EXPECT_EQ(s.alpha_bar(i), 0.0);
          }
        }
      }
    }
  }
}

TEST(SamplerConfig, RejectsAdjustmentOutsideRange) {
  SamplerConfig cfg = small_config(3);
  cfg.adjustment_set = {0};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.adjustment_set = {4};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.adjustment_set = {1, 3};
  EXPECT_NO_THROW(cfg.validate());
}

TEST(SampleFixed, SingleStepHasOneTraceEntry) {
  const Denoiser d = small_denoiser(2);
  const SamplerConfig cfg = small_config(1);
  Rng rng(1);
  const auto result = sample_fixed(d, initial_noise_schedule(cfg), cfg, rng);
  ASSERT_EQ(result.trace.steps.size(), 1u);
  EXPECT_EQ(result.trace.steps[0].n, 1u);
  EXPECT_FALSE(result.trace.steps[0].alpha_hat.has_value());
  EXPECT_EQ(result.samples.shape(), (std::vector<std::size_t>{32, 2}));
}

TEST(SampleFixed, SeedDeterminismForBothRules) {
  const Denoiser d = small_denoiser(2);
  for (auto rule : {UpdateRule::ddim, UpdateRule::ddpm}) {
    SamplerConfig cfg = small_config(5);
    cfg.update_rule = rule;
    Rng a(9), b(9);
    const auto schedule = initial_noise_schedule(cfg);
    EXPECT_EQ(sample_fixed(d, schedule, cfg, a).samples, sample_fixed(d, schedule, cfg, b).samples);
  }
}

TEST(SampleFixed, RejectsScheduleLengthAndModeMismatch) {
  const Denoiser d = small_denoiser(2);
  SamplerConfig cfg = small_config(5);
  Rng rng(1);
  EXPECT_THROW(sample_fixed(d, NoiseSchedule::from_betas({0.1}), cfg, rng), std::invalid_argument);
  cfg.conditioning = ConditioningMode::discrete_index;
  EXPECT_THROW(sample_fixed(d, initial_noise_schedule(cfg), cfg, rng), std::invalid_argument);
}

TEST(SampleAdaptive, EmptyAdjustmentSetReducesToFixed) {
  const NoiseEstimator e = make_estimator(2, 5, {8, 8});
  for (auto mode : {ConditioningMode::continuous_alpha, ConditioningMode::discrete_index}) {
    const Denoiser d = small_denoiser(2, mode);
    for (auto rule : {UpdateRule::ddim, UpdateRule::ddpm}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SamplerConfig cfg = small_config(6);
        cfg.update_rule = rule;
        cfg.eta = 0.5;
        cfg.conditioning = mode;
        Rng a(seed), b(seed);
        const auto fixed = sample_fixed(d, initial_noise_schedule(cfg), cfg, a);
        const auto adaptive = sample_adaptive(d, e, cfg, b);
        EXPECT_EQ(fixed.samples, adaptive.samples);
        EXPECT_EQ(adaptive.trace.estimator_queries(), 0u);
        EXPECT_EQ(fixed.trace.initial_noise_hash, adaptive.trace.initial_noise_hash);
      }
    }
  }
}

TEST(SampleAdaptive, FullAdjustmentBookkeeping) {
  const Denoiser d = small_denoiser(2);
  const NoiseEstimator e = make_estimator(2, 5, {8, 8});
  SamplerConfig cfg = small_config(6);
  cfg.adjustment_set = SamplerConfig::every_step(6);
  Rng rng(3);
  const auto result = sample_adaptive(d, e, cfg, rng);
  ASSERT_EQ(result.trace.steps.size(), 6u);
  EXPECT_EQ(result.trace.estimator_queries(), 6u);
  EXPECT_EQ(result.trace.resolves(), 6u);
  for (const auto& step : result.trace.steps) {
    ASSERT_TRUE(step.alpha_hat.has_value());
    EXPECT_GT(*step.alpha_hat, 0.0);
    EXPECT_LT(*step.alpha_hat, 1.0);
    EXPECT_EQ(*step.resolved_steps, step.n - 1);
    if (step.n > 1) {
      EXPECT_EQ(step.betas.size(), step.n - 1);
    }
  }
}

TEST(SampleAdaptive, PartialAdjustmentQueriesOnlyListedSteps) {
  const Denoiser d = small_denoiser(2);
  const NoiseEstimator e = make_estimator(2, 5, {8, 8});
  SamplerConfig cfg = small_config(6);
  cfg.adjustment_set = {5, 2};
  Rng rng(3);
  const auto result = sample_adaptive(d, e, cfg, rng);
  for (const auto& step : result.trace.steps) {
    EXPECT_EQ(step.alpha_hat.has_value(), step.n == 5 || step.n == 2);
  }
}

// Replays the adaptive DDPM loop with the public building blocks.
TEST(SampleAdaptive, DdpmMatchesHandReplay) {
  const Denoiser d = small_denoiser(2);
  const NoiseEstimator e = make_estimator(2, 11, {8, 8});
  SamplerConfig cfg = small_config(3);
  cfg.update_rule = UpdateRule::ddpm;
  cfg.family = {ScheduleKind::fibonacci, 1e-3};
  cfg.adjustment_set = {3, 2};
  Rng rng(21);
  const auto result = sample_adaptive(d, e, cfg, rng);

  Rng replay(21);
  const std::vector<std::size_t> shape{cfg.sample_count, 2};
  RealBuffer y = standard_normal(shape, replay);
  NoiseSchedule schedule = initial_noise_schedule(cfg);
  for (std::size_t n = 3; n >= 1; --n) {
    const RealBuffer z = standard_normal(shape, replay);
    const RealBuffer eps = predict_noise(d, y, d.conditioning(schedule.alpha_bar(n)));
    if (n == 1) {
      y = ddpm_update(y, eps, n, schedule, z);
      break;
    }
    y = ddpm_mean(y, eps, n, schedule);
    const double ahat = estimate_level(e, y);
    schedule = update_noise_schedule(ahat, n - 1, cfg.family);
    add_scaled(y, std::sqrt(schedule.beta(n - 1)), z);
  }
  EXPECT_EQ(result.samples, y);
}

TEST(SampleAdaptive, DdimMatchesHandReplay) {
  const Denoiser d = small_denoiser(2);
  const NoiseEstimator e = make_estimator(2, 11, {8, 8});
  SamplerConfig cfg = small_config(4);
  cfg.eta = 0.7;
  cfg.adjustment_set = {4, 3, 2, 1};
  Rng rng(22);
  const auto result = sample_adaptive(d, e, cfg, rng);

  Rng replay(22);
  const std::vector<std::size_t> shape{cfg.sample_count, 2};
  RealBuffer y = standard_normal(shape, replay);
  NoiseSchedule schedule = initial_noise_schedule(cfg);
  for (std::size_t n = 4; n >= 1; --n) {
    const RealBuffer z = standard_normal(shape, replay);
    const RealBuffer eps = predict_noise(d, y, d.conditioning(schedule.alpha_bar(n)));
    const double sigma = ddim_sigma(n, schedule, cfg.eta);
    y = ddim_mean(y, eps, n, schedule, sigma);
    if (n == 1) break;
    schedule = update_noise_schedule(estimate_level(e, y), n - 1, cfg.family);
    add_scaled(y, sigma, z);
  }
  EXPECT_EQ(result.samples, y);
}

TEST(SampleAdaptive, EstimatorWidthMismatchRejected) {
  const Denoiser d = small_denoiser(2);
  const NoiseEstimator e = make_estimator(3, 5, {8, 8});
  const SamplerConfig cfg = small_config(3);
  Rng rng(1);
  EXPECT_THROW(sample_adaptive(d, e, cfg, rng), ShapeError);
}

}  // namespace
}  // namespace adadiffuse
