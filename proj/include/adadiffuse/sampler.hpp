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

/**
 * @file sampler.hpp
 * @brief Reverse-process engines.
 *
 * sample_fixed() walks a predetermined schedule from n = N down to 1.
 * sample_adaptive() does the same, except that after each step n in the
 * adjustment set it asks the estimator for the level of the new state and
 * replaces the remaining n - 1 steps with update_noise_schedule(). A run's
 * state is a [rows, dim] buffer that shares one schedule; the estimator reads
 * the whole state.
 *
 * Both engines draw y_N first and then one z per step, so they consume the
 * generator identically and an empty adjustment set reproduces sample_fixed()
 * bit for bit.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadiffuse/diffusion.hpp"
#include "adadiffuse/models.hpp"
#include "adadiffuse/schedule.hpp"

namespace adadiffuse {

enum class UpdateRule { ddpm, ddim };

inline const char* update_rule_name(UpdateRule rule) {
  return rule == UpdateRule::ddpm ? "ddpm" : "ddim";
}

inline UpdateRule parse_update_rule(const std::string& text) {
  if (text == "ddpm") return UpdateRule::ddpm;
  if (text == "ddim") return UpdateRule::ddim;
  throw std::invalid_argument("unknown update rule '" + text + "' (expected ddpm or ddim)");
}

/// Raised when a schedule cannot support the requested update.
class ScheduleInconsistency : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  std::size_t steps = 6;
  std::set<std::size_t> adjustment_set;
  ScheduleFamily family;
  UpdateRule update_rule = UpdateRule::ddim;
  double eta = 0.0;
  ConditioningMode conditioning = ConditioningMode::continuous_alpha;
  std::size_t sample_count = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps == 0) throw std::invalid_argument("sampler: steps must be positive");
    if (sample_count == 0) throw std::invalid_argument("sampler: sample_count must be positive");
    if (!(eta >= 0.0)) throw std::invalid_argument("sampler: eta must be nonnegative");
    for (std::size_t n : adjustment_set) {
      if (n < 1 || n > steps) {
        throw std::invalid_argument("sampler: adjustment index " + std::to_string(n) +
                                    " outside [1, " + std::to_string(steps) + "]");
      }
    }
    family.validate();
  }

  /// U = {1..steps}.
  static std::set<std::size_t> every_step(std::size_t steps) {
    std::set<std::size_t> all;
    for (std::size_t n = 1; n <= steps; ++n) all.insert(n);
    return all;
  }
};

/// Baseline N-step schedule: linear betas from beta0 to 2e-2, or the
/// Fibonacci sequence seeded with (beta0, beta0), clamped.
inline NoiseSchedule initial_noise_schedule(const SamplerConfig& cfg) {
  std::vector<double> betas;
  if (cfg.family.kind == ScheduleKind::linear) {
    betas = linear_betas(cfg.family.beta0, 2e-2, cfg.steps);
  } else {
    betas.resize(cfg.steps);
    for (std::size_t i = 0; i < cfg.steps; ++i) {
      betas[i] = i < 2 ? cfg.family.beta0 : betas[i - 1] + betas[i - 2];
    }
  }
  const std::size_t clamped = clamp_betas(betas);
  return NoiseSchedule::from_betas(std::move(betas), clamped);
}

/// Deterministic part of the DDPM step:
/// (y_n - (1 - alpha_n) / sqrt(1 - alpha_bar_n) eps_hat) / sqrt(alpha_n).
inline RealBuffer ddpm_mean(const RealBuffer& y, const RealBuffer& eps_hat, std::size_t n,
                            const NoiseSchedule& schedule) {
  require_same_shape(y, eps_hat, "ddpm_update");
  const double alpha = schedule.alpha(n);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(n));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  RealBuffer out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (y[i] - coef * eps_hat[i]) * inv_sqrt_alpha;
  return out;
}

inline void add_scaled(RealBuffer& y, double scale, const RealBuffer& z) {
  require_same_shape(y, z, "add_scaled");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * z[i];
}

/// Full DDPM step; adds sqrt(beta_n) z unless n == 1.
inline RealBuffer ddpm_update(const RealBuffer& y, const RealBuffer& eps_hat, std::size_t n,
                              const NoiseSchedule& schedule, const RealBuffer& z) {
  RealBuffer out = ddpm_mean(y, eps_hat, n, schedule);
  if (n != 1) add_scaled(out, std::sqrt(schedule.beta(n)), z);
  return out;
}

/// eta * sqrt(beta_n (1 - alpha_bar_{n-1}) (1 - alpha_bar_n)).
inline double ddim_sigma(std::size_t n, const NoiseSchedule& schedule, double eta) {
  return eta * std::sqrt(schedule.beta(n) * (1.0 - schedule.alpha_bar(n - 1)) *
                         (1.0 - schedule.alpha_bar(n)));
}

/// Prediction of the clean sample: (y_n - sqrt(1 - alpha_bar_n) eps_hat) / sqrt(alpha_bar_n).
inline RealBuffer predict_clean(const RealBuffer& y, const RealBuffer& eps_hat, std::size_t n,
                                const NoiseSchedule& schedule) {
  require_same_shape(y, eps_hat, "predict_clean");
  const double ab = schedule.alpha_bar(n);
  const double noise = std::sqrt(1.0 - ab);
  const double inv_signal = 1.0 / std::sqrt(ab);
  RealBuffer out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (y[i] - noise * eps_hat[i]) * inv_signal;
  return out;
}

/// Deterministic part of the DDIM step:
/// sqrt(alpha_bar_{n-1}) y0_hat + sqrt(1 - alpha_bar_{n-1} - sigma^2) eps_hat.
inline RealBuffer ddim_mean(const RealBuffer& y, const RealBuffer& eps_hat, std::size_t n,
                            const NoiseSchedule& schedule, double sigma) {
  const RealBuffer clean = predict_clean(y, eps_hat, n, schedule);
  const double prev = schedule.alpha_bar(n - 1);
  double direction = 1.0 - prev - sigma * sigma;
  if (direction < -1e-9) {
    throw ScheduleInconsistency("ddim step " + std::to_string(n) +
                                ": 1 - alpha_bar_{n-1} - sigma^2 = " +
                                std::to_string(direction));
  }
  direction = std::sqrt(std::max(direction, 0.0));
  const double signal = std::sqrt(prev);
  RealBuffer out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = signal * clean[i] + direction * eps_hat[i];
  return out;
}

/// Full DDIM step; eta == 0 adds no noise.
inline RealBuffer ddim_update(const RealBuffer& y, const RealBuffer& eps_hat, std::size_t n,
                              const NoiseSchedule& schedule, double eta, const RealBuffer& z) {
  const double sigma = ddim_sigma(n, schedule, eta);
  RealBuffer out = ddim_mean(y, eps_hat, n, schedule, sigma);
  if (sigma != 0.0) add_scaled(out, sigma, z);
  return out;
}

struct TraceStep {
  std::size_t n = 0;
  std::optional<double> alpha_hat;
  /// Remaining steps re-solved after this step (present iff n is in U).
  std::optional<std::size_t> resolved_steps;
  /// Schedule in force once the step (and any re-solve) completed.
  std::vector<double> betas;
  double wall_ms = 0.0;
};

struct TraceRecord {
  std::vector<TraceStep> steps;
  std::uint64_t initial_noise_hash = 0;
  std::size_t clamp_events = 0;

  std::size_t estimator_queries() const {
    return static_cast<std::size_t>(std::count_if(
        steps.begin(), steps.end(), [](const TraceStep& s) { return s.alpha_hat.has_value(); }));
  }
  std::size_t resolves() const {
    return static_cast<std::size_t>(std::count_if(
        steps.begin(), steps.end(), [](const TraceStep& s) { return s.resolved_steps.has_value(); }));
  }
  double total_ms() const {
    double total = 0.0;
    for (const auto& s : steps) total += s.wall_ms;
    return total;
  }
};

struct SampleResult {
  RealBuffer samples;
  TraceRecord trace;
  NoiseSchedule final_schedule;
};

namespace detail {

inline void check_models(const Denoiser& denoiser, const SamplerConfig& cfg) {
  cfg.validate();
  if (denoiser.mode != cfg.conditioning) {
    throw std::invalid_argument(std::string("sampler configured for ") +
                                conditioning_mode_name(cfg.conditioning) +
                                " conditioning but the denoiser was trained with " +
                                conditioning_mode_name(denoiser.mode));
  }
}

inline RealBuffer reverse_step(const Denoiser& denoiser, const RealBuffer& y, std::size_t n,
                               const NoiseSchedule& schedule, const SamplerConfig& cfg,
                               const RealBuffer& z) {
  const RealBuffer eps_hat = predict_noise(denoiser, y, denoiser.conditioning(schedule.alpha_bar(n)));
  return cfg.update_rule == UpdateRule::ddpm ? ddpm_update(y, eps_hat, n, schedule, z)
                                             : ddim_update(y, eps_hat, n, schedule, cfg.eta, z);
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

inline void check_state(const RealBuffer& y, std::size_t n) {
  if (!y.all_finite()) {
    throw NumericError("reverse step " + std::to_string(n) + " produced a non-finite state");
  }
}

}  // namespace detail

/// Reverse process over a fixed schedule with schedule.steps() == cfg.steps.
inline SampleResult sample_fixed(const Denoiser& denoiser, const NoiseSchedule& schedule,
                                 const SamplerConfig& cfg, Rng& rng) {
  detail::check_models(denoiser, cfg);
  if (schedule.steps() != cfg.steps) {
    throw std::invalid_argument("sample_fixed: schedule has " + std::to_string(schedule.steps()) +
                                " steps but the sampler is configured for " +
                                std::to_string(cfg.steps));
  }
  const std::vector<std::size_t> shape{cfg.sample_count, denoiser.data_dim};
  SampleResult result;
  RealBuffer y = standard_normal(shape, rng);
  result.trace.initial_noise_hash = fingerprint(y);
  result.trace.clamp_events = schedule.clamped();
  for (std::size_t n = cfg.steps; n >= 1; --n) {
    const auto start = std::chrono::steady_clock::now();
    const RealBuffer z = standard_normal(shape, rng);
    y = detail::reverse_step(denoiser, y, n, schedule, cfg, z);
    detail::check_state(y, n);
    result.trace.steps.push_back({n, std::nullopt, std::nullopt, schedule.betas(),
                                  detail::elapsed_ms(start)});
  }
  result.samples = std::move(y);
  result.final_schedule = schedule;
  return result;
}

/// Reverse process that re-derives the remaining schedule from the
/// estimator's reading of the state after every step in cfg.adjustment_set.
inline SampleResult sample_adaptive(const Denoiser& denoiser, const NoiseEstimator& estimator,
                                    const SamplerConfig& cfg, Rng& rng) {
  detail::check_models(denoiser, cfg);
  if (estimator.data_dim != denoiser.data_dim) {
    throw ShapeError("sample_adaptive: estimator and denoiser disagree on the data width");
  }
  const std::vector<std::size_t> shape{cfg.sample_count, denoiser.data_dim};
  NoiseSchedule schedule = initial_noise_schedule(cfg);
  SampleResult result;
  RealBuffer y = standard_normal(shape, rng);
  result.trace.initial_noise_hash = fingerprint(y);
  result.trace.clamp_events = schedule.clamped();

  for (std::size_t n = cfg.steps; n >= 1; --n) {
    const auto start = std::chrono::steady_clock::now();
    const RealBuffer z = standard_normal(shape, rng);
    if (!cfg.adjustment_set.contains(n)) {
      y = detail::reverse_step(denoiser, y, n, schedule, cfg, z);
      detail::check_state(y, n);
      result.trace.steps.push_back({n, std::nullopt, std::nullopt, schedule.betas(),
                                    detail::elapsed_ms(start)});
      continue;
    }

    // Denoise, read the level of the noise-free update, re-solve, then inject noise.
    const RealBuffer eps_hat =
        predict_noise(denoiser, y, denoiser.conditioning(schedule.alpha_bar(n)));
    double sigma = 0.0;
    if (cfg.update_rule == UpdateRule::ddpm) {
      y = ddpm_mean(y, eps_hat, n, schedule);
    } else {
      sigma = ddim_sigma(n, schedule, cfg.eta);
      y = ddim_mean(y, eps_hat, n, schedule, sigma);
    }
    detail::check_state(y, n);
    // A saturated sigmoid can round to exactly 0 or 1; keep the solver's domain open.
    const double alpha_hat =
        std::clamp(estimate_level(estimator, y), kLevelClamp, 1.0 - kLevelClamp);
    if (n > 1) {
      schedule = update_noise_schedule(alpha_hat, n - 1, cfg.family);
      result.trace.clamp_events += schedule.clamped();
      if (cfg.update_rule == UpdateRule::ddpm) sigma = std::sqrt(schedule.beta(n - 1));
      if (sigma != 0.0) add_scaled(y, sigma, z);
      detail::check_state(y, n);
    }
    result.trace.steps.push_back(
        {n, alpha_hat, n - 1, schedule.betas(), detail::elapsed_ms(start)});
  }
  result.samples = std::move(y);
  result.final_schedule = schedule;
  return result;
}

}  // namespace adadiffuse
