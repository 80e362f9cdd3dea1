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
 * @file diffusion.hpp
 * @brief Forward corruption, noise-level sampling and the two training loops.
 *
 * Both loops draw a stage s uniformly from {1..N}, a level sqrt(alpha_bar)
 * uniformly between the stage boundaries l_s and l_{s-1}, and Gaussian noise
 * eps, then corrupt clean rows as sqrt(alpha_bar) y0 + sqrt(1 - alpha_bar) eps.
 * The denoiser regresses eps under an L1 loss. The estimator regresses the
 * level under the log-gap loss |log(1 - a) - log(1 - a_hat)|, which weighs
 * errors near a = 1 far more heavily than the same absolute error mid-range.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "adadiffuse/adam.hpp"
#include "adadiffuse/datasets.hpp"
#include "adadiffuse/models.hpp"
#include "adadiffuse/schedule.hpp"

namespace adadiffuse {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t total_steps = 10000;
  std::uint64_t seed = 0;
  std::size_t stage_count = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  /// Rows per estimator example; every row of an example shares one level.
  std::size_t set_size = 1;
  /// Rate reached after the last step under geometric decay; 0 keeps the rate constant.
  double final_learning_rate = 0.0;
  /// Estimator examples used to calibrate the head before training; 0 skips it.
  std::size_t calibration_groups = 64;

  /// learning_rate * (final / learning_rate)^(step / total_steps).
  double learning_rate_at(std::size_t step) const {
    if (final_learning_rate == 0.0) return learning_rate;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return learning_rate * std::pow(final_learning_rate / learning_rate, progress);
  }

  void validate() const {
    if (!(learning_rate > 0.0) || batch_size == 0 || total_steps == 0 ||
        stage_count == 0 || set_size == 0) {
      throw std::invalid_argument(
          "training config: learning_rate, batch_size, total_steps, stage_count and "
          "set_size must all be positive");
    }
    if (!(beta_start >= kMinBeta && beta_end <= kMaxBeta && beta_start <= beta_end)) {
      throw std::invalid_argument("training config: need 1e-6 <= beta_start <= beta_end <= 0.999");
    }
    if (!(final_learning_rate >= 0.0 && std::isfinite(final_learning_rate))) {
      throw std::invalid_argument("training config: final_learning_rate must be >= 0");
    }
    if (calibration_groups == 1) {
      throw std::invalid_argument("training config: calibration_groups must be 0 or at least 2");
    }
  }

  NoiseSchedule schedule() const {
    return NoiseSchedule::from_betas(linear_betas(beta_start, beta_end, stage_count));
  }
};

/// sqrt(alpha_bar) y0 + sqrt(1 - alpha_bar) eps.
inline RealBuffer forward_diffuse(const RealBuffer& y0, double alpha_bar,
                                  const RealBuffer& epsilon) {
  require_same_shape(y0, epsilon, "forward_diffuse");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) {
    throw std::invalid_argument("forward_diffuse: alpha_bar outside [0, 1]");
  }
  const double signal = std::sqrt(alpha_bar);
  const double noise = std::sqrt(1.0 - alpha_bar);
  RealBuffer out(y0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = signal * y0[i] + noise * epsilon[i];
  }
  return out;
}

struct NoiseLevel {
  std::size_t stage = 1;
  double sqrt_alpha_bar = 1.0;
};

/// s ~ U{1..N}, sqrt(alpha_bar) ~ U[l_s, l_{s-1}].
inline NoiseLevel sample_noise_level(Rng& rng, const std::vector<double>& l) {
  if (l.size() < 2) throw ScheduleError("sample_noise_level: need at least two boundaries");
  const std::size_t stages = l.size() - 1;
  std::uniform_int_distribution<std::size_t> pick(1, stages);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  NoiseLevel level;
  level.stage = pick(rng);
  const double hi = l[level.stage - 1];
  const double lo = l[level.stage];
  level.sqrt_alpha_bar = lo + (hi - lo) * unit(rng);
  return level;
}

/// Clean rows, their corrupted versions and the noise that was injected.
/// Rows come in groups of `group_size`; each group shares one level.
struct NoisyBatch {
  RealBuffer y0;
  RealBuffer ys;
  RealBuffer epsilon;
  std::vector<NoiseLevel> levels;  // one per group
  std::size_t group_size = 1;

  std::size_t groups() const { return levels.size(); }
};

inline NoisyBatch make_noisy_batch(RealBuffer y0, std::size_t group_size, Rng& rng,
                                   const std::vector<double>& l) {
  if (y0.rank() != 2 || group_size == 0 || y0.rows() % group_size != 0) {
    throw ShapeError("make_noisy_batch: " + shape_string(y0.shape()) +
                     " does not split into groups of " + std::to_string(group_size));
  }
  NoisyBatch batch;
  batch.group_size = group_size;
  const std::size_t groups = y0.rows() / group_size;
  batch.levels.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) batch.levels.push_back(sample_noise_level(rng, l));
  batch.epsilon = standard_normal(y0.shape(), rng);
  batch.ys = RealBuffer(y0.shape());
  const std::size_t row_width = y0.cols();
  for (std::size_t g = 0; g < groups; ++g) {
    const double signal = batch.levels[g].sqrt_alpha_bar;
    const double noise = std::sqrt(1.0 - signal * signal);
    const std::size_t begin = g * group_size * row_width;
    const std::size_t end = begin + group_size * row_width;
    for (std::size_t i = begin; i < end; ++i) {
      batch.ys[i] = signal * y0[i] + noise * batch.epsilon[i];
    }
  }
  batch.y0 = std::move(y0);
  return batch;
}

inline constexpr double kLevelClamp = 1e-7;

/// Root mean square of log(1 - a) - log(1 - a_hat) over the pairs, both
/// arguments clamped into [1e-7, 1 - 1e-7].
inline double estimator_loss(std::span<const double> alpha_bar,
                             std::span<const double> alpha_bar_hat) {
  if (alpha_bar.size() != alpha_bar_hat.size() || alpha_bar.empty()) {
    throw ShapeError("estimator_loss: need equally sized, non-empty inputs");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
    const double a = std::clamp(alpha_bar[i], kLevelClamp, 1.0 - kLevelClamp);
    const double b = std::clamp(alpha_bar_hat[i], kLevelClamp, 1.0 - kLevelClamp);
    const double gap = std::log1p(-a) - std::log1p(-b);
    sum += gap * gap;
  }
  return std::sqrt(sum / static_cast<double>(alpha_bar.size()));
}

inline double estimator_loss(double alpha_bar, double alpha_bar_hat) {
  return estimator_loss(std::span<const double>(&alpha_bar, 1),
                        std::span<const double>(&alpha_bar_hat, 1));
}

/// d loss / d a_hat for every pair; zero where the loss is zero or a_hat is clamped.
inline std::vector<double> estimator_loss_gradient(std::span<const double> alpha_bar,
                                                   std::span<const double> alpha_bar_hat) {
  const double loss = estimator_loss(alpha_bar, alpha_bar_hat);
  std::vector<double> grad(alpha_bar.size(), 0.0);
  if (loss == 0.0) return grad;
  const double count = static_cast<double>(alpha_bar.size());
  for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
    const double a = std::clamp(alpha_bar[i], kLevelClamp, 1.0 - kLevelClamp);
    const double raw = alpha_bar_hat[i];
    if (raw < kLevelClamp || raw > 1.0 - kLevelClamp) continue;
    const double gap = std::log1p(-a) - std::log1p(-raw);
    grad[i] = gap / (count * loss * (1.0 - raw));
  }
  return grad;
}

struct DenoiserGradients {
  double loss = 0.0;
  NetworkParams params;
};

/// Mean absolute error between eps and eps_theta on a prepared batch, with
/// its parameter gradient.
inline DenoiserGradients denoiser_gradients(const Denoiser& model, const NoisyBatch& batch) {
  const std::size_t rows = batch.ys.rows();
  std::vector<double> cond(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& level = batch.levels[r / batch.group_size];
    cond[r] = model.training_conditioning(level.stage, level.sqrt_alpha_bar);
  }
  ForwardCache cache;
  const RealBuffer prediction = forward(model.net, denoiser_input(model, batch.ys, cond), &cache);
  const double count = static_cast<double>(prediction.size());
  double loss = 0.0;
  RealBuffer grad(prediction.shape());
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double residual = prediction[i] - batch.epsilon[i];
    loss += std::abs(residual);
    grad[i] = (residual > 0.0 ? 1.0 : (residual < 0.0 ? -1.0 : 0.0)) / count;
  }
  loss /= count;
  if (!std::isfinite(loss)) throw NumericError("denoiser step: non-finite loss");
  return {loss, backward(model.net, cache, grad).params};
}

/// One optimiser step of the denoiser on a prepared batch; returns the loss.
/// Parameters stay untouched when the loss or any gradient is non-finite.
inline double denoiser_update(Denoiser& model, AdamState& optimizer, const NoisyBatch& batch) {
  const DenoiserGradients g = denoiser_gradients(model, batch);
  adam_step(model.net, g.params, optimizer);
  return g.loss;
}

/// Draws a batch of clean rows, corrupts it and takes one denoiser step.
inline double denoiser_train_step(Denoiser& model, AdamState& optimizer,
                                  const RealBuffer& dataset, Rng& rng,
                                  const TrainConfig& cfg) {
  RealBuffer y0 = sample_rows(dataset, cfg.batch_size, rng);
  const NoisyBatch batch = make_noisy_batch(std::move(y0), 1, rng, model.training_boundaries);
  return denoiser_update(model, optimizer, batch);
}

struct EstimatorOptimizer {
  AdamState encoder;
  AdamState head;

  static EstimatorOptimizer for_model(const NoiseEstimator& model, double learning_rate) {
    return {AdamState::for_params(model.encoder, learning_rate),
            AdamState::for_params(model.head, learning_rate)};
  }
};

struct EstimatorGradients {
  double loss = 0.0;
  NetworkParams encoder;
  NetworkParams head;
};

/// True level of every group in the batch.
inline std::vector<double> batch_levels(const NoisyBatch& batch) {
  std::vector<double> truth(batch.groups());
  for (std::size_t g = 0; g < truth.size(); ++g) {
    truth[g] = batch.levels[g].sqrt_alpha_bar * batch.levels[g].sqrt_alpha_bar;
  }
  return truth;
}

/// Log-gap loss of the estimator on a prepared batch with its gradients.
inline EstimatorGradients estimator_gradients(const NoiseEstimator& model,
                                              const NoisyBatch& batch) {
  ForwardCache encoder_cache;
  ForwardCache head_cache;
  const RealBuffer features = forward(model.encoder, estimator_input(batch.ys), &encoder_cache);
  const RealBuffer pooled = mean_pool(features, batch.group_size);
  const RealBuffer predicted = forward(model.head, pooled, &head_cache);

  const std::vector<double> truth = batch_levels(batch);
  const double loss = estimator_loss(truth, predicted.values());
  if (!std::isfinite(loss)) throw NumericError("estimator step: non-finite loss");

  const auto dloss = estimator_loss_gradient(truth, predicted.values());
  Gradients head_grads = backward(model.head, head_cache, RealBuffer(predicted.shape(), dloss));
  // Mean pooling spreads each group's feature gradient evenly over its rows.
  RealBuffer feature_grads(features.shape());
  const double inv = 1.0 / static_cast<double>(batch.group_size);
  const std::size_t width = features.cols();
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto src = head_grads.input.row(r / batch.group_size);
    auto dst = feature_grads.row(r);
    for (std::size_t j = 0; j < width; ++j) dst[j] = src[j] * inv;
  }
  Gradients encoder_grads = backward(model.encoder, encoder_cache, feature_grads);
  return {loss, std::move(encoder_grads.params), std::move(head_grads.params)};
}

/// One optimiser step of the estimator on a prepared batch; returns the
/// log-gap loss. Neither network changes when any gradient is non-finite.
inline double estimator_update(NoiseEstimator& model, EstimatorOptimizer& optimizer,
                               const NoisyBatch& batch) {
  const EstimatorGradients g = estimator_gradients(model, batch);
  if (!g.head.all_finite() || !g.encoder.all_finite()) {
    throw NumericError("estimator step: non-finite gradient");
  }
  adam_step(model.head, g.head, optimizer.head);
  adam_step(model.encoder, g.encoder, optimizer.encoder);
  return g.loss;
}

/// Draws cfg.batch_size examples of cfg.set_size rows each, corrupts each
/// example at its own level and takes one estimator step.
inline double estimator_train_step(NoiseEstimator& model, EstimatorOptimizer& optimizer,
                                   const RealBuffer& dataset, Rng& rng,
                                   const TrainConfig& cfg, const std::vector<double>& l) {
  RealBuffer y0 = sample_rows(dataset, cfg.batch_size * cfg.set_size, rng);
  const NoisyBatch batch = make_noisy_batch(std::move(y0), cfg.set_size, rng, l);
  return estimator_update(model, optimizer, batch);
}

using LossCallback = std::function<void(std::size_t step, double loss)>;

/// Runs cfg.total_steps denoiser steps from a generator seeded with cfg.seed.
inline std::vector<double> train_denoiser(Denoiser& model, const RealBuffer& dataset,
                                          const TrainConfig& cfg,
                                          const LossCallback& on_step = {}) {
  cfg.validate();
  Rng rng(cfg.seed);
  AdamState optimizer = AdamState::for_params(model.net, cfg.learning_rate);
  std::vector<double> losses;
  losses.reserve(cfg.total_steps);
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    optimizer.learning_rate = cfg.learning_rate_at(step);
    losses.push_back(denoiser_train_step(model, optimizer, dataset, rng, cfg));
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

inline constexpr double kCalibrationMinSpread = 1e-2;
inline constexpr double kCalibrationOutputScale = 0.1;

/// Data-dependent initialisation of the estimator head. Pooled features of
/// `groups` noisy examples are measured; the head's first layer is rescaled so
/// each feature enters centred and divided by its spread (floored at 1e-2),
/// and the output layer weights are shrunk tenfold so training starts away
/// from the sigmoid's flat tails.
inline void calibrate_estimator(NoiseEstimator& model, const RealBuffer& dataset,
                                std::size_t groups, std::size_t set_size, Rng& rng,
                                const std::vector<double>& l) {
  if (groups < 2 || set_size == 0) {
    throw std::invalid_argument("calibrate_estimator: need at least two examples of one row");
  }
  RealBuffer y0 = sample_rows(dataset, groups * set_size, rng);
  const NoisyBatch batch = make_noisy_batch(std::move(y0), set_size, rng, l);
  const RealBuffer pooled =
      mean_pool(forward(model.encoder, estimator_input(batch.ys)), set_size);
  DenseLayer& first = model.head.layers.front();
  const std::size_t width = pooled.cols();
  const double count = static_cast<double>(groups);
  for (std::size_t j = 0; j < width; ++j) {
    double mean = 0.0;
    for (std::size_t g = 0; g < groups; ++g) mean += pooled[g * width + j];
    mean /= count;
    double var = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      const double d = pooled[g * width + j] - mean;
      var += d * d;
    }
    const double spread = std::max(std::sqrt(var / count), kCalibrationMinSpread);
    for (std::size_t o = 0; o < first.out_dim(); ++o) {
      double& w = first.weight[o * width + j];
      w /= spread;
      first.bias[o] -= w * mean;
    }
  }
  for (double& w : model.head.layers.back().weight.values()) w *= kCalibrationOutputScale;
}

inline std::vector<double> train_estimator(NoiseEstimator& model, const RealBuffer& dataset,
                                           const TrainConfig& cfg,
                                           const LossCallback& on_step = {}) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto l = cfg.schedule().boundaries();
  if (cfg.calibration_groups > 0) {
    calibrate_estimator(model, dataset, cfg.calibration_groups, cfg.set_size, rng, l);
  }
  EstimatorOptimizer optimizer = EstimatorOptimizer::for_model(model, cfg.learning_rate);
  std::vector<double> losses;
  losses.reserve(cfg.total_steps);
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    optimizer.encoder.learning_rate = cfg.learning_rate_at(step);
    optimizer.head.learning_rate = optimizer.encoder.learning_rate;
    losses.push_back(estimator_train_step(model, optimizer, dataset, rng, cfg, l));
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

}  // namespace adadiffuse
