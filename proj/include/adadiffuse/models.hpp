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
 * @file models.hpp
 * @brief The two networks of the method: the noise predictor and the
 *        noise-level estimator.
 *
 * Denoiser: an MLP over [y, c, embed(c)] where c is the conditioning scalar
 * (sqrt(alpha_bar) in continuous mode, t / N in discrete-index mode) and
 * embed() is a 16-wide sinusoidal feature map of c. It acts on each row of a
 * state independently.
 *
 * NoiseEstimator: reads a whole state (a set of rows sharing one noise
 * level). Every row, extended by its mean squared coordinate, goes through
 * the encoder MLP, the encodings are averaged, and the head maps the average
 * to a level in (0, 1) through a sigmoid. A single-row state reduces this to
 * a plain MLP.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadiffuse/mlp.hpp"
#include "adadiffuse/schedule.hpp"

namespace adadiffuse {

enum class ConditioningMode : std::uint8_t { continuous_alpha = 0, discrete_index = 1 };

inline const char* conditioning_mode_name(ConditioningMode mode) {
  return mode == ConditioningMode::continuous_alpha ? "continuous_alpha"
                                                    : "discrete_index";
}

inline ConditioningMode parse_conditioning_mode(const std::string& text) {
  if (text == "continuous_alpha") return ConditioningMode::continuous_alpha;
  if (text == "discrete_index") return ConditioningMode::discrete_index;
  throw std::invalid_argument("unknown conditioning mode '" + text +
                              "' (expected continuous_alpha or discrete_index)");
}

inline constexpr std::size_t kEmbeddingWidth = 16;

/// Writes [c, sin(w_0 c), cos(w_0 c), ..., sin(w_7 c), cos(w_7 c)] with
/// w_k = pi * 2^k into `out` (17 values).
inline void conditioning_features(double c, std::span<double> out) {
  out[0] = c;
  for (std::size_t k = 0; k < kEmbeddingWidth / 2; ++k) {
    const double w = std::numbers::pi * static_cast<double>(1U << k);
    out[1 + 2 * k] = std::sin(w * c);
    out[2 + 2 * k] = std::cos(w * c);
  }
}

struct Denoiser {
  NetworkParams net;
  std::size_t data_dim = 0;
  ConditioningMode mode = ConditioningMode::continuous_alpha;
  /// Boundary table of the training-time schedule; discrete-index mode maps
  /// levels to interval indices against it.
  std::vector<double> training_boundaries;

  std::size_t stage_count() const { return training_boundaries.size() - 1; }

  /// Conditioning scalar for a state whose cumulative level is alpha_bar.
  double conditioning(double alpha_bar) const {
    if (mode == ConditioningMode::continuous_alpha) return std::sqrt(alpha_bar);
    const auto t = index_for_level(alpha_bar, training_boundaries);
    return static_cast<double>(t) / static_cast<double>(stage_count());
  }

  /// Conditioning scalar for training stage s (discrete mode) or level
  /// sqrt_alpha_bar (continuous mode).
  double training_conditioning(std::size_t stage, double sqrt_alpha_bar) const {
    if (mode == ConditioningMode::continuous_alpha) return sqrt_alpha_bar;
    return static_cast<double>(stage) / static_cast<double>(stage_count());
  }

  friend bool operator==(const Denoiser&, const Denoiser&) = default;
};

inline Denoiser make_denoiser(std::size_t data_dim, ConditioningMode mode,
                              const NoiseSchedule& training_schedule, std::uint64_t seed,
                              std::initializer_list<std::size_t> hidden = {128, 128, 128}) {
  Denoiser d;
  d.data_dim = data_dim;
  d.mode = mode;
  d.training_boundaries = training_schedule.boundaries();
  d.net = make_mlp(data_dim + 1 + kEmbeddingWidth, hidden, data_dim, Activation::relu,
                   Activation::identity, seed);
  return d;
}

/// Network input for the rows of `y` ([rows, dim]) with per-row conditioning.
inline RealBuffer denoiser_input(const Denoiser& model, const RealBuffer& y,
                                 std::span<const double> conditioning) {
  if (y.rank() != 2 || y.cols() != model.data_dim) {
    throw ShapeError("denoiser: state " + shape_string(y.shape()) +
                     " does not have rows of width " + std::to_string(model.data_dim));
  }
  if (conditioning.size() != y.rows()) {
    throw ShapeError("denoiser: one conditioning value per row required");
  }
  const std::size_t width = model.data_dim + 1 + kEmbeddingWidth;
  RealBuffer input({y.rows(), width});
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto dst = input.row(r);
    const auto src = y.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    conditioning_features(conditioning[r], dst.subspan(model.data_dim));
  }
  return input;
}

/// eps_theta(y, c) with one shared conditioning value for every row.
inline RealBuffer predict_noise(const Denoiser& model, const RealBuffer& y, double c) {
  const std::vector<double> cond(y.rows(), c);
  return forward(model.net, denoiser_input(model, y, cond));
}

/// Per-row features appended to each state row before the encoder.
inline constexpr std::size_t kEstimatorExtraFeatures = 1;

struct NoiseEstimator {
  NetworkParams encoder;  // row -> features, relu throughout
  NetworkParams head;     // pooled features -> level, sigmoid output
  std::size_t data_dim = 0;

  friend bool operator==(const NoiseEstimator&, const NoiseEstimator&) = default;
};

/// Encoder widths come from `hidden` (the last entry is the pooled feature
/// width); the head maps pooled features through `head_hidden` to one level.
inline NoiseEstimator make_estimator(std::size_t data_dim, std::uint64_t seed,
                                     std::initializer_list<std::size_t> hidden = {64, 64},
                                     std::initializer_list<std::size_t> head_hidden = {64}) {
  if (hidden.size() == 0) throw ShapeError("estimator needs at least one hidden layer");
  const std::vector<std::size_t> widths(hidden);
  NoiseEstimator e;
  e.data_dim = data_dim;
  const std::vector<std::size_t> encoder_hidden(widths.begin(), widths.end() - 1);
  e.encoder = make_mlp(data_dim + kEstimatorExtraFeatures, encoder_hidden, widths.back(), Activation::relu,
                       Activation::relu, seed);
  e.head = make_mlp(widths.back(), std::vector<std::size_t>(head_hidden), 1, Activation::relu,
                    Activation::sigmoid, seed ^ 0x9E3779B97F4A7C15ULL);
  return e;
}

/// Averages consecutive groups of `group` rows: [groups * group, w] -> [groups, w].
inline RealBuffer mean_pool(const RealBuffer& rows, std::size_t group) {
  if (group == 0 || rows.rows() % group != 0) {
    throw ShapeError("mean_pool: " + std::to_string(rows.rows()) +
                     " rows do not split into groups of " + std::to_string(group));
  }
  const std::size_t groups = rows.rows() / group;
  const std::size_t width = rows.cols();
  RealBuffer out({groups, width});
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t g = 0; g < groups; ++g) {
    auto dst = out.row(g);
    for (std::size_t r = 0; r < group; ++r) {
      const auto src = rows.row(g * group + r);
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
    for (double& v : dst) v *= inv;
  }
  return out;
}

/// Encoder input: each row y followed by r = |y|^2 / dim and r^2.
inline RealBuffer estimator_input(const RealBuffer& states) {
  if (states.rank() != 2 || states.cols() == 0) {
    throw ShapeError("estimator: expected a non-empty [rows, dim] state, got " +
                     shape_string(states.shape()));
  }
  const std::size_t dim = states.cols();
  RealBuffer input({states.rows(), dim + kEstimatorExtraFeatures});
  for (std::size_t r = 0; r < states.rows(); ++r) {
    const auto src = states.row(r);
    auto dst = input.row(r);
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      dst[j] = src[j];
      sq += src[j] * src[j];
    }
    dst[dim] = sq / static_cast<double>(dim);
  }
  return input;
}

/// Estimated alpha_bar for every group of `group` consecutive rows of
/// `states` ([groups * group, dim]).
inline std::vector<double> estimate_levels(const NoiseEstimator& model,
                                           const RealBuffer& states, std::size_t group) {
  if (states.rank() != 2 || states.cols() != model.data_dim) {
    throw ShapeError("estimator: state " + shape_string(states.shape()) +
                     " does not have rows of width " + std::to_string(model.data_dim));
  }
  const RealBuffer pooled = mean_pool(forward(model.encoder, estimator_input(states)), group);
  const RealBuffer out = forward(model.head, pooled);
  return out.values();
}

/// Estimated alpha_bar of one whole state.
inline double estimate_level(const NoiseEstimator& model, const RealBuffer& state) {
  return estimate_levels(model, state, state.rows()).front();
}

}  // namespace adadiffuse
