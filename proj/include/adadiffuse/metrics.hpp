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

#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "adadiffuse/datasets.hpp"
#include "adadiffuse/diffusion.hpp"
#include "adadiffuse/models.hpp"

namespace adadiffuse {

namespace detail {

/// Mean Euclidean distance between rows of a and rows of b, over all pairs
/// (self pairs included when a and b are the same buffer).
inline double mean_pair_distance(const RealBuffer& a, const RealBuffer& b) {
  const std::size_t dim = a.cols();
  long double total = 0.0L;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto x = a.row(i);
    double row_total = 0.0;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto y = b.row(j);
      double sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = x[d] - y[d];
        sq += diff * diff;
      }
      row_total += std::sqrt(sq);
    }
    total += row_total;
  }
  return static_cast<double>(total / (static_cast<long double>(a.rows()) *
                                      static_cast<long double>(b.rows())));
}

}  // namespace detail

/// 2 E|X - Y| - E|X - X'| - E|Y - Y'| over all pairs of rows (V-statistic, so
/// identical sets give exactly zero).
inline double energy_distance(const RealBuffer& a, const RealBuffer& b) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw std::invalid_argument("energy_distance: empty sample set");
  }
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("energy_distance: sample sets " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ in dimensionality");
  }
  const double cross = detail::mean_pair_distance(a, b);
  const double within_a = detail::mean_pair_distance(a, a);
  const double within_b = detail::mean_pair_distance(b, b);
  return 2.0 * cross - within_a - within_b;
}

struct CurvePoint {
  double alpha_bar = 0.0;
  double mse = 0.0;
};

/// Maps one corrupted state ([set_size, dim]) to an estimated level.
using LevelEstimator = std::function<double(const RealBuffer&)>;

/// For every grid level: corrupt `samples_per_point` fresh states of
/// `set_size` rows drawn from `data`, estimate each state's level, and record
/// the mean squared error against the true level.
inline std::vector<CurvePoint> eval_estimator_curve(const LevelEstimator& estimate,
                                                    const RealBuffer& data,
                                                    const std::vector<double>& grid,
                                                    std::size_t samples_per_point,
                                                    std::size_t set_size, Rng& rng) {
  if (grid.empty()) throw std::invalid_argument("eval_estimator_curve: empty grid");
  if (samples_per_point == 0 || set_size == 0) {
    throw std::invalid_argument("eval_estimator_curve: need at least one state of one row");
  }
  for (double a : grid) {
    if (!(a > 0.0 && a < 1.0)) {
      throw std::invalid_argument("eval_estimator_curve: grid values must lie in (0, 1)");
    }
  }
  std::vector<CurvePoint> curve;
  for (double a : grid) {
    double sum = 0.0;
    for (std::size_t k = 0; k < samples_per_point; ++k) {
      const RealBuffer clean = sample_rows(data, set_size, rng);
      const RealBuffer eps = standard_normal(clean.shape(), rng);
      const double err = estimate(forward_diffuse(clean, a, eps)) - a;
      sum += err * err;
    }
    curve.push_back({a, sum / static_cast<double>(samples_per_point)});
  }
  return curve;
}

inline std::vector<CurvePoint> eval_estimator_curve(const NoiseEstimator& estimator,
                                                    const RealBuffer& data,
                                                    const std::vector<double>& grid,
                                                    std::size_t samples_per_point,
                                                    std::size_t set_size, Rng& rng) {
  return eval_estimator_curve(
      [&estimator](const RealBuffer& state) { return estimate_level(estimator, state); }, data,
      grid, samples_per_point, set_size, rng);
}

}  // namespace adadiffuse
