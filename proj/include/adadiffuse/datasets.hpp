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
 * @file datasets.hpp
 * @brief Seeded toy distributions.
 *
 * Standardisation uses the population moments of each distribution (closed
 * form for the mixture and the sinusoid, quadrature for the roll), never the
 * sample moments, so two batches drawn from the same spec live in the same
 * coordinates regardless of their size.
 */

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadiffuse/real_buffer.hpp"

namespace adadiffuse {

enum class DatasetKind { gaussian_mixture_2d, swiss_roll_2d, sinusoid_1d };

inline const char* dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::gaussian_mixture_2d: return "gaussian_mixture_2d";
    case DatasetKind::swiss_roll_2d: return "swiss_roll_2d";
    case DatasetKind::sinusoid_1d: return "sinusoid_1d";
  }
  return "unknown";
}

inline DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "gaussian_mixture_2d") return DatasetKind::gaussian_mixture_2d;
  if (text == "swiss_roll_2d") return DatasetKind::swiss_roll_2d;
  if (text == "sinusoid_1d") return DatasetKind::sinusoid_1d;
  throw std::invalid_argument("unknown dataset kind '" + text + "'");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_mixture_2d;
  std::size_t size = 10000;
  std::uint64_t seed = 0;

  // gaussian_mixture_2d: equal-weight components spaced on a circle.
  std::size_t components = 8;
  double radius = 2.0;
  double component_std = 0.1;

  // swiss_roll_2d
  double roll_noise = 0.5;

  // sinusoid_1d
  std::size_t length = 64;
  double min_frequency = 1.0;
  double max_frequency = 8.0;

  std::size_t dim() const { return kind == DatasetKind::sinusoid_1d ? length : 2; }

  void validate() const {
    if (size == 0) throw std::invalid_argument("dataset size must be positive");
    switch (kind) {
      case DatasetKind::gaussian_mixture_2d:
        if (components == 0 || !(component_std > 0.0) || !(radius >= 0.0)) {
          throw std::invalid_argument(
              "gaussian_mixture_2d needs components > 0, component_std > 0, radius >= 0");
        }
        break;
      case DatasetKind::swiss_roll_2d:
        if (!(roll_noise >= 0.0)) {
          throw std::invalid_argument("swiss_roll_2d needs roll_noise >= 0");
        }
        break;
      case DatasetKind::sinusoid_1d:
        if (length == 0 || !(min_frequency > 0.0) || !(max_frequency >= min_frequency)) {
          throw std::invalid_argument(
              "sinusoid_1d needs length > 0 and 0 < min_frequency <= max_frequency");
        }
        break;
    }
  }
};

namespace detail {

struct Moments2d {
  double mean[2];
  double stddev[2];
};

inline std::vector<std::array<double, 2>> mixture_centers(const DatasetSpec& spec) {
  std::vector<std::array<double, 2>> centers(spec.components);
  for (std::size_t k = 0; k < spec.components; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(spec.components);
    centers[k] = {spec.radius * std::cos(angle), spec.radius * std::sin(angle)};
  }
  return centers;
}

inline Moments2d mixture_moments(const DatasetSpec& spec) {
  const auto centers = mixture_centers(spec);
  Moments2d m{};
  const double count = static_cast<double>(centers.size());
  for (int d = 0; d < 2; ++d) {
    double mean = 0.0;
    for (const auto& c : centers) mean += c[d];
    mean /= count;
    double var = spec.component_std * spec.component_std;
    for (const auto& c : centers) var += (c[d] - mean) * (c[d] - mean) / count;
    m.mean[d] = mean;
    m.stddev[d] = std::sqrt(var);
  }
  return m;
}

inline constexpr double kRollStart = 1.5 * std::numbers::pi;
inline constexpr double kRollEnd = 4.5 * std::numbers::pi;

/// Population moments of (t cos t, t sin t) + noise, t ~ U[start, end], by
/// composite Simpson quadrature.
inline Moments2d swiss_roll_moments(double noise) {
  constexpr int kIntervals = 200000;
  const double h = (kRollEnd - kRollStart) / kIntervals;
  double sum[2] = {0, 0};
  double sum_sq[2] = {0, 0};
  for (int i = 0; i <= kIntervals; ++i) {
    const double t = kRollStart + h * i;
    const double w = (i == 0 || i == kIntervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double x = t * std::cos(t);
    const double y = t * std::sin(t);
    sum[0] += w * x;
    sum[1] += w * y;
    sum_sq[0] += w * x * x;
    sum_sq[1] += w * y * y;
  }
  const double scale = h / 3.0 / (kRollEnd - kRollStart);
  Moments2d m{};
  for (int d = 0; d < 2; ++d) {
    m.mean[d] = sum[d] * scale;
    const double var = sum_sq[d] * scale - m.mean[d] * m.mean[d] + noise * noise;
    m.stddev[d] = std::sqrt(var);
  }
  return m;
}

}  // namespace detail

/// Draws spec.size samples as a [size, dim] buffer, standardised to zero mean
/// and unit variance per dimension under the generating distribution.
inline RealBuffer generate(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RealBuffer out({spec.size, spec.dim()});

  switch (spec.kind) {
    case DatasetKind::gaussian_mixture_2d: {
      const auto centers = detail::mixture_centers(spec);
      const auto m = detail::mixture_moments(spec);
      std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
      for (std::size_t i = 0; i < spec.size; ++i) {
        const auto& c = centers[pick(rng)];
        for (int d = 0; d < 2; ++d) {
          const double v = c[d] + spec.component_std * normal(rng);
          out[2 * i + d] = (v - m.mean[d]) / m.stddev[d];
        }
      }
      break;
    }
    case DatasetKind::swiss_roll_2d: {
      const auto m = detail::swiss_roll_moments(spec.roll_noise);
      for (std::size_t i = 0; i < spec.size; ++i) {
        const double t = detail::kRollStart + (detail::kRollEnd - detail::kRollStart) * unit(rng);
        const double x = t * std::cos(t) + spec.roll_noise * normal(rng);
        const double y = t * std::sin(t) + spec.roll_noise * normal(rng);
        out[2 * i] = (x - m.mean[0]) / m.stddev[0];
        out[2 * i + 1] = (y - m.mean[1]) / m.stddev[1];
      }
      break;
    }
    case DatasetKind::sinusoid_1d: {
      // A unit-amplitude sine with uniform phase has mean 0, variance 1/2.
      const double scale = std::numbers::sqrt2;
      std::uniform_real_distribution<double> freq(spec.min_frequency, spec.max_frequency);
      for (std::size_t i = 0; i < spec.size; ++i) {
        const double f = freq(rng);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        for (std::size_t j = 0; j < spec.length; ++j) {
          const double t = static_cast<double>(j) / static_cast<double>(spec.length);
          out[i * spec.length + j] = scale * std::sin(2.0 * std::numbers::pi * f * t + phase);
        }
      }
      break;
    }
  }
  return out;
}

/// Rows `indices` of `data`, as a new [indices.size(), cols] buffer.
inline RealBuffer gather_rows(const RealBuffer& data, std::span<const std::size_t> indices) {
  const std::size_t cols = data.cols();
  RealBuffer out({indices.size(), cols});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = data.row(indices[r]);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return out;
}

/// `count` rows drawn uniformly with replacement.
inline RealBuffer sample_rows(const RealBuffer& data, std::size_t count, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, data.rows() - 1);
  std::vector<std::size_t> indices(count);
  for (auto& i : indices) i = pick(rng);
  return gather_rows(data, indices);
}

}  // namespace adadiffuse
