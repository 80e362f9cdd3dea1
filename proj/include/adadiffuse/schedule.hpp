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
 * @file schedule.hpp
 * @brief Noise-schedule algebra and the closed-form schedule solvers.
 *
 * Indexing convention: a schedule with N steps stores betas[0..N-1], where
 * betas[0] drives the step closest to the data (step 1 of the reverse
 * process is the last one executed). alpha_bar(n) is the cumulative product
 * up to and including step n, with alpha_bar(0) = 1. The boundary table
 * l[0..N] holds sqrt(alpha_bar), so l[0] = 1.
 *
 * The solvers take a target cumulative level alpha_bar_hat and a remaining
 * step count n and return n betas whose first entry is beta0 and whose sum is
 * -log(alpha_bar_hat), i.e. the first-order (log(1 - b) ~ -b) match of the
 * cumulative product. Two shapes are available: an arithmetic progression and
 * a Fibonacci sequence.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadiffuse/real_buffer.hpp"

namespace adadiffuse {

inline constexpr double kMinBeta = 1e-6;
inline constexpr double kMaxBeta = 0.999;

/// Rejected solver or schedule inputs.
class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ScheduleKind { linear, fibonacci };

inline const char* schedule_kind_name(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "fibonacci";
}

inline ScheduleKind parse_schedule_kind(const std::string& text) {
  if (text == "linear") return ScheduleKind::linear;
  if (text == "fibonacci") return ScheduleKind::fibonacci;
  throw ScheduleError("unknown schedule family '" + text +
                      "' (expected linear or fibonacci)");
}

struct ScheduleFamily {
  ScheduleKind kind = ScheduleKind::linear;
  double beta0 = 1e-4;

  void validate() const {
    if (!(beta0 >= 1e-6 && beta0 <= 1e-2)) {
      throw ScheduleError("beta0 must lie in [1e-6, 1e-2], got " +
                          std::to_string(beta0));
    }
  }
};

/// sqrt of the running product of (1 - beta); l[0] = 1, length N + 1.
inline std::vector<double> boundaries(const std::vector<double>& betas) {
  if (betas.empty()) throw ScheduleError("boundaries: empty beta sequence");
  std::vector<double> l(betas.size() + 1);
  l[0] = 1.0;
  double product = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] >= 0.0 && betas[i] < 1.0)) {
      throw ScheduleError("boundaries: beta[" + std::to_string(i) +
                          "] outside [0, 1): " + std::to_string(betas[i]));
    }
    product *= 1.0 - betas[i];
    l[i + 1] = std::sqrt(product);
  }
  return l;
}

/// Running product of (1 - beta); entry n-1 is alpha_bar_n.
inline std::vector<double> cumulative_alpha_bar(const std::vector<double>& betas) {
  std::vector<double> out(betas.size());
  double product = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] >= 0.0 && betas[i] < 1.0)) {
      throw ScheduleError("cumulative_alpha_bar: beta[" + std::to_string(i) +
                          "] outside [0, 1): " + std::to_string(betas[i]));
    }
    product *= 1.0 - betas[i];
    out[i] = product;
  }
  return out;
}

/// A fully materialised schedule. Construct through from_betas() so the
/// derived sequences always agree with betas.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule from_betas(std::vector<double> betas,
                                  std::size_t clamped = 0) {
    if (betas.empty()) throw ScheduleError("noise schedule needs at least one step");
    for (std::size_t i = 0; i < betas.size(); ++i) {
      if (!(betas[i] >= kMinBeta && betas[i] <= kMaxBeta)) {
        throw ScheduleError("beta[" + std::to_string(i) + "] = " +
                            std::to_string(betas[i]) + " outside [1e-6, 0.999]");
      }
    }
    NoiseSchedule s;
    s.alphas_.resize(betas.size());
    for (std::size_t i = 0; i < betas.size(); ++i) s.alphas_[i] = 1.0 - betas[i];
    s.alpha_bars_ = cumulative_alpha_bar(betas);
    s.boundaries_ = adadiffuse::boundaries(betas);
    s.betas_ = std::move(betas);
    s.clamped_ = clamped;
    return s;
  }

  std::size_t steps() const { return betas_.size(); }
  bool empty() const { return betas_.empty(); }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& boundaries() const { return boundaries_; }
  /// Betas that a solver had to clamp when producing this schedule.
  std::size_t clamped() const { return clamped_; }

  /// 1-based accessors matching the reverse-process step index.
  double beta(std::size_t n) const { return betas_.at(checked(n) - 1); }
  double alpha(std::size_t n) const { return alphas_.at(checked(n) - 1); }
  double alpha_bar(std::size_t n) const {
    if (n == 0) return 1.0;
    return alpha_bars_.at(checked(n) - 1);
  }

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  std::size_t checked(std::size_t n) const {
    if (n < 1 || n > betas_.size()) {
      throw std::out_of_range("schedule step " + std::to_string(n) +
                              " outside [1, " + std::to_string(betas_.size()) + "]");
    }
    return n;
  }

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> boundaries_;
  std::size_t clamped_ = 0;
};

/// Clamps into [kMinBeta, kMaxBeta]; returns how many entries moved.
inline std::size_t clamp_betas(std::vector<double>& betas) {
  std::size_t moved = 0;
  for (double& b : betas) {
    const double c = std::clamp(b, kMinBeta, kMaxBeta);
    if (c != b) ++moved;
    b = c;
  }
  return moved;
}

namespace detail {

inline void check_solver_inputs(double alpha_bar_hat, std::size_t n, double beta0) {
  if (!(alpha_bar_hat > 0.0 && alpha_bar_hat < 1.0)) {
    throw ScheduleError("target alpha_bar must lie in (0, 1), got " +
                        std::to_string(alpha_bar_hat));
  }
  if (n == 0) throw ScheduleError("remaining step count must be at least 1");
  ScheduleFamily{ScheduleKind::linear, beta0}.validate();
}

}  // namespace detail

/// Arithmetic progression beta_i = beta0 + i*x, i = 0..n-1, with
/// x = -2 (log(alpha_bar_hat) + n*beta0) / (n (n - 1)) so that the betas sum
/// to -log(alpha_bar_hat). n == 1 returns the exact single step 1 - alpha_bar_hat.
/// No clamping.
inline std::vector<double> solve_linear_unclamped(double alpha_bar_hat, std::size_t n,
                                                  double beta0) {
  detail::check_solver_inputs(alpha_bar_hat, n, beta0);
  if (n == 1) return {1.0 - alpha_bar_hat};
  const double count = static_cast<double>(n);
  const double step =
      -2.0 * (std::log(alpha_bar_hat) + count * beta0) / (count * (count - 1.0));
  std::vector<double> betas(n);
  for (std::size_t i = 0; i < n; ++i) betas[i] = beta0 + static_cast<double>(i) * step;
  return betas;
}

/// Fibonacci-shaped betas (beta_{i+2} = beta_{i+1} + beta_i) with beta_0 pinned
/// to beta0 and sum -log(alpha_bar_hat). For n >= 3 the sequence is
/// A phi^i + B psi^i where phi, psi are the roots of x^2 - x - 1 and (A, B)
/// solve
///   A + B                          = beta0
///   A S(phi) + B S(psi)            = -log(alpha_bar_hat),  S(r) = (r^n - 1)/(r - 1).
/// No clamping.
inline std::vector<double> solve_fibonacci_unclamped(double alpha_bar_hat,
                                                     std::size_t n, double beta0) {
  detail::check_solver_inputs(alpha_bar_hat, n, beta0);
  if (n == 1) return {1.0 - alpha_bar_hat};
  const double total = -std::log(alpha_bar_hat);
  if (n == 2) return {beta0, total - beta0};

  const double root5 = std::sqrt(5.0);
  const double phi = 0.5 * (1.0 + root5);
  const double psi = 0.5 * (1.0 - root5);
  const double count = static_cast<double>(n);
  const double s_phi = (std::pow(phi, count) - 1.0) / (phi - 1.0);
  const double s_psi = (std::pow(psi, count) - 1.0) / (psi - 1.0);
  // Cramer's rule on [[1, 1], [s_phi, s_psi]] (A, B)^T = (beta0, total)^T.
  const double det = s_psi - s_phi;
  if (!std::isfinite(det) || std::abs(det) < 1e-300) {
    throw std::logic_error("solve_fibonacci: degenerate linear system");
  }
  const double a = (beta0 * s_psi - total) / det;
  const double b = (total - beta0 * s_phi) / det;

  std::vector<double> betas(n);
  double phi_power = 1.0;
  double psi_power = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    betas[i] = a * phi_power + b * psi_power;
    phi_power *= phi;
    psi_power *= psi;
  }
  return betas;
}

inline std::vector<double> solve_linear(double alpha_bar_hat, std::size_t n,
                                        double beta0) {
  auto betas = solve_linear_unclamped(alpha_bar_hat, n, beta0);
  clamp_betas(betas);
  return betas;
}

inline std::vector<double> solve_fibonacci(double alpha_bar_hat, std::size_t n,
                                           double beta0) {
  auto betas = solve_fibonacci_unclamped(alpha_bar_hat, n, beta0);
  clamp_betas(betas);
  return betas;
}

/// Re-derives an n-step schedule that starts at beta0 and reaches the
/// estimated level alpha_bar_hat. The clamp count is kept on the result.
inline NoiseSchedule update_noise_schedule(double alpha_bar_hat, std::size_t n,
                                           const ScheduleFamily& family) {
  auto betas = family.kind == ScheduleKind::linear
                   ? solve_linear_unclamped(alpha_bar_hat, n, family.beta0)
                   : solve_fibonacci_unclamped(alpha_bar_hat, n, family.beta0);
  const std::size_t clamped = clamp_betas(betas);
  return NoiseSchedule::from_betas(std::move(betas), clamped);
}

/// The interval index t >= 1 with sqrt(alpha_bar_hat) in [l_t, l_{t-1}].
/// Ties go to the smaller t; levels above l_0 map to 1, below l_N to N.
inline std::size_t index_for_level(double alpha_bar_hat, const std::vector<double>& l) {
  if (l.size() < 2) throw ScheduleError("index_for_level: need at least two boundaries");
  const double level = std::sqrt(std::max(alpha_bar_hat, 0.0));
  // First s >= 1 with l[s] <= level; l is strictly decreasing.
  const auto it = std::lower_bound(l.begin() + 1, l.end(), level,
                                   [](double boundary, double v) { return boundary > v; });
  if (it == l.end()) return l.size() - 1;
  return static_cast<std::size_t>(it - l.begin());
}

/// Evenly spaced betas from `first` to `last` inclusive.
inline std::vector<double> linear_betas(double first, double last, std::size_t n) {
  if (n == 0) throw ScheduleError("linear_betas: zero steps");
  if (n == 1) return {first};
  std::vector<double> betas(n);
  for (std::size_t i = 0; i < n; ++i) {
    betas[i] = first + (last - first) * static_cast<double>(i) /
                           static_cast<double>(n - 1);
  }
  return betas;
}

}  // namespace adadiffuse
