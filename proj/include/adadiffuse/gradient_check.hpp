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
 * @file gradient_check.hpp
 * @brief Central-difference oracle for the analytic backward pass.
 *
 * The perturbed evaluations go through a separate scalar-loop forward pass in
 * extended precision, so the oracle shares no code with forward()/backward()
 * beyond the parameter layout.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "adadiffuse/mlp.hpp"

namespace adadiffuse {

/// A scalar loss of the network output together with its gradient.
struct ScalarLoss {
  std::function<long double(std::span<const long double>)> value;
  std::function<RealBuffer(const RealBuffer&)> gradient;
};

/// sum_j (out_j - target_j)^2
inline ScalarLoss squared_error_loss(RealBuffer target) {
  ScalarLoss loss;
  loss.value = [target](std::span<const long double> out) {
    long double total = 0.0L;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const long double d = out[j] - static_cast<long double>(target[j]);
      total += d * d;
    }
    return total;
  };
  loss.gradient = [target](const RealBuffer& out) {
    RealBuffer g(out.shape());
    for (std::size_t j = 0; j < out.size(); ++j) g[j] = 2.0 * (out[j] - target[j]);
    return g;
  };
  return loss;
}

namespace detail {

/// Straight-line evaluation of one input vector, templated on precision.
template <typename Real>
std::vector<Real> reference_forward(const NetworkParams& params,
                                    std::span<const double> input) {
  std::vector<Real> x(input.begin(), input.end());
  for (const auto& layer : params.layers) {
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    std::vector<Real> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      Real acc = static_cast<Real>(layer.bias[o]);
      for (std::size_t i = 0; i < in; ++i) {
        acc += static_cast<Real>(layer.weight[o * in + i]) * x[i];
      }
      switch (layer.activation) {
        case Activation::relu: acc = acc > Real(0) ? acc : Real(0); break;
        case Activation::sigmoid: acc = Real(1) / (Real(1) + std::exp(-acc)); break;
        case Activation::identity: break;
      }
      y[o] = acc;
    }
    x = std::move(y);
  }
  return x;
}

}  // namespace detail

/// Independent re-evaluation of forward() for a single input vector.
inline std::vector<double> reference_forward(const NetworkParams& params,
                                             std::span<const double> input) {
  return detail::reference_forward<double>(params, input);
}

/// Smallest |pre-activation| over all relu units for this input. Finite
/// differences are only meaningful when this exceeds the step size.
inline double relu_margin(const NetworkParams& params, std::span<const double> input) {
  std::vector<double> x(input.begin(), input.end());
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& layer : params.layers) {
    const std::size_t in = layer.in_dim();
    std::vector<double> y(layer.out_dim());
    for (std::size_t o = 0; o < y.size(); ++o) {
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += layer.weight[o * in + i] * x[i];
      if (layer.activation == Activation::relu) {
        margin = std::min(margin, std::abs(acc));
        acc = std::max(acc, 0.0);
      } else if (layer.activation == Activation::sigmoid) {
        acc = 1.0 / (1.0 + std::exp(-acc));
      }
      y[o] = acc;
    }
    x = std::move(y);
  }
  return margin;
}

/// Max over all parameters of |analytic - central difference| /
/// (|analytic| + 1e-12). `input` must be a single vector.
inline double finite_diff_check(const NetworkParams& params, const RealBuffer& input,
                                const ScalarLoss& loss, double step = 1e-5) {
  params.validate();
  if (!params.all_finite()) {
    throw NumericError("finite_diff_check: network contains a non-finite parameter");
  }
  if (!input.all_finite()) {
    throw NumericError("finite_diff_check: non-finite input");
  }
  if (input.rank() != 1 || input.size() != params.input_dim()) {
    throw ShapeError("finite_diff_check: expects a single input vector of width " +
                     std::to_string(params.input_dim()));
  }

  ForwardCache cache;
  const RealBuffer output = forward(params, input, &cache);
  const Gradients analytic = backward(params, cache, loss.gradient(output));

  NetworkParams probe = params;
  auto probe_tensors = probe.tensors();
  const auto analytic_tensors = analytic.params.tensors();
  auto evaluate = [&]() {
    const auto out = detail::reference_forward<long double>(probe, input.data());
    return loss.value(out);
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < probe_tensors.size(); ++k) {
    for (std::size_t i = 0; i < probe_tensors[k].size(); ++i) {
      const double original = probe_tensors[k][i];
      probe_tensors[k][i] = original + step;
      const long double plus = evaluate();
      probe_tensors[k][i] = original - step;
      const long double minus = evaluate();
      probe_tensors[k][i] = original;
      // Divide by the step actually realised in double arithmetic.
      const long double realised = static_cast<long double>(original + step) -
                                   static_cast<long double>(original - step);
      const double numeric = static_cast<double>((plus - minus) / realised);
      const double exact = analytic_tensors[k][i];
      worst = std::max(worst, std::abs(exact - numeric) / (std::abs(exact) + 1e-12));
    }
  }
  return worst;
}

}  // namespace adadiffuse
