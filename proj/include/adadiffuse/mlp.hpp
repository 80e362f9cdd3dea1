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
 * @file mlp.hpp
 * @brief Dense feedforward networks with exact reverse-mode gradients.
 *
 * A network is a chain of affine layers, each followed by relu, sigmoid or
 * identity. Inputs are either a single vector (rank 1) or a batch of row
 * vectors (rank 2, one sample per row). Forward passes may record a
 * ForwardCache which backward() consumes; parameters themselves are never
 * mutated by evaluation, so one NetworkParams can be shared read-only by
 * concurrent samplers.
 */

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adadiffuse/real_buffer.hpp"

namespace adadiffuse {

enum class Activation : std::uint8_t { relu = 0, sigmoid = 1, identity = 2 };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

/// weight is [out, in], bias is [out].
struct DenseLayer {
  RealBuffer weight;
  RealBuffer bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.shape().at(1); }
  std::size_t out_dim() const { return weight.shape().at(0); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct NetworkParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  /// Checks the chaining and activation invariants; throws ShapeError.
  void validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& layer = layers[k];
      if (layer.weight.rank() != 2 || layer.bias.rank() != 1 ||
          layer.bias.shape()[0] != layer.out_dim()) {
        throw ShapeError("layer " + std::to_string(k) + ": weight " +
                         shape_string(layer.weight.shape()) + " and bias " +
                         shape_string(layer.bias.shape()) + " are incongruent");
      }
      if (layer.in_dim() == 0 || layer.out_dim() == 0) {
        throw ShapeError("layer " + std::to_string(k) + " has a zero dimension");
      }
      if (k + 1 < layers.size()) {
        if (layers[k + 1].in_dim() != layer.out_dim()) {
          throw ShapeError("layer " + std::to_string(k) + " emits " +
                           std::to_string(layer.out_dim()) + " values but layer " +
                           std::to_string(k + 1) + " expects " +
                           std::to_string(layers[k + 1].in_dim()));
        }
        if (layer.activation == Activation::sigmoid) {
          throw ShapeError("sigmoid is only allowed on the final layer");
        }
      }
    }
  }

  bool all_finite() const {
    for (const auto& layer : layers) {
      if (!layer.weight.all_finite() || !layer.bias.all_finite()) return false;
    }
    return true;
  }

  /// Same structure, every value zero. Used for gradients and Adam moments.
  NetworkParams zeros_like() const {
    NetworkParams out = *this;
    for (auto& layer : out.layers) {
      layer.weight.fill(0.0);
      layer.bias.fill(0.0);
    }
    return out;
  }

  /// Flat views over every parameter tensor, in layer order (weight, bias).
  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for (auto& layer : layers) {
      out.push_back(layer.weight.data());
      out.push_back(layer.bias.data());
    }
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for (const auto& layer : layers) {
      out.push_back(layer.weight.data());
      out.push_back(layer.bias.data());
    }
    return out;
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// True when both parameter sets have identical layer shapes.
inline bool congruent(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].weight.shape() != b.layers[k].weight.shape() ||
        a.layers[k].bias.shape() != b.layers[k].bias.shape()) {
      return false;
    }
  }
  return true;
}

/// Builds an MLP with the given hidden widths. Weights and biases are drawn
/// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline NetworkParams make_mlp(std::size_t input_dim,
                              std::span<const std::size_t> hidden,
                              std::size_t output_dim, Activation hidden_activation,
                              Activation output_activation, std::uint64_t seed) {
  Rng rng(seed);
  NetworkParams params;
  std::size_t fan_in = input_dim;
  auto add_layer = [&](std::size_t out, Activation act) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uniform(-scale, scale);
    DenseLayer layer{RealBuffer({out, fan_in}), RealBuffer({out}), act};
    for (double& w : layer.weight.values()) w = uniform(rng);
    for (double& b : layer.bias.values()) b = uniform(rng);
    params.layers.push_back(std::move(layer));
    fan_in = out;
  };
  for (std::size_t width : hidden) add_layer(width, hidden_activation);
  add_layer(output_dim, output_activation);
  params.validate();
  return params;
}

inline NetworkParams make_mlp(std::size_t input_dim,
                              std::initializer_list<std::size_t> hidden,
                              std::size_t output_dim, Activation hidden_activation,
                              Activation output_activation, std::uint64_t seed) {
  const std::vector<std::size_t> widths(hidden);
  return make_mlp(input_dim, widths, output_dim, hidden_activation,
                  output_activation, seed);
}

namespace detail {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

inline ConstMatrixMap as_matrix(const RealBuffer& buffer) {
  return ConstMatrixMap(buffer.data().data(),
                        static_cast<Eigen::Index>(buffer.rows()),
                        static_cast<Eigen::Index>(buffer.cols()));
}

inline ConstMatrixMap weight_map(const DenseLayer& layer) {
  return as_matrix(layer.weight);
}

inline ConstVectorMap bias_map(const DenseLayer& layer) {
  return ConstVectorMap(layer.bias.data().data(),
                        static_cast<Eigen::Index>(layer.bias.size()));
}

inline void apply_activation(RowMatrix& z, Activation activation) {
  switch (activation) {
    case Activation::relu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::sigmoid:
      z = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      break;
    case Activation::identity:
      break;
  }
}

/// Scales dA into dZ in place, using the post-activation values.
inline void activation_backward(RowMatrix& grad, const RowMatrix& activated,
                                Activation activation) {
  switch (activation) {
    case Activation::relu:
      grad = grad.cwiseProduct(
          activated.unaryExpr([](double a) { return a > 0.0 ? 1.0 : 0.0; }));
      break;
    case Activation::sigmoid:
      grad = grad.cwiseProduct(
          activated.unaryExpr([](double a) { return a * (1.0 - a); }));
      break;
    case Activation::identity:
      break;
  }
}

inline RealBuffer to_buffer(const RowMatrix& m, const std::vector<std::size_t>& shape) {
  return RealBuffer(shape, std::vector<double>(m.data(), m.data() + m.size()));
}

}  // namespace detail

/// Activations recorded by a forward pass. Empty until forward() fills it.
struct ForwardCache {
  std::vector<detail::RowMatrix> inputs;   // input to layer k
  std::vector<detail::RowMatrix> outputs;  // post-activation output of layer k
  std::size_t input_rank = 0;

  bool empty() const { return outputs.empty(); }
  std::size_t batch() const { return inputs.empty() ? 0 : inputs.front().rows(); }
};

/// Parameter gradients plus the gradient with respect to the network input.
struct Gradients {
  NetworkParams params;
  RealBuffer input;
};

/// Evaluates the network. `input` is [in] or [batch, in]; the result has the
/// same rank with the last dimension replaced by output_dim.
inline RealBuffer forward(const NetworkParams& params, const RealBuffer& input,
                          ForwardCache* cache = nullptr) {
  if (params.layers.empty()) throw ShapeError("forward: network has no layers");
  if (input.rank() != 1 && input.rank() != 2) {
    throw ShapeError("forward: input must be rank 1 or 2, got " +
                     shape_string(input.shape()));
  }
  if (input.cols() != params.input_dim()) {
    throw ShapeError("forward: input width " + std::to_string(input.cols()) +
                     " but network expects " + std::to_string(params.input_dim()));
  }
  detail::RowMatrix x = detail::as_matrix(input);
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
    cache->input_rank = input.rank();
  }
  for (const auto& layer : params.layers) {
    detail::RowMatrix z(x.rows(), static_cast<Eigen::Index>(layer.out_dim()));
    z.noalias() = x * detail::weight_map(layer).transpose();
    z.rowwise() += detail::bias_map(layer).transpose();
    detail::apply_activation(z, layer.activation);
    if (cache) cache->inputs.push_back(std::move(x));
    x = std::move(z);
    if (cache) cache->outputs.push_back(x);
  }
  std::vector<std::size_t> shape = input.shape();
  shape.back() = params.output_dim();
  RealBuffer out = detail::to_buffer(x, shape);
  require_finite(out, "forward");
  return out;
}

/// Exact gradients of a scalar loss given dLoss/dOutput for the cached batch.
/// Parameter gradients are summed over the batch rows.
inline Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                          const RealBuffer& output_gradient) {
  if (cache.empty()) {
    throw StateError("backward: no cached forward pass");
  }
  if (cache.outputs.size() != params.layers.size()) {
    throw StateError("backward: cache was recorded for a different network");
  }
  const auto batch = static_cast<std::size_t>(cache.outputs.back().rows());
  if (output_gradient.rows() != batch ||
      output_gradient.cols() != params.output_dim()) {
    throw ShapeError("backward: output gradient " +
                     shape_string(output_gradient.shape()) +
                     " does not match cached output [" + std::to_string(batch) +
                     ", " + std::to_string(params.output_dim()) + "]");
  }
  Gradients grads{params.zeros_like(), {}};
  detail::RowMatrix delta = detail::as_matrix(output_gradient);
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& layer = params.layers[k];
    detail::activation_backward(delta, cache.outputs[k], layer.activation);
    auto& g = grads.params.layers[k];
    Eigen::Map<detail::RowMatrix> dw(g.weight.data().data(),
                                     static_cast<Eigen::Index>(layer.out_dim()),
                                     static_cast<Eigen::Index>(layer.in_dim()));
    dw.noalias() = delta.transpose() * cache.inputs[k];
    Eigen::Map<Eigen::VectorXd> db(g.bias.data().data(),
                                   static_cast<Eigen::Index>(layer.out_dim()));
    db = delta.colwise().sum().transpose();
    detail::RowMatrix previous = delta * detail::weight_map(layer);
    delta = std::move(previous);
  }
  std::vector<std::size_t> shape;
  if (cache.input_rank == 1) {
    shape = {params.input_dim()};
  } else {
    shape = {batch, params.input_dim()};
  }
  grads.input = detail::to_buffer(delta, shape);
  return grads;
}

}  // namespace adadiffuse
