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
#include <cstdint>

#include "adadiffuse/mlp.hpp"

namespace adadiffuse {

struct AdamState {
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const NetworkParams& params, double learning_rate) {
    AdamState state;
    state.first_moment = params.zeros_like();
    state.second_moment = params.zeros_like();
    state.learning_rate = learning_rate;
    return state;
  }
};

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching anything.
inline void adam_step(NetworkParams& params, const NetworkParams& grads,
                      AdamState& state) {
  if (!congruent(params, grads) || !congruent(params, state.first_moment) ||
      !congruent(params, state.second_moment)) {
    throw ShapeError("adam_step: gradients or moments are not congruent to params");
  }
  if (!grads.all_finite()) {
    throw NumericError("adam_step: non-finite gradient entry");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double gi = g[k][i];
      m[k][i] = state.beta1 * m[k][i] + (1.0 - state.beta1) * gi;
      v[k][i] = state.beta2 * v[k][i] + (1.0 - state.beta2) * gi * gi;
      const double m_hat = m[k][i] / correction1;
      const double v_hat = v[k][i] / correction2;
      p[k][i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace adadiffuse
