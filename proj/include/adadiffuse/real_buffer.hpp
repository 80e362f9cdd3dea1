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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adadiffuse {

/// Raised when buffer or layer dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation is invoked in the wrong order (e.g. backward
/// without a cached forward pass).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a NaN or Inf shows up where only finite values are allowed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every random draw in the library comes from this engine so that a seed
/// fully determines a run.
using Rng = std::mt19937_64;

inline std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major array of doubles with an explicit shape.
class RealBuffer {
 public:
  RealBuffer() = default;

  explicit RealBuffer(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

  RealBuffer(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("RealBuffer: shape " + shape_string(shape_) + " holds " +
                       std::to_string(element_count(shape_)) +
                       " values but data has " + std::to_string(data_.size()));
    }
  }

  static RealBuffer vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return RealBuffer({n}, std::move(values));
  }

  static RealBuffer matrix(std::size_t rows, std::size_t cols,
                           std::vector<double> values) {
    return RealBuffer({rows, cols}, std::move(values));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Number of rows when viewed as a matrix: rank-1 buffers are one row.
  std::size_t rows() const {
    if (shape_.empty()) return 0;
    return shape_.size() == 1 ? 1 : shape_.front();
  }
  /// Row width when viewed as a matrix: the product of trailing dimensions.
  std::size_t cols() const {
    if (shape_.empty()) return 0;
    if (shape_.size() == 1) return shape_[0];
    return element_count(std::span(shape_).subspan(1));
  }

  std::span<double> row(std::size_t r) {
    return std::span(data_).subspan(r * cols(), cols());
  }
  std::span<const double> row(std::size_t r) const {
    return std::span(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  RealBuffer reshaped(std::vector<std::size_t> shape) const {
    return RealBuffer(std::move(shape), data_);
  }

  friend bool operator==(const RealBuffer&, const RealBuffer&) = default;

  static std::size_t element_count(std::span<const std::size_t> shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const RealBuffer& a, const RealBuffer& b,
                               const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) +
                     " does not match " + shape_string(b.shape()));
  }
}

inline void require_finite(const RealBuffer& buffer, const char* what) {
  if (!buffer.all_finite()) {
    throw NumericError(std::string(what) + ": non-finite value");
  }
}

/// Buffer of the given shape filled with independent standard normals.
inline RealBuffer standard_normal(std::vector<std::size_t> shape, Rng& rng) {
  RealBuffer out(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out.values()) v = normal(rng);
  return out;
}

/// FNV-1a over the raw bytes of the values; used to prove two runs consumed
/// the same input noise.
inline std::uint64_t fingerprint(const RealBuffer& buffer) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (double v : buffer.values()) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int byte = 0; byte < 8; ++byte) {
      hash ^= (bits >> (8 * byte)) & 0xFFU;
      hash *= 1099511628211ULL;
    }
  }
  return hash;
}

}  // namespace adadiffuse
