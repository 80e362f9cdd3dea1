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
 * @file checkpoint.hpp
 * @brief Named-tensor checkpoint files.
 *
 * Layout (all integers unsigned 32-bit little-endian):
 *
 *   "NESD" | version
 *   repeated until end of file:
 *     name_length | name bytes (UTF-8) | rank | dims[rank] | values (f64 LE)
 *
 * Model files use the following names:
 *   denoiser/meta               [data_dim, conditioning_mode]
 *   denoiser/boundaries         training-time boundary table l_0..l_N
 *   denoiser/activations        one tag per layer (0 relu, 1 sigmoid, 2 identity)
 *   denoiser/layer{k}/weight    [out, in]
 *   denoiser/layer{k}/bias      [out]
 *   estimator/meta              [data_dim]
 *   estimator/{encoder,head}/activations, .../layer{k}/{weight,bias}
 *   schedule/betas              a noise schedule
 */

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadiffuse/models.hpp"
#include "adadiffuse/schedule.hpp"

namespace adadiffuse {

inline constexpr char kCheckpointMagic[4] = {'N', 'E', 'S', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  RealBuffer value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFU));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError("checkpoint " + path_ + " is truncated: expected " +
                            std::to_string(n) + " more bytes for " + what + " at offset " +
                            std::to_string(pos_) + ", file has " +
                            std::to_string(bytes_.size()));
    }
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  for (const auto& t : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.value.values()) detail::put_f64(out, v);
  }
  return out;
}

inline std::vector<NamedTensor> decode_tensors(const std::string& bytes,
                                               const std::string& source = "<memory>") {
  detail::ByteReader in(bytes, source);
  const std::string magic = in.text(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4)) {
    throw CheckpointError("checkpoint " + source + " has bad magic bytes (expected NESD)");
  }
  const std::uint32_t version = in.u32("format version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + source + " has format version " +
                          std::to_string(version) + " but this build reads version " +
                          std::to_string(kCheckpointVersion));
  }
  std::vector<NamedTensor> tensors;
  while (!in.at_end()) {
    NamedTensor t;
    const std::uint32_t name_length = in.u32("tensor name length");
    t.name = in.text(name_length, "tensor name");
    const std::uint32_t rank = in.u32("tensor rank");
    if (rank == 0) throw CheckpointError("checkpoint " + source + ": tensor '" + t.name + "' has rank 0");
    std::vector<std::size_t> shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      d = in.u32("tensor dimension");
      count *= d;
    }
    if (count * 8 > in.remaining()) {
      throw CheckpointError("checkpoint " + source + " is truncated inside tensor '" + t.name +
                            "': needs " + std::to_string(count * 8) + " value bytes, " +
                            std::to_string(in.remaining()) + " left");
    }
    std::vector<double> values(count);
    for (auto& v : values) v = in.f64("tensor values");
    t.value = RealBuffer(std::move(shape), std::move(values));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

inline void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_tensors(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

inline std::vector<NamedTensor> read_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes, path);
}

/// What a checkpoint file can hold; any subset may be present.
struct Checkpoint {
  std::optional<Denoiser> denoiser;
  std::optional<NoiseEstimator> estimator;
  std::optional<NoiseSchedule> schedule;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void append_network(std::vector<NamedTensor>& out, const std::string& prefix,
                           const NetworkParams& net) {
  std::vector<double> tags;
  for (const auto& layer : net.layers) tags.push_back(static_cast<double>(layer.activation));
  out.push_back({prefix + "/activations", RealBuffer::vector(std::move(tags))});
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const std::string base = prefix + "/layer" + std::to_string(k);
    out.push_back({base + "/weight", net.layers[k].weight});
    out.push_back({base + "/bias", net.layers[k].bias});
  }
}

class TensorTable {
 public:
  TensorTable(std::vector<NamedTensor> tensors, std::string source) : source_(std::move(source)) {
    for (auto& t : tensors) {
      if (!table_.emplace(t.name, std::move(t.value)).second) {
        throw CheckpointError("checkpoint " + source_ + " repeats tensor '" + t.name + "'");
      }
    }
  }

  bool has(const std::string& name) const { return table_.contains(name); }
  bool has_prefix(const std::string& prefix) const {
    const auto it = table_.lower_bound(prefix);
    return it != table_.end() && it->first.starts_with(prefix);
  }

  const RealBuffer& get(const std::string& name) const {
    const auto it = table_.find(name);
    if (it == table_.end()) {
      throw CheckpointError("checkpoint " + source_ + " is missing tensor '" + name + "'");
    }
    return it->second;
  }

  NetworkParams network(const std::string& prefix) const {
    const RealBuffer& tags = get(prefix + "/activations");
    NetworkParams net;
    for (std::size_t k = 0; k < tags.size(); ++k) {
      const double tag = tags[k];
      if (tag != 0.0 && tag != 1.0 && tag != 2.0) {
        throw CheckpointError("checkpoint " + source_ + ": bad activation tag in " + prefix);
      }
      const std::string base = prefix + "/layer" + std::to_string(k);
      net.layers.push_back({get(base + "/weight"), get(base + "/bias"),
                            static_cast<Activation>(static_cast<int>(tag))});
    }
    try {
      net.validate();
    } catch (const ShapeError& e) {
      throw CheckpointError("checkpoint " + source_ + ": " + prefix + ": " + e.what());
    }
    return net;
  }

  const std::string& source() const { return source_; }

 private:
  std::map<std::string, RealBuffer> table_;
  std::string source_;
};

}  // namespace detail

inline std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& ckpt) {
  std::vector<NamedTensor> out;
  if (ckpt.denoiser) {
    const auto& d = *ckpt.denoiser;
    out.push_back({"denoiser/meta",
                   RealBuffer::vector({static_cast<double>(d.data_dim),
                                       static_cast<double>(d.mode)})});
    out.push_back({"denoiser/boundaries", RealBuffer::vector(d.training_boundaries)});
    detail::append_network(out, "denoiser", d.net);
  }
  if (ckpt.estimator) {
    const auto& e = *ckpt.estimator;
    out.push_back({"estimator/meta", RealBuffer::vector({static_cast<double>(e.data_dim)})});
    detail::append_network(out, "estimator/encoder", e.encoder);
    detail::append_network(out, "estimator/head", e.head);
  }
  if (ckpt.schedule) {
    out.push_back({"schedule/betas", RealBuffer::vector(ckpt.schedule->betas())});
  }
  return out;
}

inline Checkpoint checkpoint_from_tensors(std::vector<NamedTensor> tensors,
                                          const std::string& source) {
  const detail::TensorTable table(std::move(tensors), source);
  Checkpoint ckpt;
  if (table.has("schedule/betas")) {
    try {
      ckpt.schedule = NoiseSchedule::from_betas(table.get("schedule/betas").values());
    } catch (const ScheduleError& e) {
      throw CheckpointError("checkpoint " + source + ": bad schedule: " + e.what());
    }
  }
  if (table.has_prefix("denoiser/")) {
    const RealBuffer& meta = table.get("denoiser/meta");
    if (meta.size() != 2 || (meta[1] != 0.0 && meta[1] != 1.0)) {
      throw CheckpointError("checkpoint " + source + ": malformed denoiser/meta");
    }
    Denoiser d;
    d.data_dim = static_cast<std::size_t>(meta[0]);
    d.mode = static_cast<ConditioningMode>(static_cast<int>(meta[1]));
    d.net = table.network("denoiser");
    d.training_boundaries = table.get("denoiser/boundaries").values();
    const auto& l = d.training_boundaries;
    bool decreasing = l.size() >= 2 && l.front() == 1.0;
    for (std::size_t i = 1; decreasing && i < l.size(); ++i) decreasing = l[i] < l[i - 1];
    if (!decreasing) {
      throw CheckpointError("checkpoint " + source +
                            ": denoiser/boundaries is not a decreasing table starting at 1");
    }
    if (d.net.input_dim() != d.data_dim + 1 + kEmbeddingWidth || d.net.output_dim() != d.data_dim) {
      throw CheckpointError("checkpoint " + source + ": denoiser shape disagrees with data_dim");
    }
    ckpt.denoiser = std::move(d);
  }
  if (table.has_prefix("estimator/")) {
    const RealBuffer& meta = table.get("estimator/meta");
    if (meta.size() != 1) throw CheckpointError("checkpoint " + source + ": malformed estimator/meta");
    NoiseEstimator e;
    e.data_dim = static_cast<std::size_t>(meta[0]);
    e.encoder = table.network("estimator/encoder");
    e.head = table.network("estimator/head");
    if (e.encoder.input_dim() != e.data_dim + kEstimatorExtraFeatures || e.head.input_dim() != e.encoder.output_dim() ||
        e.head.output_dim() != 1) {
      throw CheckpointError("checkpoint " + source + ": estimator shape disagrees with data_dim");
    }
    ckpt.estimator = std::move(e);
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_tensors(path, checkpoint_tensors(ckpt));
}

/// Reads a checkpoint; nothing is returned unless the whole file parses.
inline Checkpoint load_checkpoint(const std::string& path) {
  return checkpoint_from_tensors(read_tensors(path), path);
}

}  // namespace adadiffuse
