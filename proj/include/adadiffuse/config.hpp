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
 * @file config.hpp
 * @brief Run configuration as flat `namespace.key = value` text.
 *
 * Blank lines and lines starting with '#' are ignored. Lists are comma
 * separated. `sampler.adjust` accepts `all`, `none` or a list of step
 * indices. Unknown keys are an error.
 */

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadiffuse/datasets.hpp"
#include "adadiffuse/diffusion.hpp"
#include "adadiffuse/sampler.hpp"

namespace adadiffuse {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  DatasetSpec dataset;

  // Shared by both training loops.
  std::uint64_t train_seed = 0;
  std::size_t stage_count = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  double denoiser_learning_rate = 1e-3;
  double denoiser_final_learning_rate = 0.0;
  std::size_t denoiser_batch_size = 256;
  std::size_t denoiser_steps = 8000;
  std::size_t denoiser_checkpoint_every = 0;

  double estimator_learning_rate = 1e-3;
  double estimator_final_learning_rate = 0.0;
  std::size_t estimator_width = 64;
  std::size_t estimator_batch_size = 16;
  std::size_t estimator_steps = 6000;
  std::size_t estimator_set_size = 256;
  std::size_t estimator_checkpoint_every = 0;

  SamplerConfig sampler;
  /// Set when sampler.adjust = all, so the set follows sampler.steps.
  bool adjust_all = true;

  std::string output_dir = "out";

  std::vector<double> eval_grid = {0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999};
  std::size_t eval_samples_per_point = 256;

  std::vector<std::size_t> benchmark_steps = {6, 10, 20};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::size_t reference_size = 1000;
  std::uint64_t reference_seed = 12345;

  RunConfig() { sampler.adjustment_set = SamplerConfig::every_step(sampler.steps); }

  TrainConfig denoiser_train() const {
    return {denoiser_learning_rate, denoiser_batch_size, denoiser_steps, train_seed,
            stage_count, beta_start, beta_end, 1, denoiser_final_learning_rate};
  }

  TrainConfig estimator_train() const {
    return {estimator_learning_rate, estimator_batch_size, estimator_steps, train_seed + 1,
            stage_count, beta_start, beta_end, estimator_set_size,
            estimator_final_learning_rate};
  }

  /// Sampler settings for an N-step run; `all` adjustment follows N.
  SamplerConfig sampler_for(std::size_t steps) const {
    SamplerConfig cfg = sampler;
    cfg.steps = steps;
    if (adjust_all) {
      cfg.adjustment_set = SamplerConfig::every_step(steps);
    } else {
      std::set<std::size_t> kept;
      for (std::size_t n : cfg.adjustment_set) {
        if (n <= steps) kept.insert(n);
      }
      cfg.adjustment_set = std::move(kept);
    }
    return cfg;
  }

  DatasetSpec reference_dataset() const {
    DatasetSpec spec = dataset;
    spec.size = reference_size;
    spec.seed = reference_seed;
    return spec;
  }

  void validate() const {
    try {
      dataset.validate();
      denoiser_train().validate();
      estimator_train().validate();
      sampler.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (estimator_width == 0) throw ConfigError("estimator.width must be positive");
    if (eval_grid.empty()) throw ConfigError("eval.grid must not be empty");
    for (double a : eval_grid) {
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("eval.grid values must lie in (0, 1)");
    }
    if (benchmark_steps.empty() || seeds.empty()) {
      throw ConfigError("benchmark.steps and run.seeds must not be empty");
    }
    if (reference_size == 0) throw ConfigError("benchmark.reference_size must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>) {
    // libstdc++ 11 supports from_chars for double.
    r = std::from_chars(first, last, value, std::chars_format::general);
  } else {
    r = std::from_chars(first, last, value);
  }
  if (r.ec != std::errc() || r.ptr != last) {
    throw ConfigError("bad value '" + text + "' for " + key);
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    out << values[i];
  }
  return out.str();
}

inline std::string number(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <typename T>
Setter number_setter(T RunConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    c.*field = parse_number<T>(k, v);
  };
}

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = [] {
    std::map<std::string, Setter> s;
    auto enum_setter = [](auto apply) {
      return [apply](RunConfig& c, const std::string& k, const std::string& v) {
        try {
          apply(c, v);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(k + ": " + e.what());
        }
      };
    };
    s["dataset.kind"] = enum_setter([](RunConfig& c, const std::string& v) {
      c.dataset.kind = parse_dataset_kind(v);
    });
    s["dataset.size"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.size = parse_number<std::size_t>(k, v);
    };
    s["dataset.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.seed = parse_number<std::uint64_t>(k, v);
    };
    s["dataset.components"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.components = parse_number<std::size_t>(k, v);
    };
    s["dataset.radius"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.radius = parse_number<double>(k, v);
    };
    s["dataset.component_std"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.component_std = parse_number<double>(k, v);
    };
    s["dataset.roll_noise"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.roll_noise = parse_number<double>(k, v);
    };
    s["dataset.length"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.length = parse_number<std::size_t>(k, v);
    };
    s["dataset.min_frequency"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.min_frequency = parse_number<double>(k, v);
    };
    s["dataset.max_frequency"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.dataset.max_frequency = parse_number<double>(k, v);
    };

    s["train.seed"] = number_setter(&RunConfig::train_seed);
    s["train.stage_count"] = number_setter(&RunConfig::stage_count);
    s["train.beta_start"] = number_setter(&RunConfig::beta_start);
    s["train.beta_end"] = number_setter(&RunConfig::beta_end);

    s["denoiser.learning_rate"] = number_setter(&RunConfig::denoiser_learning_rate);
    s["denoiser.final_learning_rate"] = number_setter(&RunConfig::denoiser_final_learning_rate);
    s["denoiser.batch_size"] = number_setter(&RunConfig::denoiser_batch_size);
    s["denoiser.total_steps"] = number_setter(&RunConfig::denoiser_steps);
    s["denoiser.checkpoint_every"] = number_setter(&RunConfig::denoiser_checkpoint_every);
    s["denoiser.conditioning"] = enum_setter([](RunConfig& c, const std::string& v) {
      c.sampler.conditioning = parse_conditioning_mode(v);
    });

    s["estimator.learning_rate"] = number_setter(&RunConfig::estimator_learning_rate);
    s["estimator.final_learning_rate"] =
        number_setter(&RunConfig::estimator_final_learning_rate);
    s["estimator.width"] = number_setter(&RunConfig::estimator_width);
    s["estimator.batch_size"] = number_setter(&RunConfig::estimator_batch_size);
    s["estimator.total_steps"] = number_setter(&RunConfig::estimator_steps);
    s["estimator.set_size"] = number_setter(&RunConfig::estimator_set_size);
    s["estimator.checkpoint_every"] = number_setter(&RunConfig::estimator_checkpoint_every);

    s["sampler.steps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.sampler.steps = parse_number<std::size_t>(k, v);
      if (c.adjust_all) c.sampler.adjustment_set = SamplerConfig::every_step(c.sampler.steps);
    };
    s["sampler.adjust"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.sampler.adjustment_set.clear();
      c.adjust_all = v == "all";
      if (c.adjust_all) {
        c.sampler.adjustment_set = SamplerConfig::every_step(c.sampler.steps);
      } else if (v != "none") {
        for (auto n : parse_list<std::size_t>(k, v)) c.sampler.adjustment_set.insert(n);
      }
    };
    s["sampler.family"] = enum_setter([](RunConfig& c, const std::string& v) {
      c.sampler.family.kind = parse_schedule_kind(v);
    });
    s["sampler.beta0"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.sampler.family.beta0 = parse_number<double>(k, v);
    };
    s["sampler.update_rule"] = enum_setter([](RunConfig& c, const std::string& v) {
      c.sampler.update_rule = parse_update_rule(v);
    });
    s["sampler.eta"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.sampler.eta = parse_number<double>(k, v);
    };
    s["sampler.sample_count"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.sampler.sample_count = parse_number<std::size_t>(k, v);
    };
    s["sampler.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.sampler.seed = parse_number<std::uint64_t>(k, v);
    };

    s["output.dir"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.output_dir = v;
    };
    s["eval.grid"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.eval_grid = parse_list<double>(k, v);
    };
    s["eval.samples_per_point"] = number_setter(&RunConfig::eval_samples_per_point);
    s["benchmark.steps"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.benchmark_steps = parse_list<std::size_t>(k, v);
    };
    s["benchmark.reference_size"] = number_setter(&RunConfig::reference_size);
    s["benchmark.reference_seed"] = number_setter(&RunConfig::reference_seed);
    s["run.seeds"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.seeds = parse_list<std::uint64_t>(k, v);
    };
    return s;
  }();
  return setters;
}

}  // namespace detail

/// Applies one `key = value` assignment.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& setters = detail::config_setters();
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    const std::string where = source + ":" + std::to_string(line_number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

/// Writes every key; parse_config(format_config(c)) reproduces c.
inline std::string format_config(const RunConfig& c) {
  using detail::number;
  std::ostringstream out;
  out << "dataset.kind = " << dataset_kind_name(c.dataset.kind) << '\n'
      << "dataset.size = " << c.dataset.size << '\n'
      << "dataset.seed = " << c.dataset.seed << '\n'
      << "dataset.components = " << c.dataset.components << '\n'
      << "dataset.radius = " << number(c.dataset.radius) << '\n'
      << "dataset.component_std = " << number(c.dataset.component_std) << '\n'
      << "dataset.roll_noise = " << number(c.dataset.roll_noise) << '\n'
      << "dataset.length = " << c.dataset.length << '\n'
      << "dataset.min_frequency = " << number(c.dataset.min_frequency) << '\n'
      << "dataset.max_frequency = " << number(c.dataset.max_frequency) << '\n'
      << "train.seed = " << c.train_seed << '\n'
      << "train.stage_count = " << c.stage_count << '\n'
      << "train.beta_start = " << number(c.beta_start) << '\n'
      << "train.beta_end = " << number(c.beta_end) << '\n'
      << "denoiser.learning_rate = " << number(c.denoiser_learning_rate) << '\n'
      << "denoiser.final_learning_rate = " << number(c.denoiser_final_learning_rate) << '\n'
      << "denoiser.batch_size = " << c.denoiser_batch_size << '\n'
      << "denoiser.total_steps = " << c.denoiser_steps << '\n'
      << "denoiser.checkpoint_every = " << c.denoiser_checkpoint_every << '\n'
      << "denoiser.conditioning = " << conditioning_mode_name(c.sampler.conditioning) << '\n'
      << "estimator.learning_rate = " << number(c.estimator_learning_rate) << '\n'
      << "estimator.final_learning_rate = " << number(c.estimator_final_learning_rate) << '\n'
      << "estimator.width = " << c.estimator_width << '\n'
      << "estimator.batch_size = " << c.estimator_batch_size << '\n'
      << "estimator.total_steps = " << c.estimator_steps << '\n'
      << "estimator.set_size = " << c.estimator_set_size << '\n'
      << "estimator.checkpoint_every = " << c.estimator_checkpoint_every << '\n'
      << "sampler.steps = " << c.sampler.steps << '\n';
  out << "sampler.adjust = ";
  if (c.adjust_all) {
    out << "all";
  } else if (c.sampler.adjustment_set.empty()) {
    out << "none";
  } else {
    out << detail::join(std::vector<std::size_t>(c.sampler.adjustment_set.begin(),
                                                 c.sampler.adjustment_set.end()));
  }
  out << '\n'
      << "sampler.family = " << schedule_kind_name(c.sampler.family.kind) << '\n'
      << "sampler.beta0 = " << number(c.sampler.family.beta0) << '\n'
      << "sampler.update_rule = " << update_rule_name(c.sampler.update_rule) << '\n'
      << "sampler.eta = " << number(c.sampler.eta) << '\n'
      << "sampler.sample_count = " << c.sampler.sample_count << '\n'
      << "sampler.seed = " << c.sampler.seed << '\n'
      << "output.dir = " << c.output_dir << '\n'
      << "eval.grid = " << detail::join(c.eval_grid) << '\n'
      << "eval.samples_per_point = " << c.eval_samples_per_point << '\n'
      << "benchmark.steps = " << detail::join(c.benchmark_steps) << '\n'
      << "benchmark.reference_size = " << c.reference_size << '\n'
      << "benchmark.reference_seed = " << c.reference_seed << '\n'
      << "run.seeds = " << detail::join(c.seeds) << '\n';
  return out.str();
}

}  // namespace adadiffuse
