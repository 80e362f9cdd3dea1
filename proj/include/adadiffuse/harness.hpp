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
 * @file harness.hpp
 * @brief Experiment runner: training jobs, estimator evaluation and the
 *        paired fixed-vs-adaptive sampling benchmark.
 *
 * Sample quality is measured with the energy distance against a held-out
 * data batch.
 */

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "adadiffuse/checkpoint.hpp"
#include "adadiffuse/config.hpp"
#include "adadiffuse/datasets.hpp"
#include "adadiffuse/io.hpp"
#include "adadiffuse/metrics.hpp"
#include "adadiffuse/models.hpp"
#include "adadiffuse/sampler.hpp"
#include "json.hpp"

namespace adadiffuse {

inline constexpr const char* kQualityMetric = "energy_distance";
inline constexpr const char* kQualityMetricNote =
    "energy distance to a held-out data batch (lower is better); used in place of FID";

struct BenchRun {
  std::string method;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  double energy_distance = 0.0;
  double wall_ms = 0.0;
  std::size_t clamp_events = 0;
  std::uint64_t initial_noise_hash = 0;

  friend bool operator==(const BenchRun&, const BenchRun&) = default;
};

struct WallTimeSummary {
  std::string method;
  std::size_t steps = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  /// Mean wall time divided by the number of generated samples.
  double per_sample_ms = 0.0;

  friend bool operator==(const WallTimeSummary&, const WallTimeSummary&) = default;
};

struct MetricsRecord {
  std::vector<CurvePoint> estimator_curve;
  std::vector<BenchRun> runs;
  std::vector<WallTimeSummary> wall_time_ms;
  std::size_t clamp_events = 0;

  double mean_energy_distance(const std::string& method, std::size_t steps) const {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& r : runs) {
      if (r.method == method && r.steps == steps) {
        total += r.energy_distance;
        ++count;
      }
    }
    if (count == 0) throw std::out_of_range("no runs for " + method + " at N=" + std::to_string(steps));
    return total / static_cast<double>(count);
  }

  const WallTimeSummary& wall_time(const std::string& method, std::size_t steps) const {
    for (const auto& w : wall_time_ms) {
      if (w.method == method && w.steps == steps) return w;
    }
    throw std::out_of_range("no timing for " + method + " at N=" + std::to_string(steps));
  }
};

inline bool operator==(const CurvePoint& a, const CurvePoint& b) {
  return a.alpha_bar == b.alpha_bar && a.mse == b.mse;
}

inline bool operator==(const MetricsRecord& a, const MetricsRecord& b) {
  return a.estimator_curve == b.estimator_curve && a.runs == b.runs &&
         a.wall_time_ms == b.wall_time_ms && a.clamp_events == b.clamp_events;
}

/// Sorts runs and recomputes the per-(method, N) timing summary and totals.
inline void finalize_metrics(MetricsRecord& record, std::size_t sample_count) {
  std::sort(record.runs.begin(), record.runs.end(), [](const BenchRun& a, const BenchRun& b) {
    return std::tie(a.method, a.steps, a.seed) < std::tie(b.method, b.steps, b.seed);
  });
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> times;
  record.clamp_events = 0;
  for (const auto& r : record.runs) {
    times[{r.method, r.steps}].push_back(r.wall_ms);
    record.clamp_events += r.clamp_events;
  }
  record.wall_time_ms.clear();
  for (const auto& [key, values] : times) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd =
        values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    record.wall_time_ms.push_back(
        {key.first, key.second, mean, sd, mean / static_cast<double>(std::max<std::size_t>(1, sample_count))});
  }
}

// Serialization.

inline nlohmann::json metrics_json(const MetricsRecord& record) {
  nlohmann::json j;
  j["quality_metric"] = kQualityMetric;
  j["quality_metric_note"] = kQualityMetricNote;
  j["estimator_curve"] = nlohmann::json::array();
  for (const auto& p : record.estimator_curve) {
    j["estimator_curve"].push_back({{"alpha_bar", p.alpha_bar}, {"mse", p.mse}});
  }
  j["energy_distance"] = nlohmann::json::array();
  for (const auto& r : record.runs) {
    j["energy_distance"].push_back({{"method", r.method},
                                    {"N", r.steps},
                                    {"seed", r.seed},
                                    {"value", r.energy_distance},
                                    {"wall_ms", r.wall_ms},
                                    {"clamp_events", r.clamp_events},
                                    {"initial_noise_hash", r.initial_noise_hash}});
  }
  j["wall_time_ms"] = nlohmann::json::array();
  for (const auto& w : record.wall_time_ms) {
    j["wall_time_ms"].push_back({{"method", w.method},
                                 {"N", w.steps},
                                 {"mean", w.mean_ms},
                                 {"std", w.std_ms},
                                 {"per_sample", w.per_sample_ms}});
  }
  j["clamp_events"] = record.clamp_events;
  return j;
}

inline MetricsRecord parse_metrics_json(const std::string& text) {
  MetricsRecord record;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& p : j.at("estimator_curve")) {
      record.estimator_curve.push_back({p.at("alpha_bar").get<double>(), p.at("mse").get<double>()});
    }
    for (const auto& r : j.at("energy_distance")) {
      record.runs.push_back({r.at("method").get<std::string>(), r.at("N").get<std::size_t>(),
                             r.at("seed").get<std::uint64_t>(), r.at("value").get<double>(),
                             r.at("wall_ms").get<double>(), r.at("clamp_events").get<std::size_t>(),
                             r.at("initial_noise_hash").get<std::uint64_t>()});
    }
    for (const auto& w : j.at("wall_time_ms")) {
      record.wall_time_ms.push_back({w.at("method").get<std::string>(),
                                     w.at("N").get<std::size_t>(), w.at("mean").get<double>(),
                                     w.at("std").get<double>(), w.at("per_sample").get<double>()});
    }
    record.clamp_events = j.at("clamp_events").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics.json: ") + e.what());
  }
  return record;
}

inline std::string bench_csv(const std::vector<BenchRun>& runs) {
  CsvTable t{{"method", "N", "seed", "energy_distance", "wall_ms"}, {}};
  for (const auto& r : runs) {
    t.rows.push_back({r.method, std::to_string(r.steps), std::to_string(r.seed),
                      detail::format_real(r.energy_distance), detail::format_real(r.wall_ms)});
  }
  return format_csv(t);
}

inline std::vector<BenchRun> parse_bench_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t m = t.column("method"), n = t.column("N"), s = t.column("seed"),
                    e = t.column("energy_distance"), w = t.column("wall_ms");
  std::vector<BenchRun> runs;
  for (const auto& row : t.rows) {
    BenchRun r;
    r.method = row[m];
    r.steps = detail::parse_count(row[n]);
    r.seed = detail::parse_count(row[s]);
    r.energy_distance = detail::parse_real(row[e]);
    r.wall_ms = detail::parse_real(row[w]);
    runs.push_back(std::move(r));
  }
  return runs;
}

// Worker pool sizing.

/// Worker count for `jobs` independent tasks, capped by ADADIFFUSE_THREADS.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ADADIFFUSE_THREADS"); env != nullptr && *env != '\0') {
    std::size_t requested = 0;
    const std::string text(env);
    const auto r = std::from_chars(text.data(), text.data() + text.size(), requested);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size() || requested == 0) {
      throw ConfigError("ADADIFFUSE_THREADS must be a positive integer, got '" + text + "'");
    }
    cap = requested;
  }
  return std::max<std::size_t>(1, std::min(cap, jobs));
}

/// Runs job(i) for i in [0, count) on worker_count(count) threads. The first
/// exception thrown by any job is rethrown after all workers stop.
template <typename Job>
void parallel_for(std::size_t count, Job&& job) {
  const std::size_t workers = worker_count(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Artifact locations.

struct RunPaths {
  std::filesystem::path dir;

  std::string denoiser_checkpoint() const { return (dir / "denoiser.ckpt").string(); }
  std::string estimator_checkpoint() const { return (dir / "estimator.ckpt").string(); }
  std::string denoiser_loss() const { return (dir / "denoiser_loss.csv").string(); }
  std::string estimator_loss() const { return (dir / "estimator_loss.csv").string(); }
  std::string curve() const { return (dir / "curve.csv").string(); }
  std::string bench() const { return (dir / "bench.csv").string(); }
  std::string metrics() const { return (dir / "metrics.json").string(); }
  std::string trace(const std::string& method, std::size_t steps, std::uint64_t seed) const {
    return (dir / "traces" /
            (method + "_N" + std::to_string(steps) + "_seed" + std::to_string(seed) + ".jsonl"))
        .string();
  }
};

namespace detail {

/// Loss rows are streamed as training progresses so an interrupted run
/// still leaves its curve behind.
class LossLog {
 public:
  explicit LossLog(const std::string& path) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    out_.open(path, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open " + path + " for writing");
    out_ << "step,loss\n";
  }
  void add(std::size_t step, double loss) {
    out_ << step << ',' << format_real(loss) << '\n';
    if (step % 100 == 0) out_.flush();
  }

 private:
  std::ofstream out_;
};

inline Checkpoint require_checkpoint(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path)) {
    throw CheckpointError(std::string("missing ") + what + " checkpoint: " + path);
  }
  return load_checkpoint(path);
}

}  // namespace detail

inline Denoiser load_denoiser(const std::string& path) {
  auto ckpt = detail::require_checkpoint(path, "denoiser");
  if (!ckpt.denoiser) throw CheckpointError(path + ": no denoiser stored");
  return *ckpt.denoiser;
}

inline NoiseEstimator load_estimator(const std::string& path) {
  auto ckpt = detail::require_checkpoint(path, "estimator");
  if (!ckpt.estimator) throw CheckpointError(path + ": no estimator stored");
  return *ckpt.estimator;
}

/// Trains the denoiser, streaming losses and checkpointing every
/// cfg.denoiser_checkpoint_every steps (and at the end).
inline Denoiser run_train_denoiser(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  const TrainConfig train = cfg.denoiser_train();
  const NoiseSchedule schedule = train.schedule();
  const RealBuffer data = generate(cfg.dataset);
  Denoiser model = make_denoiser(cfg.dataset.dim(), cfg.sampler.conditioning, schedule, train.seed);
  detail::LossLog log(paths.denoiser_loss());
  train_denoiser(model, data, train, [&](std::size_t step, double loss) {
    log.add(step, loss);
    if (cfg.denoiser_checkpoint_every != 0 && (step + 1) % cfg.denoiser_checkpoint_every == 0) {
      save_checkpoint({model, std::nullopt, schedule}, paths.denoiser_checkpoint());
    }
  });
  save_checkpoint({model, std::nullopt, schedule}, paths.denoiser_checkpoint());
  return model;
}

inline NoiseEstimator run_train_estimator(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  const TrainConfig train = cfg.estimator_train();
  const RealBuffer data = generate(cfg.dataset);
  const std::size_t w = cfg.estimator_width;
  NoiseEstimator model = make_estimator(cfg.dataset.dim(), train.seed, {w, w}, {w});
  detail::LossLog log(paths.estimator_loss());
  train_estimator(model, data, train, [&](std::size_t step, double loss) {
    log.add(step, loss);
    if (cfg.estimator_checkpoint_every != 0 && (step + 1) % cfg.estimator_checkpoint_every == 0) {
      save_checkpoint({std::nullopt, model, std::nullopt}, paths.estimator_checkpoint());
    }
  });
  save_checkpoint({std::nullopt, model, std::nullopt}, paths.estimator_checkpoint());
  return model;
}

/// Estimator curve on the held-out batch with the training set size.
inline std::vector<CurvePoint> run_eval_estimator(const RunConfig& cfg,
                                                  const NoiseEstimator& estimator) {
  const RealBuffer held_out = generate(cfg.reference_dataset());
  Rng rng(cfg.reference_seed ^ 0x5eedULL);
  return eval_estimator_curve(estimator, held_out, cfg.eval_grid, cfg.eval_samples_per_point,
                              cfg.estimator_set_size, rng);
}

/// Seed of the generator shared by the fixed and adaptive run of one pair.
inline std::uint64_t pair_seed(std::uint64_t seed, std::size_t steps) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(steps);
}

struct PairResult {
  BenchRun fixed;
  BenchRun adaptive;
  TraceRecord fixed_trace;
  TraceRecord adaptive_trace;
};

/// One paired comparison: both samplers start from the same y_N.
inline PairResult run_pair(const Denoiser& denoiser, const NoiseEstimator& estimator,
                           const SamplerConfig& sampler, std::uint64_t seed,
                           const RealBuffer& reference) {
  using clock = std::chrono::steady_clock;
  PairResult out;
  const NoiseSchedule fixed_schedule = initial_noise_schedule(sampler);

  Rng fixed_rng(pair_seed(seed, sampler.steps));
  auto start = clock::now();
  SampleResult fixed = sample_fixed(denoiser, fixed_schedule, sampler, fixed_rng);
  const double fixed_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();

  Rng adaptive_rng(pair_seed(seed, sampler.steps));
  start = clock::now();
  SampleResult adaptive = sample_adaptive(denoiser, estimator, sampler, adaptive_rng);
  const double adaptive_ms =
      std::chrono::duration<double, std::milli>(clock::now() - start).count();

  if (fixed.trace.initial_noise_hash != adaptive.trace.initial_noise_hash) {
    throw std::logic_error("paired runs for seed " + std::to_string(seed) +
                           " did not start from the same noise");
  }
  out.fixed = {"fixed", sampler.steps, seed, energy_distance(fixed.samples, reference), fixed_ms,
               fixed.trace.clamp_events, fixed.trace.initial_noise_hash};
  out.adaptive = {"adaptive", sampler.steps, seed, energy_distance(adaptive.samples, reference),
                  adaptive_ms, adaptive.trace.clamp_events, adaptive.trace.initial_noise_hash};
  out.fixed_trace = std::move(fixed.trace);
  out.adaptive_trace = std::move(adaptive.trace);
  return out;
}

inline void write_metrics(const MetricsRecord& record, const RunPaths& paths) {
  write_text(paths.bench(), bench_csv(record.runs));
  write_text(paths.metrics(), metrics_json(record).dump(2) + "\n");
  if (!record.estimator_curve.empty()) write_text(paths.curve(), curve_csv(record.estimator_curve));
}

struct BenchmarkOptions {
  bool write_outputs = true;
  /// Traces are written only for runs with at most this many steps.
  std::size_t trace_max_steps = 100;
  bool eval_curve = true;
};

/// Paired benchmark over every (N, seed) in the config. Completed runs are
/// written out even when a later run fails.
inline MetricsRecord run_benchmark(const RunConfig& cfg, const Denoiser& denoiser,
                                   const NoiseEstimator& estimator,
                                   const BenchmarkOptions& options = {}) {
  cfg.validate();
  const RunPaths paths{cfg.output_dir};
  const RealBuffer reference = generate(cfg.reference_dataset());
  MetricsRecord record;
  if (options.eval_curve) record.estimator_curve = run_eval_estimator(cfg, estimator);

  std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
  for (std::size_t n : cfg.benchmark_steps) {
    for (std::uint64_t seed : cfg.seeds) jobs.emplace_back(n, seed);
  }
  std::mutex mutex;
  try {
    parallel_for(jobs.size(), [&](std::size_t i) {
      const auto [steps, seed] = jobs[i];
      PairResult pair = run_pair(denoiser, estimator, cfg.sampler_for(steps), seed, reference);
      std::lock_guard lock(mutex);
      record.runs.push_back(pair.fixed);
      record.runs.push_back(pair.adaptive);
      if (options.write_outputs && steps <= options.trace_max_steps) {
        write_text(paths.trace("fixed", steps, seed), trace_jsonl(pair.fixed_trace));
        write_text(paths.trace("adaptive", steps, seed), trace_jsonl(pair.adaptive_trace));
      }
    });
  } catch (...) {
    finalize_metrics(record, cfg.sampler.sample_count);
    if (options.write_outputs) write_metrics(record, paths);
    throw;
  }
  finalize_metrics(record, cfg.sampler.sample_count);
  if (options.write_outputs) write_metrics(record, paths);
  return record;
}

/// Benchmark entry point that loads both models from the output directory.
inline MetricsRecord run_benchmark(const RunConfig& cfg, const BenchmarkOptions& options = {}) {
  const RunPaths paths{cfg.output_dir};
  const Denoiser denoiser = load_denoiser(paths.denoiser_checkpoint());
  const NoiseEstimator estimator = load_estimator(paths.estimator_checkpoint());
  return run_benchmark(cfg, denoiser, estimator, options);
}

}  // namespace adadiffuse
