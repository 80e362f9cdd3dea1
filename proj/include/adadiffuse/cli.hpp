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
 * @file cli.hpp
 * @brief Command-line front end.
 *
 * Exit status: 0 on success, 2 for usage and configuration errors, 1 for
 * failures while running.
 */

#pragma once

#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adadiffuse/config.hpp"
#include "adadiffuse/harness.hpp"
#include "adadiffuse/io.hpp"
#include "adadiffuse/schedule.hpp"

namespace adadiffuse {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  std::string family = "linear";
  double alpha_bar = 0.5;
  std::size_t steps = 6;
  double beta0 = 1e-4;
  bool unclamped = false;

  std::string method = "adaptive";
  std::optional<std::size_t> sample_steps;
  std::size_t trace_max_steps = 100;
};

inline RunConfig resolve_config(const CliOptions& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_config(opts.config_path);
  if (opts.seed) {
    cfg.train_seed = *opts.seed;
    cfg.sampler.seed = *opts.seed;
  }
  if (opts.out) cfg.output_dir = *opts.out;
  cfg.validate();
  return cfg;
}

inline void print_schedule_table(std::ostream& out, const std::vector<double>& betas) {
  out << "i,beta,alpha_bar\n";
  double alpha_bar = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    alpha_bar *= 1.0 - betas[i];
    out << i + 1 << ',' << format_real(betas[i]) << ',' << format_real(alpha_bar) << '\n';
  }
}

inline int solve_schedule_command(const CliOptions& opts, std::ostream& out) {
  ScheduleFamily family;
  std::vector<double> betas;
  try {
    family.kind = parse_schedule_kind(opts.family);
    family.beta0 = opts.beta0;
    family.validate();
    if (!(opts.alpha_bar > 0.0 && opts.alpha_bar < 1.0)) {
      throw ConfigError("--alpha-bar must lie in (0, 1)");
    }
    if (opts.steps == 0) throw ConfigError("--steps must be positive");
    if (opts.unclamped) {
      betas = family.kind == ScheduleKind::linear
                  ? solve_linear_unclamped(opts.alpha_bar, opts.steps, family.beta0)
                  : solve_fibonacci_unclamped(opts.alpha_bar, opts.steps, family.beta0);
    } else {
      betas = update_noise_schedule(opts.alpha_bar, opts.steps, family).betas();
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  print_schedule_table(out, betas);
  return kExitOk;
}

inline int sample_command(const CliOptions& opts, const RunConfig& cfg, std::ostream& out) {
  if (opts.method != "fixed" && opts.method != "adaptive") {
    throw ConfigError("--method must be 'fixed' or 'adaptive', got '" + opts.method + "'");
  }
  const RunPaths paths{cfg.output_dir};
  const SamplerConfig sampler = cfg.sampler_for(opts.sample_steps.value_or(cfg.sampler.steps));
  const Denoiser denoiser = load_denoiser(paths.denoiser_checkpoint());
  Rng rng(pair_seed(sampler.seed, sampler.steps));
  SampleResult result;
  if (opts.method == "fixed") {
    result = sample_fixed(denoiser, initial_noise_schedule(sampler), sampler, rng);
  } else {
    const NoiseEstimator estimator = load_estimator(paths.estimator_checkpoint());
    result = sample_adaptive(denoiser, estimator, sampler, rng);
  }
  write_text((paths.dir / "samples.csv").string(), samples_csv(result.samples));
  write_text((paths.dir / "trace.jsonl").string(), trace_jsonl(result.trace));
  if (!result.final_schedule.empty()) {
    write_text((paths.dir / "schedule.csv").string(), schedule_csv(result.final_schedule));
  }
  const double ed = energy_distance(result.samples, generate(cfg.reference_dataset()));
  out << opts.method << " N=" << sampler.steps << " samples=" << result.samples.rows()
      << " energy_distance=" << format_real(ed) << " wall_ms=" << format_real(result.trace.total_ms())
      << " clamp_events=" << result.trace.clamp_events << '\n';
  return kExitOk;
}

inline int benchmark_command(const CliOptions& opts, const RunConfig& cfg, std::ostream& out) {
  BenchmarkOptions bench;
  bench.trace_max_steps = opts.trace_max_steps;
  const MetricsRecord record = run_benchmark(cfg, bench);
  out << "method,N,mean_energy_distance,mean_wall_ms,std_wall_ms\n";
  for (const auto& w : record.wall_time_ms) {
    out << w.method << ',' << w.steps << ','
        << format_real(record.mean_energy_distance(w.method, w.steps)) << ','
        << format_real(w.mean_ms) << ',' << format_real(w.std_ms) << '\n';
  }
  out << "clamp_events," << record.clamp_events << '\n';
  return kExitOk;
}

}  // namespace detail

/// Parses and runs one command line; argv[0] is the program name.
inline int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"Adaptive noise-schedule diffusion toolkit", "adadiffuse"};
  app.require_subcommand(1);
  app.fallthrough();
  detail::CliOptions opts;
  app.add_option("--config", opts.config_path, "Run configuration file (key = value)");
  app.add_option("--seed", opts.seed, "Overrides train.seed and sampler.seed");
  app.add_option("--out", opts.out, "Output directory (overrides output.dir)");

  auto* train_denoiser_cmd = app.add_subcommand("train-denoiser", "Train the noise predictor");
  auto* train_estimator_cmd =
      app.add_subcommand("train-estimator", "Train the noise-level estimator");
  auto* eval_cmd = app.add_subcommand("eval-estimator", "Estimator MSE over the eval grid");
  auto* solve_cmd = app.add_subcommand("solve-schedule", "Print a solved beta table");
  solve_cmd->add_option("--family", opts.family, "linear or fibonacci");
  solve_cmd->add_option("--alpha-bar", opts.alpha_bar, "Target cumulative alpha in (0, 1)")
      ->required();
  solve_cmd->add_option("--steps", opts.steps, "Number of steps")->required();
  solve_cmd->add_option("--beta0", opts.beta0, "First beta");
  solve_cmd->add_flag("--unclamped", opts.unclamped, "Skip clamping into [1e-6, 0.999]");
  auto* sample_cmd = app.add_subcommand("sample", "Generate samples");
  sample_cmd->add_option("--method", opts.method, "fixed or adaptive");
  sample_cmd->add_option("--steps", opts.sample_steps, "Overrides sampler.steps");
  auto* bench_cmd = app.add_subcommand("benchmark", "Paired fixed vs adaptive comparison");
  bench_cmd->add_option("--trace-max-steps", opts.trace_max_steps,
                        "Write traces only for runs with at most this many steps");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (solve_cmd->parsed()) return detail::solve_schedule_command(opts, out);
    const RunConfig cfg = detail::resolve_config(opts);
    if (train_denoiser_cmd->parsed()) {
      run_train_denoiser(cfg);
      out << "denoiser checkpoint: " << RunPaths{cfg.output_dir}.denoiser_checkpoint() << '\n';
    } else if (train_estimator_cmd->parsed()) {
      run_train_estimator(cfg);
      out << "estimator checkpoint: " << RunPaths{cfg.output_dir}.estimator_checkpoint() << '\n';
    } else if (eval_cmd->parsed()) {
      const RunPaths paths{cfg.output_dir};
      const auto curve = run_eval_estimator(cfg, load_estimator(paths.estimator_checkpoint()));
      write_text(paths.curve(), curve_csv(curve));
      out << curve_csv(curve);
    } else if (sample_cmd->parsed()) {
      return detail::sample_command(opts, cfg, out);
    } else if (bench_cmd->parsed()) {
      return detail::benchmark_command(opts, cfg, out);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  return cli_dispatch(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace adadiffuse
