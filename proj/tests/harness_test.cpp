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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "adadiffuse/checkpoint.hpp"
#include "adadiffuse/cli.hpp"
#include "adadiffuse/config.hpp"
#include "adadiffuse/harness.hpp"
#include "adadiffuse/io.hpp"
#include "adadiffuse/metrics.hpp"

namespace adadiffuse {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adadiffuse_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// --- energy distance ---------------------------------------------------------

TEST(EnergyDistance, IdenticalSetsGiveZero) {
  Rng rng(1);
  const RealBuffer a = standard_normal({50, 3}, rng);
  EXPECT_NEAR(energy_distance(a, a), 0.0, 1e-12);
}

TEST(EnergyDistance, SingletonsGiveTwiceTheDistance) {
  const RealBuffer a = RealBuffer::matrix(1, 2, {0.0, 0.0});
  const RealBuffer b = RealBuffer::matrix(1, 2, {3.0, 4.0});
  EXPECT_DOUBLE_EQ(energy_distance(a, b), 10.0);
}

TEST(EnergyDistance, SymmetricAndNonNegative) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const RealBuffer a = standard_normal({static_cast<std::size_t>(30 + trial), 2}, rng);
    RealBuffer b = standard_normal({25, 2}, rng);
    for (double& v : b.values()) v = 0.5 * v + 0.1 * trial;
    const double ab = energy_distance(a, b);
    EXPECT_NEAR(ab, energy_distance(b, a), 1e-12);
    EXPECT_GE(ab, -1e-12);
  }
}

TEST(EnergyDistance, SeparatedClustersScoreHigherThanSplit) {
  Rng rng(3);
  RealBuffer near = standard_normal({200, 2}, rng);
  RealBuffer far = standard_normal({200, 2}, rng);
  for (double& v : far.values()) v += 10.0;
  const RealBuffer split_a = standard_normal({200, 2}, rng);
  const RealBuffer split_b = standard_normal({200, 2}, rng);
  EXPECT_GT(energy_distance(near, far), energy_distance(split_a, split_b));
}

TEST(EnergyDistance, RejectsDimensionMismatchAndEmpty) {
  EXPECT_THROW(energy_distance(RealBuffer({2, 2}), RealBuffer({2, 3})), ShapeError);
  EXPECT_THROW(energy_distance(RealBuffer({0, 2}), RealBuffer({2, 2})), std::invalid_argument);
}

// --- estimator curve ---------------------------------------------------------

TEST(EstimatorCurve, PerfectOracleHasZeroError) {
  DatasetSpec spec;
  spec.size = 1000;
  const RealBuffer data = generate(spec);
  Rng rng(4);
  const std::vector<double> grid{0.01, 0.5, 0.999};
  // The oracle recovers the level because every point uses exactly one grid value.
  std::size_t calls = 0;
  const auto curve = eval_estimator_curve(
      [&](const RealBuffer&) { return grid[calls++ / 8]; }, data, grid, 8, 16, rng);
  ASSERT_EQ(curve.size(), 3u);
  for (const auto& p : curve) EXPECT_EQ(p.mse, 0.0);
}

TEST(EstimatorCurve, EmptyGridRejected) {
  DatasetSpec spec;
  spec.size = 10;
  Rng rng(4);
  const NoiseEstimator e = make_estimator(2, 0, {4});
  EXPECT_THROW(eval_estimator_curve(e, generate(spec), {}, 4, 4, rng), std::invalid_argument);
  EXPECT_THROW(eval_estimator_curve(e, generate(spec), {1.0}, 4, 4, rng), std::invalid_argument);
}

TEST(EstimatorCurve, TrainingImprovesOnUntrainedNetwork) {
  DatasetSpec spec;
  spec.size = 4000;
  const RealBuffer data = generate(spec);
  const std::vector<double> grid{0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999};
  NoiseEstimator e = make_estimator(2, 3, {32, 32});
  Rng before_rng(5);
  const auto before = eval_estimator_curve(e, data, grid, 32, 256, before_rng);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.set_size = 256;
  cfg.total_steps = 1500;
  cfg.learning_rate = 3e-3;
  train_estimator(e, data, cfg);
  Rng after_rng(5);
  const auto after = eval_estimator_curve(e, data, grid, 32, 256, after_rng);
  std::size_t better = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) better += after[i].mse <= before[i].mse;
  EXPECT_GE(static_cast<double>(better), 0.8 * static_cast<double>(grid.size()));
}

// --- checkpoints -------------------------------------------------------------

Checkpoint sample_checkpoint() {
  const auto schedule = NoiseSchedule::from_betas(linear_betas(1e-4, 2e-2, 20));
  Checkpoint c;
  c.denoiser = make_denoiser(2, ConditioningMode::discrete_index, schedule, 3, {8, 8});
  c.estimator = make_estimator(2, 4, {8, 8});
  c.schedule = NoiseSchedule::from_betas({0.1, 0.2, 0.3});
  return c;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("ckpt");
  const Checkpoint c = sample_checkpoint();
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back, c);
  EXPECT_EQ(encode_tensors(checkpoint_tensors(back)), encode_tensors(checkpoint_tensors(c)));
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes =
      encode_tensors({{"x", RealBuffer::vector({1.5})}});
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 1u + 4u + 4u + 8u);
  EXPECT_EQ(bytes.substr(0, 4), "NESD");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[12], 'x');
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const std::string bytes = encode_tensors(checkpoint_tensors(sample_checkpoint()));
  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 7) {
    EXPECT_THROW(checkpoint_from_tensors(decode_tensors(bytes.substr(0, cut), "mem"), "mem"),
                 CheckpointError)
        << "cut at " << cut;
  }
}

TEST(Checkpoint, TruncatedFileRejectedWithPath) {
  const fs::path dir = scratch_dir("trunc");
  const std::string path = (dir / "cut.ckpt").string();
  save_checkpoint(sample_checkpoint(), path);
  fs::resize_file(path, fs::file_size(path) - 3);
  try {
    load_checkpoint(path);
    FAIL() << "truncated checkpoint accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Checkpoint, VersionMismatchNamesBothVersions) {
  std::string bytes = encode_tensors({{"x", RealBuffer::vector({1.0})}});
  bytes[4] = 7;
  try {
    decode_tensors(bytes, "mem");
    FAIL() << "wrong version accepted";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('7'), std::string::npos);
    EXPECT_NE(msg.find('1'), std::string::npos);
  }
}

TEST(Checkpoint, BadMagicAndMissingFileRejected) {
  std::string bytes = encode_tensors({{"x", RealBuffer::vector({1.0})}});
  bytes[0] = 'X';
  EXPECT_THROW(decode_tensors(bytes, "mem"), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), CheckpointError);
}

TEST(Checkpoint, ShapeCorruptionRejected) {
  auto tensors = checkpoint_tensors(sample_checkpoint());
  for (auto& t : tensors) {
    if (t.name == "estimator/head/layer0/weight") t.value = RealBuffer({1, 3});
  }
  EXPECT_THROW(checkpoint_from_tensors(tensors, "mem"), CheckpointError);
}

// --- config ------------------------------------------------------------------

TEST(Config, ParsesNamespacedKeys) {
  const RunConfig cfg = parse_config(
      "# comment\n"
      "dataset.kind = swiss_roll_2d\n"
      "dataset.size = 123\n"
      "sampler.eta = 0.5\n"
      "sampler.steps = 10\n"
      "sampler.adjust = 3, 7\n"
      "sampler.family = fibonacci\n"
      "run.seeds = 4,5\n");
  EXPECT_EQ(cfg.dataset.kind, DatasetKind::swiss_roll_2d);
  EXPECT_EQ(cfg.dataset.size, 123u);
  EXPECT_EQ(cfg.sampler.eta, 0.5);
  EXPECT_EQ(cfg.sampler.adjustment_set, (std::set<std::size_t>{3, 7}));
  EXPECT_EQ(cfg.sampler.family.kind, ScheduleKind::fibonacci);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{4, 5}));
}

TEST(Config, UnknownKeyRejectedWithLocation) {
  try {
    parse_config("dataset.size = 10\nsampler.etaa = 1\n", "my.cfg");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("my.cfg:2"), std::string::npos);
    EXPECT_NE(msg.find("sampler.etaa"), std::string::npos);
  }
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(parse_config("dataset.size = ten\n"), ConfigError);
  EXPECT_THROW(parse_config("dataset.kind = cube\n"), ConfigError);
  EXPECT_THROW(parse_config("dataset.size = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("sampler.steps = 3\nsampler.adjust = 5\n"), ConfigError);
  EXPECT_THROW(parse_config("no equals sign\n"), ConfigError);
}

TEST(Config, FormatRoundTrips) {
  RunConfig cfg;
  cfg.dataset.kind = DatasetKind::sinusoid_1d;
  cfg.dataset.length = 32;
  cfg.sampler.eta = 0.123456789012345;
  cfg.sampler.steps = 9;
  cfg.adjust_all = false;
  cfg.sampler.adjustment_set = {2, 4};
  cfg.eval_grid = {0.1, 0.3};
  cfg.seeds = {1, 2, 3};
  cfg.sampler.conditioning = ConditioningMode::discrete_index;
  cfg.estimator_final_learning_rate = 1e-5;
  cfg.estimator_width = 24;
  const RunConfig back = parse_config(format_config(cfg));
  EXPECT_EQ(format_config(back), format_config(cfg));
  EXPECT_EQ(back.sampler.eta, cfg.sampler.eta);
  EXPECT_EQ(back.sampler.adjustment_set, cfg.sampler.adjustment_set);
  EXPECT_EQ(back.dataset.kind, cfg.dataset.kind);
  EXPECT_EQ(back.estimator_train().final_learning_rate, 1e-5);
  EXPECT_EQ(back.estimator_width, 24u);
}

TEST(Config, AdjustAllFollowsStepCount) {
  const RunConfig cfg = parse_config("sampler.adjust = all\nsampler.steps = 4\n");
  EXPECT_EQ(cfg.sampler.adjustment_set, SamplerConfig::every_step(4));
  EXPECT_EQ(cfg.sampler_for(7).adjustment_set, SamplerConfig::every_step(7));
  const RunConfig none = parse_config("sampler.adjust = none\n");
  EXPECT_TRUE(none.sampler_for(5).adjustment_set.empty());
}

// --- exports -----------------------------------------------------------------

TEST(Exports, ScheduleCsvRoundTrip) {
  const auto s = NoiseSchedule::from_betas({0.1, 0.012345678901234567, 0.3});
  const std::string text = schedule_csv(s);
  EXPECT_EQ(text.substr(0, text.find('\n')), "i,beta,alpha_bar,l");
  EXPECT_EQ(parse_schedule_csv(text), s.betas());
}

TEST(Exports, SamplesCsvRoundTrip) {
  Rng rng(5);
  const RealBuffer samples = standard_normal({17, 3}, rng);
  EXPECT_EQ(parse_samples_csv(samples_csv(samples)), samples);
}

TEST(Exports, CurveAndLossRoundTrip) {
  const std::vector<CurvePoint> curve{{0.1, 0.25}, {0.999, 1e-7}};
  const auto back = parse_curve_csv(curve_csv(curve));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].alpha_bar, 0.999);
  EXPECT_EQ(back[1].mse, 1e-7);
  const auto losses = parse_loss_csv(loss_csv({0.5, 0.25}, 10));
  EXPECT_EQ(losses[1], (std::pair<std::size_t, double>{11, 0.25}));
}

TEST(Exports, TraceJsonlRoundTrip) {
  TraceRecord trace;
  trace.steps.push_back({3, 0.42, 2, {0.1, 0.2}, 1.5});
  trace.steps.push_back({2, std::nullopt, std::nullopt, {0.1, 0.2}, 0.25});
  const auto back = parse_trace_jsonl(trace_jsonl(trace));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].n, 3u);
  EXPECT_EQ(*back[0].alpha_hat, 0.42);
  EXPECT_FALSE(back[1].alpha_hat.has_value());
  EXPECT_EQ(back[1].betas, (std::vector<double>{0.1, 0.2}));
  EXPECT_EQ(back[1].wall_ms, 0.25);
  EXPECT_THROW(parse_trace_jsonl("{\"n\": 1}\n"), FormatError);
}

TEST(Exports, MetricsAndBenchRoundTrip) {
  MetricsRecord r;
  r.estimator_curve = {{0.5, 0.01}};
  r.runs = {{"fixed", 6, 0, 0.3, 12.5, 0, 99}, {"adaptive", 6, 0, 0.2, 14.0, 2, 99}};
  finalize_metrics(r, 100);
  const MetricsRecord back = parse_metrics_json(metrics_json(r).dump());
  EXPECT_EQ(back, r);
  const auto runs = parse_bench_csv(bench_csv(r.runs));
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_EQ(runs[0].method, r.runs[0].method);
  EXPECT_EQ(runs[0].energy_distance, r.runs[0].energy_distance);
  EXPECT_EQ(r.clamp_events, 2u);
}

// --- benchmark ---------------------------------------------------------------

RunConfig tiny_run(const fs::path& dir) {
  RunConfig cfg;
  cfg.dataset.size = 500;
  cfg.denoiser_steps = 5;
  cfg.denoiser_batch_size = 16;
  cfg.estimator_steps = 5;
  cfg.estimator_batch_size = 2;
  cfg.estimator_set_size = 8;
  cfg.sampler.sample_count = 20;
  cfg.eval_samples_per_point = 2;
  cfg.reference_size = 50;
  cfg.benchmark_steps = {3};
  cfg.seeds = {7};
  cfg.output_dir = dir.string();
  return cfg;
}

TEST(Benchmark, OneStepCountOneSeedRecordsTwoRuns) {
  const fs::path dir = scratch_dir("bench");
  const RunConfig cfg = tiny_run(dir);
  run_train_denoiser(cfg);
  run_train_estimator(cfg);
  const MetricsRecord r = run_benchmark(cfg);
  ASSERT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.runs[0].initial_noise_hash, r.runs[1].initial_noise_hash);
  for (const auto& run : r.runs) {
    EXPECT_GE(run.energy_distance, -1e-12);
    EXPECT_GT(run.wall_ms, 0.0);
  }
  EXPECT_EQ(parse_metrics_json(read_text(RunPaths{dir}.metrics())), r);
  EXPECT_EQ(parse_bench_csv(read_text(RunPaths{dir}.bench())).size(), 2u);
  EXPECT_EQ(parse_curve_csv(read_text(RunPaths{dir}.curve())).size(), cfg.eval_grid.size());
  EXPECT_EQ(parse_trace_jsonl(read_text(RunPaths{dir}.trace("adaptive", 3, 7))).size(), 3u);
  EXPECT_EQ(parse_loss_csv(read_text(RunPaths{dir}.denoiser_loss())).size(), 5u);
}

TEST(Benchmark, MissingCheckpointNamesPath) {
  const fs::path dir = scratch_dir("bench_missing");
  try {
    run_benchmark(tiny_run(dir));
    FAIL() << "benchmark ran without checkpoints";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find((dir / "denoiser.ckpt").string()), std::string::npos);
  }
}

TEST(Benchmark, PartialResultsFlushedOnFailure) {
  const fs::path dir = scratch_dir("bench_fail");
  RunConfig cfg = tiny_run(dir);
  cfg.benchmark_steps = {2, 3};
  cfg.sampler.eta = 50.0;  // DDIM with a huge eta fails once sigma^2 exceeds 1 - alpha_bar.
  const Denoiser d = run_train_denoiser(cfg);
  const NoiseEstimator e = run_train_estimator(cfg);
  BenchmarkOptions options;
  options.eval_curve = false;
  EXPECT_ANY_THROW(run_benchmark(cfg, d, e, options));
  EXPECT_TRUE(fs::exists(RunPaths{dir}.bench()));
  EXPECT_TRUE(fs::exists(RunPaths{dir}.metrics()));
}

TEST(Benchmark, WorkerCountHonoursEnvironment) {
  ::setenv("ADADIFFUSE_THREADS", "3", 1);
  EXPECT_EQ(worker_count(10), 3u);
  EXPECT_EQ(worker_count(2), 2u);
  ::setenv("ADADIFFUSE_THREADS", "zero", 1);
  EXPECT_THROW(worker_count(4), ConfigError);
  ::unsetenv("ADADIFFUSE_THREADS");
  EXPECT_GE(worker_count(4), 1u);
}

TEST(Benchmark, ParallelRunsMatchSerialRuns) {
  const fs::path dir = scratch_dir("bench_parallel");
  RunConfig cfg = tiny_run(dir);
  cfg.seeds = {1, 2, 3};
  const Denoiser d = run_train_denoiser(cfg);
  const NoiseEstimator e = run_train_estimator(cfg);
  BenchmarkOptions options;
  options.write_outputs = false;
  options.eval_curve = false;
  ::setenv("ADADIFFUSE_THREADS", "1", 1);
  const auto serial = run_benchmark(cfg, d, e, options);
  ::setenv("ADADIFFUSE_THREADS", "3", 1);
  const auto parallel = run_benchmark(cfg, d, e, options);
  ::unsetenv("ADADIFFUSE_THREADS");
  ASSERT_EQ(serial.runs.size(), parallel.runs.size());
  for (std::size_t i = 0; i < serial.runs.size(); ++i) {
    EXPECT_EQ(serial.runs[i].method, parallel.runs[i].method);
    EXPECT_EQ(serial.runs[i].seed, parallel.runs[i].seed);
    EXPECT_EQ(serial.runs[i].energy_distance, parallel.runs[i].energy_distance);
  }
}

// --- command line ------------------------------------------------------------

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr,
            std::string* err_text = nullptr) {
  args.insert(args.begin(), "adadiffuse");
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

TEST(Cli, NoArgumentsPrintsUsage) {
  std::string err;
  EXPECT_EQ(run_cli({}, nullptr, &err), 2);
  EXPECT_NE(err.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownSubcommandAndFlag) {
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  std::string err;
  EXPECT_EQ(run_cli({"solve-schedule", "--alpha-bar", "0.5", "--steps", "3", "--bogus"}, nullptr,
                    &err),
            2);
  EXPECT_NE(err.find("Usage"), std::string::npos);
}

TEST(Cli, SolveScheduleLinearMatchesSolver) {
  std::string out;
  ASSERT_EQ(run_cli({"solve-schedule", "--family", "linear", "--alpha-bar", "0.8", "--steps", "2",
                     "--beta0", "0.01"},
                    &out),
            0);
  const CsvTable table = parse_csv(out);
  const auto expected = solve_linear(0.8, 2, 0.01);
  ASSERT_EQ(table.rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(std::stod(table.rows[i][table.column("beta")]), expected[i]);
  }
}

TEST(Cli, SolveScheduleRejectsBadTarget) {
  EXPECT_EQ(run_cli({"solve-schedule", "--alpha-bar", "1.5", "--steps", "2"}), 2);
  EXPECT_EQ(run_cli({"solve-schedule", "--family", "cosine", "--alpha-bar", "0.5", "--steps", "2"}),
            2);
}

TEST(Cli, MissingConfigNamesPath) {
  std::string err;
  EXPECT_EQ(run_cli({"benchmark", "--config", "missing.cfg"}, nullptr, &err), 2);
  EXPECT_NE(err.find("missing.cfg"), std::string::npos);
}

TEST(Cli, MissingCheckpointIsRuntimeError) {
  const fs::path dir = scratch_dir("cli_missing");
  std::string err;
  EXPECT_EQ(run_cli({"sample", "--out", dir.string()}, nullptr, &err), 1);
  EXPECT_NE(err.find("denoiser.ckpt"), std::string::npos);
}

TEST(Cli, EndToEndTinyRun) {
  const fs::path dir = scratch_dir("cli_e2e");
  const std::string cfg_path = (dir / "tiny.cfg").string();
  write_text(cfg_path, format_config(tiny_run(dir / "out")));
  const std::vector<std::string> base{"--config", cfg_path};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> args(extra);
    args.insert(args.end(), base.begin(), base.end());
    return args;
  };
  EXPECT_EQ(run_cli(with({"train-denoiser"})), 0);
  EXPECT_EQ(run_cli(with({"train-estimator"})), 0);
  EXPECT_EQ(run_cli(with({"eval-estimator"})), 0);
  EXPECT_EQ(run_cli(with({"sample", "--method", "fixed"})), 0);
  EXPECT_EQ(run_cli(with({"sample", "--method", "adaptive", "--steps", "4"})), 0);
  EXPECT_EQ(parse_trace_jsonl(read_text((dir / "out" / "trace.jsonl").string())).size(), 4u);
  EXPECT_EQ(parse_samples_csv(read_text((dir / "out" / "samples.csv").string())).rows(), 20u);
  EXPECT_EQ(run_cli(with({"sample", "--method", "sideways"})), 2);
  EXPECT_EQ(run_cli(with({"benchmark"})), 0);
  EXPECT_EQ(parse_bench_csv(read_text((dir / "out" / "bench.csv").string())).size(), 2u);
}

}  // namespace
}  // namespace adadiffuse
