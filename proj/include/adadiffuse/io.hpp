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
 * @file io.hpp
 * @brief Plain-text exports (CSV, JSON lines) and their readers.
 *
 * Every writer here has a matching reader so emitted artifacts can be
 * parsed back. Numbers are written with 17 significant digits, which makes
 * doubles round-trip exactly.
 */

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adadiffuse/metrics.hpp"
#include "adadiffuse/real_buffer.hpp"
#include "adadiffuse/sampler.hpp"
#include "adadiffuse/schedule.hpp"
#include "json.hpp"

namespace adadiffuse {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError("csv: missing column '" + name + "'");
  }
};

namespace detail {

inline std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

inline double parse_real(const std::string& text) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw FormatError("csv: not a number: '" + text + "'");
  }
  return v;
}

inline std::size_t parse_count(const std::string& text) {
  std::size_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw FormatError("csv: not a count: '" + text + "'");
  }
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline std::string format_csv(const CsvTable& table) {
  std::string out;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out += ',';
    out += table.header[i];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  return out;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw FormatError("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  if (first) throw FormatError("csv: missing header");
  return table;
}

inline void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Schedules: i, beta, alpha_bar, l with i = 0 carrying the l_0 = 1 boundary.

inline std::string schedule_csv(const NoiseSchedule& schedule) {
  CsvTable t{{"i", "beta", "alpha_bar", "l"}, {}};
  const auto& l = schedule.boundaries();
  t.rows.push_back({"0", "", "1", detail::format_real(l[0])});
  for (std::size_t i = 1; i <= schedule.steps(); ++i) {
    t.rows.push_back({std::to_string(i), detail::format_real(schedule.beta(i)),
                      detail::format_real(schedule.alpha_bar(i)), detail::format_real(l[i])});
  }
  return format_csv(t);
}

inline std::vector<double> parse_schedule_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t i_col = t.column("i");
  const std::size_t beta_col = t.column("beta");
  std::vector<double> betas;
  for (const auto& row : t.rows) {
    const std::size_t i = detail::parse_count(row[i_col]);
    if (i == 0) continue;
    if (i != betas.size() + 1) throw FormatError("schedule csv: step indices out of order");
    betas.push_back(detail::parse_real(row[beta_col]));
  }
  return betas;
}

// Samples: one row per sample, columns x0..x{D-1}.

inline std::string samples_csv(const RealBuffer& samples) {
  CsvTable t;
  for (std::size_t d = 0; d < samples.cols(); ++d) t.header.push_back("x" + std::to_string(d));
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    std::vector<std::string> row;
    for (double v : samples.row(r)) row.push_back(detail::format_real(v));
    t.rows.push_back(std::move(row));
  }
  return format_csv(t);
}

inline RealBuffer parse_samples_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  std::vector<double> values;
  values.reserve(t.rows.size() * t.header.size());
  for (const auto& row : t.rows) {
    for (const auto& cell : row) values.push_back(detail::parse_real(cell));
  }
  return RealBuffer::matrix(t.rows.size(), t.header.size(), std::move(values));
}

// Loss curves: step, loss.

inline std::string loss_csv(const std::vector<double>& losses, std::size_t first_step = 0) {
  CsvTable t{{"step", "loss"}, {}};
  for (std::size_t i = 0; i < losses.size(); ++i) {
    t.rows.push_back({std::to_string(first_step + i), detail::format_real(losses[i])});
  }
  return format_csv(t);
}

inline std::vector<std::pair<std::size_t, double>> parse_loss_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t s = t.column("step"), l = t.column("loss");
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& row : t.rows) {
    out.emplace_back(detail::parse_count(row[s]), detail::parse_real(row[l]));
  }
  return out;
}

// Estimator curve: alpha_bar, mse.

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  CsvTable t{{"alpha_bar", "mse"}, {}};
  for (const auto& p : curve) {
    t.rows.push_back({detail::format_real(p.alpha_bar), detail::format_real(p.mse)});
  }
  return format_csv(t);
}

inline std::vector<CurvePoint> parse_curve_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  const std::size_t a = t.column("alpha_bar"), m = t.column("mse");
  std::vector<CurvePoint> out;
  for (const auto& row : t.rows) {
    out.push_back({detail::parse_real(row[a]), detail::parse_real(row[m])});
  }
  return out;
}

// Trace: one JSON object per reverse step.

inline nlohmann::json trace_step_json(const TraceStep& step) {
  nlohmann::json j;
  j["n"] = step.n;
  j["alpha_hat"] = step.alpha_hat ? nlohmann::json(*step.alpha_hat) : nlohmann::json(nullptr);
  j["betas"] = step.betas;
  j["wall_ms"] = step.wall_ms;
  return j;
}

inline std::string trace_jsonl(const TraceRecord& trace) {
  std::string out;
  for (const auto& step : trace.steps) {
    out += trace_step_json(step).dump();
    out += '\n';
  }
  return out;
}

/// Reads n, alpha_hat, betas and wall_ms back; resolved_steps is not stored.
inline std::vector<TraceStep> parse_trace_jsonl(const std::string& text) {
  std::vector<TraceStep> steps;
  std::istringstream in(text);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TraceStep step;
      step.n = j.at("n").get<std::size_t>();
      if (!j.at("alpha_hat").is_null()) step.alpha_hat = j.at("alpha_hat").get<double>();
      step.betas = j.at("betas").get<std::vector<double>>();
      step.wall_ms = j.at("wall_ms").get<double>();
      steps.push_back(std::move(step));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trace line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return steps;
}

}  // namespace adadiffuse
