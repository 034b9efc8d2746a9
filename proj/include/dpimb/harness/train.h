// Copyright 2026 The dpimb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Full-batch private training loop. Each step t:
//   logits -> loss/accuracy metrics -> gradient factors -> clip -> privatize
//   -> optimizer step -> accountant step.
// A run ends at max_steps, on a loss plateau, or when the loss becomes
// non-finite (a diverged run, reported rather than thrown).

#ifndef DPIMB_HARNESS_TRAIN_H_
#define DPIMB_HARNESS_TRAIN_H_

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dpimb/common.h"
#include "dpimb/diagnostics.h"
#include "dpimb/dp_core.h"
#include "dpimb/harness/run_config.h"
#include "dpimb/linear_model.h"
#include "dpimb/optimizers.h"
#include "dpimb/rdp_accountant.h"
#include "dpimb/synth_data.h"
#include "json.hpp"

namespace dpimb {

struct MetricsRow {
  std::int64_t step = 0;
  double epsilon = 0.0;
  double loss_overall = 0.0;
  double acc_overall = 0.0;
  std::vector<double> loss_group;
  std::vector<double> acc_group;
  double clipped_frac = 0.0;
  double wall_ms = 0.0;
};

inline std::string MetricsCsvHeader(int num_groups) {
  std::string h = "step,epsilon,loss_overall,acc_overall";
  for (int g = 0; g < num_groups; ++g) h += ",loss_g" + std::to_string(g);
  for (int g = 0; g < num_groups; ++g) h += ",acc_g" + std::to_string(g);
  h += ",clipped_frac,wall_ms";
  return h;
}

namespace internal {

inline std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace internal

inline std::string MetricsCsvLine(const MetricsRow& r) {
  using internal::FormatDouble;
  std::string line = std::to_string(r.step) + "," + FormatDouble(r.epsilon) +
                     "," + FormatDouble(r.loss_overall) + "," +
                     FormatDouble(r.acc_overall);
  for (double v : r.loss_group) line += "," + FormatDouble(v);
  for (double v : r.acc_group) line += "," + FormatDouble(v);
  line += "," + FormatDouble(r.clipped_frac);
  char wall[32];
  std::snprintf(wall, sizeof(wall), "%.3f", r.wall_ms);
  line += std::string(",") + wall;
  return line;
}

inline constexpr int kWeightsFormatVersion = 1;

// "DPIMBWT\0", uint32 header length, JSON {format_version, rows, cols}, then
// rows*cols little-endian float64 in row-major order.
inline void SaveWeights(const Matrix& weights,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const std::string header = nlohmann::json{
      {"format_version", kWeightsFormatVersion},
      {"rows", weights.rows()},
      {"cols", weights.cols()}}.dump();
  out.write("DPIMBWT", 8);
  std::string len;
  internal::AppendU32(len, static_cast<std::uint32_t>(header.size()));
  out.write(len.data(), 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (Index i = 0; i < weights.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(weights.data()[i]);
    if constexpr (std::endian::native == std::endian::big) {
      bits = __builtin_bswap64(bits);
    }
    out.write(reinterpret_cast<const char*>(&bits), 8);
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

inline Matrix LoadWeights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 12) {
    throw Error(ErrorCode::kTruncated, path.string() + " ends inside preamble");
  }
  if (bytes.compare(0, 8, std::string("DPIMBWT\0", 8)) != 0) {
    throw Error(ErrorCode::kIntegrity,
                path.string() + " is not a weights file");
  }
  const std::uint32_t header_len = internal::ReadU32(bytes.data() + 8);
  if (bytes.size() < 12 + header_len) {
    throw Error(ErrorCode::kTruncated, path.string() + " ends inside header");
  }
  Index rows = 0, cols = 0;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(12, header_len));
    if (header.at("format_version").get<int>() != kWeightsFormatVersion) {
      throw Error(ErrorCode::kVersionMismatch,
                  "unsupported weights format in " + path.string());
    }
    rows = header.at("rows").get<Index>();
    cols = header.at("cols").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIntegrity, std::string("bad header: ") + e.what());
  }
  const std::size_t expected = static_cast<std::size_t>(rows * cols) * 8;
  const std::size_t available = bytes.size() - 12 - header_len;
  if (available < expected) {
    throw Error(ErrorCode::kTruncated, path.string() + " payload truncated");
  }
  if (available != expected) {
    throw Error(ErrorCode::kIntegrity, path.string() + " has trailing bytes");
  }
  Matrix w(rows, cols);
  const char* p = bytes.data() + 12 + header_len;
  for (Index i = 0; i < w.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, p + 8 * i, 8);
    if constexpr (std::endian::native == std::endian::big) {
      bits = __builtin_bswap64(bits);
    }
    w.data()[i] = std::bit_cast<double>(bits);
  }
  return w;
}

struct RunResult {
  RunConfig config;
  std::vector<MetricsRow> rows;
  std::vector<DiagnosticsReport> diagnostics;
  Matrix weights;
  bool diverged = false;
  std::string stop_reason;  // "max_steps", "plateau" or "diverged"
  std::int64_t steps = 0;   // optimizer updates performed
  std::int64_t step_budget = 0;
  double final_loss = std::numeric_limits<double>::infinity();
  double final_epsilon = 0.0;
  std::filesystem::path metrics_path;
};

inline nlohmann::json SummaryJson(const RunResult& r) {
  nlohmann::json j = {
      {"config", ToJson(r.config)},      {"diverged", r.diverged},
      {"stop_reason", r.stop_reason},    {"steps", r.steps},
      {"step_budget", r.step_budget},    {"final_loss", nullptr},
      {"final_epsilon", r.final_epsilon}};
  if (std::isfinite(r.final_loss)) j["final_loss"] = r.final_loss;
  if (!r.rows.empty()) {
    const MetricsRow& last = r.rows.back();
    j["final_metrics"] = {{"step", last.step},
                          {"loss_overall", last.loss_overall},
                          {"acc_overall", last.acc_overall},
                          {"loss_group", last.loss_group},
                          {"acc_group", last.acc_group}};
  }
  return j;
}

// Effective step budget after applying the epsilon cap.
inline std::int64_t StepBudget(const RunConfig& config) {
  std::int64_t budget = config.max_steps;
  if (config.epsilon_cap > 0.0) {
    budget = std::min(budget, CalibrateSteps(config.noise_multiplier,
                                             config.delta, config.epsilon_cap));
  }
  return budget;
}

namespace internal {

inline void WriteJsonFile(const std::filesystem::path& path,
                          const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace internal

inline RunResult Train(const RunConfig& config, const SyntheticData& bundle) {
  config.Validate();
  const Dataset& data = bundle.dataset;
  const ClassStats& stats = bundle.stats;
  const DpConfig dp = MakeDpConfig(config, data);
  const auto start = std::chrono::steady_clock::now();

  RunResult result;
  result.config = config;
  result.step_budget = StepBudget(config);

  const bool write_files = !config.output_dir.empty();
  std::ofstream csv;
  std::ofstream diag_log;
  const std::filesystem::path out_dir = config.output_dir;
  if (write_files) {
    std::filesystem::create_directories(out_dir);
    result.metrics_path = out_dir / "metrics.csv";
    csv.open(result.metrics_path, std::ios::trunc);
    diag_log.open(out_dir / "diagnostics.jsonl", std::ios::trunc);
    if (!csv || !diag_log) {
      throw Error(ErrorCode::kIo, "cannot write into " + out_dir.string());
    }
    csv << MetricsCsvHeader(stats.num_groups) << "\n";
  }

  Matrix weights = Matrix::Zero(data.c(), data.d());
  OptState state =
      MakeOptimizer(config.optimizer, config.hp, data.c(), data.d());
  RdpAccountant accountant(config.noise_multiplier);
  GaussianNoise noise(config.seed);

  std::optional<CosineProbe> probe;
  const std::size_t cosine_count = static_cast<std::size_t>(
      std::min<std::int64_t>(config.cosine_samples, data.n()));
  if (cosine_count > 0 &&
      (config.diagnostics_every > 0 || !config.cosine_steps.empty())) {
    probe.emplace(data, StratifiedSample(data.labels, data.c(), cosine_count,
                                         config.seed));
  }

  double best_loss = std::numeric_limits<double>::infinity();
  std::int64_t last_improvement = 0;
  for (std::int64_t t = 0;; ++t) {
    const Matrix logits = Logits(weights, data);
    const Vector losses = PerSampleLosses(logits, data.labels);
    const double mean_loss = losses.mean();
    if (!std::isfinite(mean_loss)) {
      result.diverged = true;
      result.stop_reason = "diverged";
      break;
    }
    if (mean_loss < best_loss * (1.0 - config.plateau_tolerance)) {
      best_loss = mean_loss;
      last_improvement = t;
    }
    bool stop = false;
    if (t >= result.step_budget) {
      stop = true;
      result.stop_reason = "max_steps";
    } else if (t - last_improvement >= config.plateau_window) {
      stop = true;
      result.stop_reason = "plateau";
    }

    const GradFactors factors = ComputeGradFactors(logits, data);
    ClipResult clip = ClipFactors(factors, dp.clip_norm);

    if (t % config.metrics_every == 0 || stop) {
      MetricsRow row;
      row.step = t;
      row.epsilon = accountant.Epsilon(config.delta).epsilon;
      const GroupedMetric loss = GroupedLoss(losses, data.labels, stats);
      const GroupedMetric acc = Accuracy(logits, data.labels, stats);
      row.loss_overall = loss.overall;
      row.acc_overall = acc.overall;
      row.loss_group = loss.per_group;
      row.acc_group = acc.per_group;
      row.clipped_frac = clip.stats.fraction_clipped;
      if (config.record_wall_time) {
        row.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
      }
      if (write_files) csv << MetricsCsvLine(row) << "\n" << std::flush;
      result.rows.push_back(std::move(row));
    }

    const bool periodic =
        config.diagnostics_every > 0 && t % config.diagnostics_every == 0;
    const bool cosine_checkpoint =
        std::find(config.cosine_steps.begin(), config.cosine_steps.end(), t) !=
        config.cosine_steps.end();
    if (periodic || cosine_checkpoint) {
      DiagnosticsReport report;
      report.step = t;
      report.kappa = config.bias_kappa;
      if (probe) {
        const CosineResult cosine = probe->Compute(factors);
        report.cosine = SummarizeCosine(cosine);
        report.cosine_samples =
            static_cast<std::int64_t>(cosine.sample_ids.size());
        report.zero_norm_rows = cosine.zero_norm_rows;
        if (cosine_checkpoint && write_files) {
          WriteCosineMatrix(cosine, t,
                            out_dir / ("cosine_step" + std::to_string(t)));
        }
      }
      const Vector block_norms = ClassBlockNorms(factors);
      report.class_block_norms.assign(block_norms.begin(), block_norms.end());
      const ProbabilityEstimate p = EstimateP(logits, data.labels);
      report.p_hat = p.overall;
      report.p_hat_per_class = p.per_class;
      const double noise_std = dp.NoiseStddev();
      report.noise_floor = noise_std * noise_std;
      if (UsesSecondMoment(state.kind) && state.t > 0) {
        report.dominated_fraction =
            SecondMomentBiasReport(state, dp, config.bias_kappa)
                .dominated_fraction;
      }
      if (write_files) diag_log << ToJson(report).dump() << "\n" << std::flush;
      result.diagnostics.push_back(std::move(report));
    }

    if (stop) break;

    const PrivateGradient grad = Privatize(clip.clipped, dp, noise, t + 1);
    OptimizerStep(state, weights, grad, dp);
    accountant.Step();
    result.steps = t + 1;
  }

  result.final_epsilon = accountant.Epsilon(config.delta).epsilon;
  if (!result.diverged && !result.rows.empty()) {
    result.final_loss = result.rows.back().loss_overall;
  }
  if (write_files) {
    internal::WriteJsonFile(out_dir / "summary.json", SummaryJson(result));
    if (config.save_model) SaveWeights(weights, out_dir / "model.bin");
  }
  result.weights = std::move(weights);
  return result;
}

}  // namespace dpimb

#endif  // DPIMB_HARNESS_TRAIN_H_
