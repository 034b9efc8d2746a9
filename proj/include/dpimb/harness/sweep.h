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

// Grid search over learning rate (and gamma / gamma' for the Adam variants),
// keeping for each optimizer the run with the lowest final overall training
// loss.

#ifndef DPIMB_HARNESS_SWEEP_H_
#define DPIMB_HARNESS_SWEEP_H_

#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dpimb/harness/run_config.h"
#include "dpimb/harness/train.h"
#include "dpimb/rdp_accountant.h"
#include "dpimb/synth_data.h"
#include "json.hpp"

namespace dpimb {

struct SweepRun {
  OptimizerKind kind = OptimizerKind::kDpGd;
  double lr = 0.0;
  std::optional<double> gamma;  // gamma (DP-Adam) or gamma' (DP-AdamBC)
  std::string config_hash;
  RunResult result;  // weights are dropped to bound memory
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::map<OptimizerKind, std::size_t> best;  // index into runs
  nlohmann::json manifest;

  const SweepRun& Best(OptimizerKind kind) const {
    const auto it = best.find(kind);
    if (it == best.end()) {
      throw Error(ErrorCode::kAllDiverged,
                  "no converged run for " + std::string(OptimizerName(kind)));
    }
    return runs[it->second];
  }
};

// Ignores output_dir and the sweep block.
inline std::string ConfigHash(const RunConfig& config) {
  nlohmann::json j = ToJson(config);
  j.erase("output_dir");
  j.erase("sweep");
  const std::string text = j.dump();
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x",
                internal::Crc32(text.data(), text.size()));
  return buf;
}

namespace internal {

inline std::string GridLabel(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

inline std::string DescribeGrid(const RunConfig& base) {
  std::string s = "lr=[";
  for (std::size_t i = 0; i < base.lr_grid.size(); ++i) {
    s += (i ? "," : "") + GridLabel(base.lr_grid[i]);
  }
  s += "] gamma=[";
  for (std::size_t i = 0; i < base.gamma_grid.size(); ++i) {
    s += (i ? "," : "") + GridLabel(base.gamma_grid[i]);
  }
  return s + "]";
}

// Lower final loss wins; ties go to the smaller learning rate, then smaller
// gamma.
inline bool Better(const SweepRun& a, const SweepRun& b) {
  if (a.result.final_loss != b.result.final_loss) {
    return a.result.final_loss < b.result.final_loss;
  }
  if (a.lr != b.lr) return a.lr < b.lr;
  return a.gamma.value_or(0.0) < b.gamma.value_or(0.0);
}

}  // namespace internal

// Optional progress callback, invoked after each run completes (possibly from
// a worker thread, but never concurrently).
using SweepProgress =
    std::function<void(const SweepRun&, std::size_t done, std::size_t total)>;

inline SweepResult Sweep(const RunConfig& base, const SyntheticData& data,
                         const SweepProgress& progress = {}) {
  base.Validate();
  SweepResult result;
  std::vector<RunConfig> configs;
  for (OptimizerKind kind : base.sweep_optimizers) {
    for (double lr : base.lr_grid) {
      std::vector<std::optional<double>> gammas = {std::nullopt};
      if (UsesSecondMoment(kind)) {
        gammas.assign(base.gamma_grid.begin(), base.gamma_grid.end());
      }
      for (const auto& gamma : gammas) {
        RunConfig cfg = base;
        cfg.optimizer = kind;
        cfg.hp.lr = lr;
        std::string name =
            std::string(OptimizerName(kind)) + "_lr" + internal::GridLabel(lr);
        if (gamma) {
          if (kind == OptimizerKind::kDpAdam) cfg.hp.gamma = *gamma;
          if (kind == OptimizerKind::kDpAdamBc) cfg.hp.gamma_floor = *gamma;
          name += "_g" + internal::GridLabel(*gamma);
        }
        if (!base.output_dir.empty()) {
          cfg.output_dir =
              (std::filesystem::path(base.output_dir) / "runs" / name).string();
        }
        SweepRun run;
        run.kind = kind;
        run.lr = lr;
        run.gamma = gamma;
        run.config_hash = ConfigHash(cfg);
        result.runs.push_back(std::move(run));
        configs.push_back(std::move(cfg));
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        RunResult r = Train(configs[i], data);
        r.weights = Matrix();
        std::lock_guard<std::mutex> lock(mu);
        result.runs[i].result = std::move(r);
        ++done;
        if (progress) progress(result.runs[i], done, configs.size());
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int jobs = std::min<int>(base.jobs, static_cast<int>(configs.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const SweepRun& run = result.runs[i];
    if (run.result.diverged) continue;
    const auto it = result.best.find(run.kind);
    if (it == result.best.end() ||
        internal::Better(run, result.runs[it->second])) {
      result.best[run.kind] = i;
    }
  }
  if (result.best.empty()) {
    throw Error(ErrorCode::kAllDiverged,
                "all " + std::to_string(result.runs.size()) +
                    " runs diverged over grid " + internal::DescribeGrid(base));
  }

  nlohmann::json runs = nlohmann::json::array();
  for (const SweepRun& run : result.runs) {
    nlohmann::json j = {{"optimizer", std::string(OptimizerName(run.kind))},
                        {"lr", run.lr},
                        {"gamma", nullptr},
                        {"config_hash", run.config_hash},
                        {"metrics_path", run.result.metrics_path.string()},
                        {"final_loss", nullptr},
                        {"diverged", run.result.diverged},
                        {"stop_reason", run.result.stop_reason},
                        {"steps", run.result.steps},
                        {"final_epsilon", run.result.final_epsilon}};
    if (run.gamma) j["gamma"] = *run.gamma;
    if (std::isfinite(run.result.final_loss))
      j["final_loss"] = run.result.final_loss;
    runs.push_back(std::move(j));
  }
  nlohmann::json best = nlohmann::json::object();
  for (const auto& [kind, index] : result.best) {
    best[std::string(OptimizerName(kind))] = {
        {"run_index", index},
        {"config_hash", result.runs[index].config_hash},
        {"lr", result.runs[index].lr},
        {"final_loss", result.runs[index].result.final_loss}};
    if (result.runs[index].gamma) {
      best[std::string(OptimizerName(kind))]["gamma"] =
          *result.runs[index].gamma;
    }
  }
  result.manifest = {{"resolved_config", ToJson(base)},
                     {"step_budget", StepBudget(base)},
                     {"runs", std::move(runs)},
                     {"best", std::move(best)}};
  if (!base.output_dir.empty()) {
    std::filesystem::create_directories(base.output_dir);
    internal::WriteJsonFile(
        std::filesystem::path(base.output_dir) / "sweep_manifest.json",
        result.manifest);
  }
  return result;
}

struct DpSetting {
  double clip_norm;
  double noise_multiplier;
};

inline constexpr std::array<DpSetting, 3> kDpGridSettings = {
    DpSetting{1.0, 10.0}, DpSetting{10.0, 10.0}, DpSetting{1.0, 5.0}};
inline constexpr double kDpGridTargetEpsilon = 28.0;

struct DpGridResult {
  std::vector<DpSetting> settings;
  std::vector<std::int64_t> step_budgets;
  std::vector<SweepResult> sweeps;
  nlohmann::json summary;
};

// Runs the sweep once per (C, sigma) setting, each with its step count chosen
// by the accountant so that all settings end at the same epsilon. Plateau
// stopping is disabled so every run reaches that epsilon.
inline DpGridResult DpGridSuite(const RunConfig& base,
                                const SyntheticData& data,
                                const SweepProgress& progress = {}) {
  DpGridResult out;
  nlohmann::json rows = nlohmann::json::array();
  std::string table =
      "| C | sigma | T | optimizer | lr | gamma | final eps | loss | acc |";
  for (int g = 0; g < data.stats.num_groups; ++g) {
    table += " acc_g" + std::to_string(g) + " |";
  }
  table += "\n|---|---|---|---|---|---|---|---|---|";
  for (int g = 0; g < data.stats.num_groups; ++g) table += "---|";
  table += "\n";
  for (const DpSetting& s : kDpGridSettings) {
    RunConfig cfg = base;
    cfg.clip_norm = s.clip_norm;
    cfg.noise_multiplier = s.noise_multiplier;
    cfg.epsilon_cap = kDpGridTargetEpsilon;
    const std::int64_t budget =
        CalibrateSteps(s.noise_multiplier, cfg.delta, kDpGridTargetEpsilon);
    cfg.max_steps = budget;
    cfg.plateau_window = budget + 1;
    if (!base.output_dir.empty()) {
      cfg.output_dir = (std::filesystem::path(base.output_dir) /
                        ("C" + internal::GridLabel(s.clip_norm) + "_sigma" +
                         internal::GridLabel(s.noise_multiplier)))
                           .string();
    }
    SweepResult sweep = Sweep(cfg, data, progress);
    for (const auto& [kind, index] : sweep.best) {
      const SweepRun& run = sweep.runs[index];
      const MetricsRow& last = run.result.rows.back();
      rows.push_back(
          {{"clip_norm", s.clip_norm},
           {"noise_multiplier", s.noise_multiplier},
           {"steps", budget},
           {"optimizer", std::string(OptimizerName(kind))},
           {"lr", run.lr},
           {"gamma", run.gamma ? nlohmann::json(*run.gamma) : nullptr},
           {"final_epsilon", run.result.final_epsilon},
           {"loss_overall", last.loss_overall},
           {"acc_overall", last.acc_overall},
           {"loss_group", last.loss_group},
           {"acc_group", last.acc_group}});
      char line[256];
      std::snprintf(
          line, sizeof(line),
          "| %g | %g | %lld | %s | %g | %s | %.3f | %.4f | %.4f |", s.clip_norm,
          s.noise_multiplier, static_cast<long long>(budget),
          std::string(OptimizerName(kind)).c_str(), run.lr,
          run.gamma ? internal::GridLabel(*run.gamma).c_str() : "-",
          run.result.final_epsilon, last.loss_overall, last.acc_overall);
      table += line;
      for (double a : last.acc_group) {
        std::snprintf(line, sizeof(line), " %.4f |", a);
        table += line;
      }
      table += "\n";
    }
    out.settings.push_back(s);
    out.step_budgets.push_back(budget);
    out.sweeps.push_back(std::move(sweep));
  }
  out.summary = {{"target_epsilon", kDpGridTargetEpsilon},
                 {"resolved_config", ToJson(base)},
                 {"best_runs", rows}};
  if (!base.output_dir.empty()) {
    const std::filesystem::path dir = base.output_dir;
    internal::WriteJsonFile(dir / "dp_grid_summary.json", out.summary);
    std::ofstream md(dir / "dp_grid_summary.md", std::ios::trunc);
    if (!md) throw Error(ErrorCode::kIo, "cannot write summary table");
    md << table;
  }
  return out;
}

}  // namespace dpimb

#endif  // DPIMB_HARNESS_SWEEP_H_
