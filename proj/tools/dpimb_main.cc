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

// dpimb: command-line front end.
//
//   dpimb gen-data    generate and save a synthetic dataset
//   dpimb train       one training run
//   dpimb sweep       lr / gamma grid search with best-run selection
//   dpimb appendix-c  sweeps at (C, sigma) in {(1,10), (10,10), (1,5)}
//   dpimb diagnose    diagnostics report and cosine matrix at given weights
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 every run diverged, 4 I/O or file-format error, 5 resource limit.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpimb/diagnostics.h"
#include "dpimb/harness/run_config.h"
#include "dpimb/harness/sweep.h"
#include "dpimb/harness/train.h"
#include "dpimb/synth_data.h"
#include "json.hpp"

namespace {

using dpimb::ErrorCode;

enum ExitCode {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitAllDiverged = 3,
  kExitIo = 4,
  kExitResource = 5,
};

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDimensionMismatch:
      return kExitConfig;
    case ErrorCode::kAllDiverged:
      return kExitAllDiverged;
    case ErrorCode::kIo:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kTruncated:
    case ErrorCode::kIntegrity:
    case ErrorCode::kChecksum:
      return kExitIo;
    case ErrorCode::kResourceLimit:
      return kExitResource;
  }
  return kExitFailure;
}

// Flag values captured before they are layered over the config file.
struct Overrides {
  std::string config_path;
  std::optional<std::string> data_path;
  std::optional<int> groups, scale, min_class_size;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::string> optimizer;
  std::optional<double> lr, momentum, beta1, beta2, gamma, gamma_floor;
  std::optional<double> clip_norm, sigma, delta;
  std::optional<std::vector<std::string>> optimizers;
  std::optional<std::vector<double>> lr_grid, gamma_grid;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_steps;
  std::optional<double> epsilon_cap;
  std::optional<std::int64_t> plateau_window;
  std::optional<double> plateau_tolerance;
  std::optional<std::int64_t> metrics_every, diagnostics_every;
  std::optional<std::vector<std::int64_t>> cosine_steps;
  std::optional<std::int64_t> cosine_samples;
  std::optional<double> kappa;
  std::optional<std::string> out;
  bool no_save_model = false;
  bool no_wall_time = false;
};

void AddDataFlags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--data", o.data_path, "Load the dataset from this file");
  cmd->add_option("--groups", o.groups, "Number of frequency groups G");
  cmd->add_option("--scale", o.scale, "Scale exponent S");
  cmd->add_option("--min-class-size", o.min_class_size, "Minimum class size");
  cmd->add_option("--data-seed", o.data_seed, "Dataset generator seed");
}

void AddRunFlags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON config file")
      ->check(CLI::ExistingFile);
  AddDataFlags(cmd, o);
  cmd->add_option("--optimizer", o.optimizer,
                  "dp-gd | dp-gdm | dp-adam | dp-adambc");
  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--momentum", o.momentum, "DP-GDM momentum");
  cmd->add_option("--beta1", o.beta1, "Adam beta1");
  cmd->add_option("--beta2", o.beta2, "Adam beta2");
  cmd->add_option("--gamma", o.gamma, "DP-Adam stability constant");
  cmd->add_option("--gamma-floor", o.gamma_floor, "DP-AdamBC floor");
  cmd->add_option("--clip-norm", o.clip_norm, "Per-sample clipping norm C");
  cmd->add_option("--sigma", o.sigma, "Noise multiplier");
  cmd->add_option("--delta", o.delta, "Target delta");
  cmd->add_option("--optimizers", o.optimizers, "Optimizers to sweep");
  cmd->add_option("--lr-grid", o.lr_grid, "Learning-rate grid");
  cmd->add_option("--gamma-grid", o.gamma_grid, "gamma / gamma' grid");
  cmd->add_option("--jobs", o.jobs, "Parallel sweep runs");
  cmd->add_option("--seed", o.seed, "Run seed (noise and sampling)");
  cmd->add_option("--max-steps", o.max_steps, "Step limit");
  cmd->add_option("--epsilon-cap", o.epsilon_cap,
                  "Stop at the last step with epsilon <= cap");
  cmd->add_option("--plateau-window", o.plateau_window,
                  "Plateau window (steps)");
  cmd->add_option("--plateau-tol", o.plateau_tolerance,
                  "Relative plateau tolerance");
  cmd->add_option("--metrics-every", o.metrics_every, "Metrics cadence");
  cmd->add_option("--diagnostics-every", o.diagnostics_every,
                  "Diagnostics cadence (0 = off)");
  cmd->add_option("--cosine-steps", o.cosine_steps,
                  "Steps at which cosine matrices are written");
  cmd->add_option("--cosine-samples", o.cosine_samples,
                  "Per-sample gradients in the cosine analysis");
  cmd->add_option("--kappa", o.kappa, "Noise-floor multiple for bias report");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_flag("--no-save-model", o.no_save_model, "Do not write model.bin");
  cmd->add_flag("--no-wall-time", o.no_wall_time,
                "Write wall_ms as 0 for byte-reproducible metrics");
}

template <typename T>
void Set(const std::optional<T>& v, T& field) {
  if (v) field = *v;
}

dpimb::RunConfig Resolve(const Overrides& o) {
  dpimb::RunConfig c;
  if (!o.config_path.empty()) c = dpimb::LoadRunConfig(o.config_path);
  Set(o.data_path, c.data_path);
  Set(o.groups, c.data_spec.num_groups);
  Set(o.scale, c.data_spec.scale_exponent);
  Set(o.min_class_size, c.data_spec.min_class_size);
  Set(o.data_seed, c.data_spec.seed);
  if (o.optimizer) c.optimizer = dpimb::ParseOptimizerKind(*o.optimizer);
  Set(o.lr, c.hp.lr);
  Set(o.momentum, c.hp.momentum);
  Set(o.beta1, c.hp.beta1);
  Set(o.beta2, c.hp.beta2);
  Set(o.gamma, c.hp.gamma);
  Set(o.gamma_floor, c.hp.gamma_floor);
  Set(o.clip_norm, c.clip_norm);
  Set(o.sigma, c.noise_multiplier);
  Set(o.delta, c.delta);
  if (o.optimizers) {
    c.sweep_optimizers.clear();
    for (const auto& name : *o.optimizers) {
      c.sweep_optimizers.push_back(dpimb::ParseOptimizerKind(name));
    }
  }
  Set(o.lr_grid, c.lr_grid);
  Set(o.gamma_grid, c.gamma_grid);
  Set(o.jobs, c.jobs);
  Set(o.seed, c.seed);
  Set(o.max_steps, c.max_steps);
  Set(o.epsilon_cap, c.epsilon_cap);
  Set(o.plateau_window, c.plateau_window);
  Set(o.plateau_tolerance, c.plateau_tolerance);
  Set(o.metrics_every, c.metrics_every);
  Set(o.diagnostics_every, c.diagnostics_every);
  Set(o.cosine_steps, c.cosine_steps);
  Set(o.cosine_samples, c.cosine_samples);
  Set(o.kappa, c.bias_kappa);
  Set(o.out, c.output_dir);
  if (o.no_save_model) c.save_model = false;
  if (o.no_wall_time) c.record_wall_time = false;
  c.Validate();
  return c;
}

void PrintSweep(const dpimb::SweepResult& sweep) {
  for (const auto& [kind, index] : sweep.best) {
    const dpimb::SweepRun& run = sweep.runs[index];
    std::printf(
        "best %-10s lr=%-8g gamma=%-8s final_loss=%.6f eps=%.3f\n",
        std::string(dpimb::OptimizerName(kind)).c_str(), run.lr,
        run.gamma ? dpimb::internal::GridLabel(*run.gamma).c_str() : "-",
        run.result.final_loss, run.result.final_epsilon);
  }
}

void LogProgress(const dpimb::SweepRun& run, std::size_t done,
                 std::size_t total) {
  const std::string gamma =
      run.gamma ? " gamma=" + dpimb::internal::GridLabel(*run.gamma) : "";
  std::fprintf(stderr, "[%zu/%zu] %s lr=%g%s -> %s loss=%.5f steps=%lld\n",
               done, total, std::string(dpimb::OptimizerName(run.kind)).c_str(),
               run.lr, gamma.c_str(), run.result.stop_reason.c_str(),
               run.result.final_loss, static_cast<long long>(run.result.steps));
}

int RunGenData(const Overrides& o, const std::string& out_path) {
  dpimb::GeneratorSpec spec;
  Set(o.groups, spec.num_groups);
  Set(o.scale, spec.scale_exponent);
  Set(o.min_class_size, spec.min_class_size);
  Set(o.data_seed, spec.seed);
  const dpimb::SyntheticData data = dpimb::Generate(spec);
  dpimb::Save(data, out_path);
  const nlohmann::json report = {
      {"path", out_path},
      {"n", data.dataset.n()},
      {"d", data.dataset.d()},
      {"c", data.dataset.c()},
      {"groups", dpimb::GroupTableToJson(data.groups)}};
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

int RunDiagnose(const Overrides& o, const std::string& weights_path) {
  const dpimb::RunConfig cfg = Resolve(o);
  const dpimb::SyntheticData data = dpimb::ResolveData(cfg);
  const dpimb::Dataset& ds = data.dataset;
  dpimb::Matrix weights = dpimb::Matrix::Zero(ds.c(), ds.d());
  if (!weights_path.empty()) weights = dpimb::LoadWeights(weights_path);
  const dpimb::Matrix logits = dpimb::Logits(weights, ds);
  const dpimb::GradFactors factors = dpimb::ComputeGradFactors(logits, ds);
  const auto count = static_cast<std::size_t>(
      std::min<std::int64_t>(cfg.cosine_samples, ds.n()));
  const dpimb::CosineResult cosine = dpimb::CosineMatrix(
      factors, dpimb::StratifiedSample(ds.labels, ds.c(), count, cfg.seed));

  dpimb::DiagnosticsReport report;
  report.cosine = dpimb::SummarizeCosine(cosine);
  report.cosine_samples = static_cast<std::int64_t>(cosine.sample_ids.size());
  report.zero_norm_rows = cosine.zero_norm_rows;
  const dpimb::Vector norms = dpimb::ClassBlockNorms(factors);
  report.class_block_norms.assign(norms.begin(), norms.end());
  const dpimb::ProbabilityEstimate p = dpimb::EstimateP(logits, ds.labels);
  report.p_hat = p.overall;
  report.p_hat_per_class = p.per_class;
  const double noise_std = dpimb::MakeDpConfig(cfg, ds).NoiseStddev();
  report.noise_floor = noise_std * noise_std;
  report.kappa = cfg.bias_kappa;

  const nlohmann::json j = dpimb::ToJson(report);
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    const std::filesystem::path dir = cfg.output_dir;
    dpimb::WriteCosineMatrix(cosine, 0, dir / "cosine");
    std::ofstream(dir / "diagnostics.json") << j.dump(2) << "\n";
  }
  std::printf(
      "within-class mean cosine %.6f, cross-class %.6f over %lld samples\n",
      report.cosine->within_class_mean, report.cosine->cross_class_mean,
      static_cast<long long>(report.cosine_samples));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Differentially private optimizers under heavy-tail class "
      "imbalance"};
  app.require_subcommand(1);

  Overrides gen_o, train_o, sweep_o, appc_o, diag_o;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  AddDataFlags(gen, gen_o);
  gen->add_option("--out", gen_out, "Output file")->required();

  auto* train = app.add_subcommand("train", "Run one training job");
  AddRunFlags(train, train_o);
  auto* sweep = app.add_subcommand("sweep", "Grid search over lr and gamma");
  AddRunFlags(sweep, sweep_o);
  auto* appc = app.add_subcommand(
      "appendix-c",
      "Sweeps over the (C, sigma) grid at a common final epsilon");
  AddRunFlags(appc, appc_o);
  std::string weights_path;
  auto* diag = app.add_subcommand("diagnose", "Diagnostics at fixed weights");
  AddRunFlags(diag, diag_o);
  diag->add_option("--weights", weights_path, "model.bin (default: zeros)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return RunGenData(gen_o, gen_out);
    if (*train) {
      const dpimb::RunConfig cfg = Resolve(train_o);
      const dpimb::SyntheticData data = dpimb::ResolveData(cfg);
      const dpimb::RunResult r = dpimb::Train(cfg, data);
      std::cout << dpimb::SummaryJson(r).dump(2) << "\n";
      return kExitOk;
    }
    if (*sweep) {
      dpimb::RunConfig cfg = Resolve(sweep_o);
      cfg.save_model = false;
      const dpimb::SyntheticData data = dpimb::ResolveData(cfg);
      PrintSweep(dpimb::Sweep(cfg, data, LogProgress));
      return kExitOk;
    }
    if (*appc) {
      dpimb::RunConfig cfg = Resolve(appc_o);
      cfg.save_model = false;
      const dpimb::SyntheticData data = dpimb::ResolveData(cfg);
      const dpimb::DpGridResult r = dpimb::DpGridSuite(cfg, data, LogProgress);
      for (std::size_t i = 0; i < r.sweeps.size(); ++i) {
        std::printf("C=%g sigma=%g T=%lld\n", r.settings[i].clip_norm,
                    r.settings[i].noise_multiplier,
                    static_cast<long long>(r.step_budgets[i]));
        PrintSweep(r.sweeps[i]);
      }
      return kExitOk;
    }
    if (*diag) return RunDiagnose(diag_o, weights_path);
  } catch (const dpimb::Error& e) {
    std::fprintf(stderr, "dpimb: %s\n", e.what());
    return ExitCodeFor(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "dpimb: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dpimb: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
