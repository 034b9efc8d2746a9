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

#ifndef DPIMB_HARNESS_RUN_CONFIG_H_
#define DPIMB_HARNESS_RUN_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dpimb/common.h"
#include "dpimb/dp_core.h"
#include "dpimb/optimizers.h"
#include "dpimb/synth_data.h"
#include "json.hpp"

namespace dpimb {

// Half powers of ten from 1e-4 to 1.
inline std::vector<double> DefaultLrGrid() {
  return {1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0};
}

inline std::vector<double> DefaultGammaGrid() {
  return {1e-10, 1e-8, 1e-6, 1e-4};
}

struct RunConfig {
  // Dataset: loaded from `data_path` when set, otherwise generated.
  std::string data_path;
  GeneratorSpec data_spec;

  OptimizerKind optimizer = OptimizerKind::kDpAdamBc;
  Hyperparameters hp;

  double clip_norm = 1.0;
  double noise_multiplier = 10.0;
  double delta = 1e-5;

  // Sweep grid. gamma_grid tunes gamma for DP-Adam and gamma' for DP-AdamBC.
  std::vector<OptimizerKind> sweep_optimizers{kAllOptimizers.begin(),
                                              kAllOptimizers.end()};
  std::vector<double> lr_grid = DefaultLrGrid();
  std::vector<double> gamma_grid = DefaultGammaGrid();
  int jobs = 1;

  std::uint64_t seed = 0;
  std::int64_t max_steps = 1000;
  // When > 0, max_steps is lowered to the last step with epsilon <= cap.
  double epsilon_cap = 0.0;
  std::int64_t plateau_window = 200;
  double plateau_tolerance = 1e-4;

  std::int64_t metrics_every = 10;
  std::int64_t diagnostics_every = 50;  // 0 disables periodic diagnostics
  std::vector<std::int64_t> cosine_steps = {0, 100, 1000};
  std::int64_t cosine_samples = 520;
  double bias_kappa = 2.0;

  std::string output_dir;
  bool save_model = true;
  // Off makes metrics files byte-reproducible (wall_ms is written as 0).
  bool record_wall_time = true;

  void Validate() const {
    hp.Validate();
    DpConfig{clip_norm, noise_multiplier, 1.0, delta}.Validate();
    ValidateSpec(data_spec);
    if (lr_grid.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "lr_grid must be nonempty");
    }
    for (double lr : lr_grid) {
      if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw Error(ErrorCode::kInvalidArgument,
                    "lr_grid entries must be positive");
      }
    }
    if (gamma_grid.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "gamma_grid must be nonempty");
    }
    for (double g : gamma_grid) {
      if (!(g > 0.0)) {
        throw Error(ErrorCode::kInvalidArgument,
                    "gamma_grid entries must be positive");
      }
    }
    if (sweep_optimizers.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "no optimizers to sweep");
    }
    if (jobs < 1) throw Error(ErrorCode::kInvalidArgument, "jobs must be >= 1");
    if (max_steps < 0) {
      throw Error(ErrorCode::kInvalidArgument, "max_steps must be >= 0");
    }
    if (!(epsilon_cap >= 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "epsilon_cap must be >= 0");
    }
    if (plateau_window < 1) {
      throw Error(ErrorCode::kInvalidArgument, "plateau window must be >= 1");
    }
    if (!(plateau_tolerance > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "plateau tolerance must be > 0");
    }
    if (metrics_every < 1) {
      throw Error(ErrorCode::kInvalidArgument, "metrics_every must be >= 1");
    }
    if (diagnostics_every < 0 || cosine_samples < 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "diagnostics settings must be >= 0");
    }
  }
};

inline nlohmann::json ToJson(const RunConfig& c) {
  nlohmann::json optimizers = nlohmann::json::array();
  for (OptimizerKind k : c.sweep_optimizers) {
    optimizers.push_back(std::string(OptimizerName(k)));
  }
  return {
      {"data",
       {{"path", c.data_path},
        {"groups", c.data_spec.num_groups},
        {"scale_exponent", c.data_spec.scale_exponent},
        {"min_class_size", c.data_spec.min_class_size},
        {"seed", c.data_spec.seed}}},
      {"optimizer",
       {{"kind", std::string(OptimizerName(c.optimizer))},
        {"lr", c.hp.lr},
        {"momentum", c.hp.momentum},
        {"beta1", c.hp.beta1},
        {"beta2", c.hp.beta2},
        {"gamma", c.hp.gamma},
        {"gamma_floor", c.hp.gamma_floor}}},
      {"dp",
       {{"clip_norm", c.clip_norm},
        {"noise_multiplier", c.noise_multiplier},
        {"delta", c.delta}}},
      {"sweep",
       {{"optimizers", optimizers},
        {"lr_grid", c.lr_grid},
        {"gamma_grid", c.gamma_grid},
        {"jobs", c.jobs}}},
      {"seed", c.seed},
      {"max_steps", c.max_steps},
      {"epsilon_cap", c.epsilon_cap},
      {"plateau",
       {{"window", c.plateau_window}, {"tolerance", c.plateau_tolerance}}},
      {"metrics_every", c.metrics_every},
      {"diagnostics",
       {{"every", c.diagnostics_every},
        {"cosine_steps", c.cosine_steps},
        {"cosine_samples", c.cosine_samples},
        {"kappa", c.bias_kappa}}},
      {"output_dir", c.output_dir},
      {"save_model", c.save_model},
      {"record_wall_time", c.record_wall_time},
  };
}

namespace internal {

inline void RejectUnknownKeys(const nlohmann::json& obj,
                              const std::set<std::string>& known,
                              const std::string& where) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::kInvalidArgument, where + " must be a JSON object");
  }
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "unknown config key '" + where + key + "'");
    }
  }
}

template <typename T>
void Assign(const nlohmann::json& obj, const char* key, T& field) {
  if (obj.contains(key)) field = obj.at(key).get<T>();
}

}  // namespace internal

// Fields absent from `j` keep their values from `base`.
inline RunConfig RunConfigFromJson(const nlohmann::json& j,
                                   RunConfig base = {}) {
  using internal::Assign;
  RunConfig c = std::move(base);
  try {
    internal::RejectUnknownKeys(
        j,
        {"data", "optimizer", "dp", "sweep", "seed", "max_steps", "epsilon_cap",
         "plateau", "metrics_every", "diagnostics", "output_dir", "save_model",
         "record_wall_time"},
        "");
    if (j.contains("data")) {
      const auto& d = j.at("data");
      internal::RejectUnknownKeys(
          d, {"path", "groups", "scale_exponent", "min_class_size", "seed"},
          "data.");
      Assign(d, "path", c.data_path);
      Assign(d, "groups", c.data_spec.num_groups);
      Assign(d, "scale_exponent", c.data_spec.scale_exponent);
      Assign(d, "min_class_size", c.data_spec.min_class_size);
      Assign(d, "seed", c.data_spec.seed);
    }
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      internal::RejectUnknownKeys(
          o,
          {"kind", "lr", "momentum", "beta1", "beta2", "gamma", "gamma_floor"},
          "optimizer.");
      if (o.contains("kind")) {
        c.optimizer = ParseOptimizerKind(o.at("kind").get<std::string>());
      }
      Assign(o, "lr", c.hp.lr);
      Assign(o, "momentum", c.hp.momentum);
      Assign(o, "beta1", c.hp.beta1);
      Assign(o, "beta2", c.hp.beta2);
      Assign(o, "gamma", c.hp.gamma);
      Assign(o, "gamma_floor", c.hp.gamma_floor);
    }
    if (j.contains("dp")) {
      const auto& d = j.at("dp");
      internal::RejectUnknownKeys(d, {"clip_norm", "noise_multiplier", "delta"},
                                  "dp.");
      Assign(d, "clip_norm", c.clip_norm);
      Assign(d, "noise_multiplier", c.noise_multiplier);
      Assign(d, "delta", c.delta);
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      internal::RejectUnknownKeys(
          s, {"optimizers", "lr_grid", "gamma_grid", "jobs"}, "sweep.");
      if (s.contains("optimizers")) {
        c.sweep_optimizers.clear();
        for (const auto& name : s.at("optimizers")) {
          c.sweep_optimizers.push_back(
              ParseOptimizerKind(name.get<std::string>()));
        }
      }
      Assign(s, "lr_grid", c.lr_grid);
      Assign(s, "gamma_grid", c.gamma_grid);
      Assign(s, "jobs", c.jobs);
    }
    Assign(j, "seed", c.seed);
    Assign(j, "max_steps", c.max_steps);
    Assign(j, "epsilon_cap", c.epsilon_cap);
    if (j.contains("plateau")) {
      const auto& p = j.at("plateau");
      internal::RejectUnknownKeys(p, {"window", "tolerance"}, "plateau.");
      Assign(p, "window", c.plateau_window);
      Assign(p, "tolerance", c.plateau_tolerance);
    }
    Assign(j, "metrics_every", c.metrics_every);
    if (j.contains("diagnostics")) {
      const auto& d = j.at("diagnostics");
      internal::RejectUnknownKeys(
          d, {"every", "cosine_steps", "cosine_samples", "kappa"},
          "diagnostics.");
      Assign(d, "every", c.diagnostics_every);
      Assign(d, "cosine_steps", c.cosine_steps);
      Assign(d, "cosine_samples", c.cosine_samples);
      Assign(d, "kappa", c.bias_kappa);
    }
    Assign(j, "output_dir", c.output_dir);
    Assign(j, "save_model", c.save_model);
    Assign(j, "record_wall_time", c.record_wall_time);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig LoadRunConfig(const std::filesystem::path& path,
                               RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfigFromJson(j, std::move(base));
}

inline SyntheticData ResolveData(const RunConfig& config) {
  if (!config.data_path.empty()) return Load(config.data_path);
  return Generate(config.data_spec);
}

inline DpConfig MakeDpConfig(const RunConfig& config, const Dataset& data) {
  DpConfig dp{config.clip_norm, config.noise_multiplier,
              static_cast<double>(data.n()), config.delta};
  dp.Validate();
  return dp;
}

}  // namespace dpimb

#endif  // DPIMB_HARNESS_RUN_CONFIG_H_
