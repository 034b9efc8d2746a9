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

#include "dpimb/harness/train.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace dpimb {
namespace {

using ::dpimb::testing::ScratchDir;

std::string ReadFile(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

RunConfig SmallConfig() {
  RunConfig c;
  c.data_spec.num_groups = 3;
  c.data_spec.scale_exponent = 5;
  c.data_spec.seed = 1;
  c.optimizer = OptimizerKind::kDpAdamBc;
  c.hp.lr = 0.01;
  c.max_steps = 40;
  c.metrics_every = 5;
  c.diagnostics_every = 10;
  c.cosine_steps = {0, 20};
  c.cosine_samples = 30;
  c.record_wall_time = false;
  return c;
}

TEST(MetricsCsvTest, HeaderSchema) {
  EXPECT_EQ(MetricsCsvHeader(2),
            "step,epsilon,loss_overall,acc_overall,loss_g0,loss_g1,acc_g0,"
            "acc_g1,clipped_frac,wall_ms");
}

TEST(MetricsCsvTest, LineFormat) {
  MetricsRow r;
  r.step = 3;
  r.epsilon = 0.5;
  r.loss_overall = 1.25;
  r.acc_overall = 0.75;
  r.loss_group = {1.0, 2.0};
  r.acc_group = {1.0, 0.0};
  r.clipped_frac = 1.0;
  EXPECT_EQ(MetricsCsvLine(r), "3,0.5,1.25,0.75,1,2,1,0,1,0.000");
}

TEST(TrainTest, ZeroStepsEmitsOnlyInitialRow) {
  RunConfig c = SmallConfig();
  c.max_steps = 0;
  const SyntheticData data = Generate(c.data_spec);
  const RunResult r = Train(c, data);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].step, 0);
  EXPECT_EQ(r.steps, 0);
  EXPECT_NEAR(r.rows[0].loss_overall, std::log(7.0), 1e-12);
  EXPECT_TRUE(r.weights.isZero(0.0));
  EXPECT_EQ(r.stop_reason, "max_steps");
}

TEST(TrainTest, NoiselessGradientDescentNeverIncreasesLoss) {
  RunConfig c = SmallConfig();
  c.optimizer = OptimizerKind::kDpGd;
  c.noise_multiplier = 0.0;
  c.clip_norm = 1e12;
  c.hp.lr = 0.05;
  c.max_steps = 50;
  c.metrics_every = 1;
  c.plateau_window = 1000;
  const SyntheticData data = Generate(c.data_spec);
  const RunResult r = Train(c, data);
  ASSERT_EQ(r.rows.size(), 51u);
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    EXPECT_LE(r.rows[i].loss_overall, r.rows[i - 1].loss_overall);
    EXPECT_EQ(r.rows[i].clipped_frac, 0.0);
  }
  EXPECT_LT(r.rows.back().loss_overall, r.rows.front().loss_overall);
}

TEST(TrainTest, RowInvariants) {
  const RunConfig c = SmallConfig();
  const SyntheticData data = Generate(c.data_spec);
  const RunResult r = Train(c, data);
  ASSERT_FALSE(r.diverged);
  ASSERT_EQ(r.rows.size(), 9u);
  std::vector<double> group_n(data.stats.num_groups, 0.0);
  for (std::uint32_t y : data.dataset.labels) {
    group_n[data.stats.group_of_class[y]] += 1.0;
  }
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const MetricsRow& row = r.rows[i];
    if (i > 0) {
      EXPECT_GT(row.step, r.rows[i - 1].step);
      EXPECT_GE(row.epsilon, r.rows[i - 1].epsilon);
    }
    double weighted = 0.0;
    for (int g = 0; g < data.stats.num_groups; ++g) {
      weighted += group_n[g] * row.loss_group[g];
      EXPECT_GE(row.acc_group[g], 0.0);
      EXPECT_LE(row.acc_group[g], 1.0);
    }
    EXPECT_NEAR(weighted / static_cast<double>(data.dataset.n()),
                row.loss_overall, 1e-9);
    EXPECT_TRUE(std::isfinite(row.loss_overall));
    EXPECT_GE(row.loss_overall, 0.0);
  }
  EXPECT_EQ(r.rows.back().epsilon, r.final_epsilon);
  EXPECT_EQ(r.final_epsilon, RdpAccountant(10.0).EpsilonAt(40, 1e-5).epsilon);
}

TEST(TrainTest, OutputsAreByteReproducible) {
  const SyntheticData data = Generate(SmallConfig().data_spec);
  RunConfig a = SmallConfig();
  a.output_dir = ScratchDir("train_repro_a").string();
  RunConfig b = a;
  b.output_dir = ScratchDir("train_repro_b").string();
  const RunResult ra = Train(a, data);
  const RunResult rb = Train(b, data);
  for (const char* name :
       {"metrics.csv", "diagnostics.jsonl", "cosine_step0.bin",
        "cosine_step20.bin", "model.bin"}) {
    EXPECT_EQ(ReadFile(std::filesystem::path(a.output_dir) / name),
              ReadFile(std::filesystem::path(b.output_dir) / name))
        << name;
  }
  EXPECT_EQ(ra.weights, rb.weights);
}

TEST(TrainTest, OutputFilesHaveExpectedShape) {
  RunConfig c = SmallConfig();
  c.output_dir = ScratchDir("train_files").string();
  const SyntheticData data = Generate(c.data_spec);
  const RunResult r = Train(c, data);
  const std::filesystem::path dir = c.output_dir;
  const std::vector<std::string> csv = Lines(ReadFile(dir / "metrics.csv"));
  ASSERT_EQ(csv.size(), r.rows.size() + 1);
  EXPECT_EQ(csv[0], MetricsCsvHeader(3));
  EXPECT_EQ(csv[1], MetricsCsvLine(r.rows[0]));

  const std::vector<std::string> diag =
      Lines(ReadFile(dir / "diagnostics.jsonl"));
  ASSERT_EQ(diag.size(), 5u);  // steps 0, 10, 20, 30, 40
  const nlohmann::json first = nlohmann::json::parse(diag[0]);
  EXPECT_EQ(first["step"], 0);
  EXPECT_TRUE(first["dominated_fraction"].is_null());
  EXPECT_EQ(first["cosine"]["samples"], 30);
  EXPECT_NEAR(first["p_hat"].get<double>(), 1.0 / 7.0, 1e-12);
  const nlohmann::json later = nlohmann::json::parse(diag[1]);
  EXPECT_TRUE(later["dominated_fraction"].is_number());

  const nlohmann::json summary =
      nlohmann::json::parse(std::ifstream(dir / "summary.json"));
  EXPECT_EQ(summary["steps"], 40);
  EXPECT_EQ(summary["config"], ToJson(c));
  EXPECT_TRUE(std::filesystem::exists(dir / "cosine_step20.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "cosine_step1000.json"));
  EXPECT_EQ(LoadWeights(dir / "model.bin"), r.weights);
}

TEST(TrainTest, WallTimeRecordedWhenEnabled) {
  RunConfig c = SmallConfig();
  c.record_wall_time = true;
  c.max_steps = 5;
  c.metrics_every = 5;
  const RunResult r = Train(c, Generate(c.data_spec));
  EXPECT_GT(r.rows.back().wall_ms, 0.0);
}

TEST(TrainTest, PlateauStopsRun) {
  RunConfig c = SmallConfig();
  c.optimizer = OptimizerKind::kDpGd;
  c.hp.lr = 1e-12;  // loss never moves by the relative tolerance
  c.max_steps = 1000;
  c.plateau_window = 7;
  const RunResult r = Train(c, Generate(c.data_spec));
  EXPECT_EQ(r.stop_reason, "plateau");
  EXPECT_EQ(r.steps, 7);
  EXPECT_EQ(r.rows.back().step, 7);
}

TEST(TrainTest, EpsilonCapLimitsSteps) {
  RunConfig c = SmallConfig();
  c.noise_multiplier = 1.0;
  c.epsilon_cap = 20.0;
  c.max_steps = 1000;
  c.diagnostics_every = 0;
  c.cosine_steps.clear();
  const RunResult r = Train(c, Generate(c.data_spec));
  EXPECT_EQ(r.steps, CalibrateSteps(1.0, 1e-5, 20.0));
  EXPECT_LE(r.final_epsilon, 20.0);
}

TEST(TrainTest, DivergenceIsReportedNotThrown) {
  RunConfig c = SmallConfig();
  c.optimizer = OptimizerKind::kDpGd;
  c.hp.lr = 1e308;
  c.max_steps = 500;
  c.plateau_window = 1000;
  const RunResult r = Train(c, Generate(c.data_spec));
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.stop_reason, "diverged");
  EXPECT_TRUE(std::isinf(r.final_loss));
}

TEST(WeightsFileTest, RoundTripAndErrors) {
  const auto dir = ScratchDir("weights");
  const Matrix w = testing::RandomMatrix(3, 5, 1.0, 1);
  SaveWeights(w, dir / "w.bin");
  EXPECT_EQ(LoadWeights(dir / "w.bin"), w);
  const std::string bytes = ReadFile(dir / "w.bin");
  std::ofstream(dir / "cut.bin", std::ios::binary)
      << bytes.substr(0, bytes.size() - 1);
  try {
    LoadWeights(dir / "cut.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTruncated);
  }
}

}  // namespace
}  // namespace dpimb
