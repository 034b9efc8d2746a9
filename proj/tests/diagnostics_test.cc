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

#include "dpimb/diagnostics.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace dpimb {
namespace {

using ::dpimb::testing::DenseSampleGradient;
using ::dpimb::testing::FrobeniusDot;
using ::dpimb::testing::MaxAbsDiff;
using ::dpimb::testing::RandomDataset;
using ::dpimb::testing::RandomMatrix;
using ::dpimb::testing::ScratchDir;

std::vector<Index> AllIds(Index n) {
  std::vector<Index> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

TEST(StratifiedSampleTest, CoversEveryClassWhenCountAllows) {
  const Dataset data = RandomDataset(200, 1, 17, 3);
  const std::vector<Index> ids = StratifiedSample(data.labels, 17, 40, 9);
  ASSERT_EQ(ids.size(), 40u);
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
  EXPECT_EQ(std::set<Index>(ids.begin(), ids.end()).size(), 40u);
  std::set<std::uint32_t> classes;
  for (Index id : ids) classes.insert(data.labels[id]);
  EXPECT_EQ(classes.size(), 17u);
}

TEST(StratifiedSampleTest, BalancesRoundRobin) {
  // Class 0 has 100 samples, class 1 has 4.
  std::vector<std::uint32_t> labels(104, 0);
  for (int i = 0; i < 4; ++i) labels[i * 10] = 1;
  const std::vector<Index> ids = StratifiedSample(labels, 2, 8, 1);
  int ones = 0;
  for (Index id : ids) ones += labels[id] == 1;
  EXPECT_EQ(ones, 4);
}

TEST(StratifiedSampleTest, DeterministicAndBounded) {
  const Dataset data = RandomDataset(50, 1, 5, 2);
  EXPECT_EQ(StratifiedSample(data.labels, 5, 20, 4),
            StratifiedSample(data.labels, 5, 20, 4));
  EXPECT_EQ(StratifiedSample(data.labels, 5, 50, 4), AllIds(50));
  EXPECT_THROW(StratifiedSample(data.labels, 5, 51, 4), Error);
}

TEST(CosineTest, MatchesDenseCosineOfFlattenedGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset data = RandomDataset(25, 6, 4, seed + 10);
    const Matrix w = RandomMatrix(4, 6, 1.5, seed + 20);
    const GradFactors f = ComputeGradFactors(Logits(w, data), data);
    const CosineResult r = CosineMatrix(f, AllIds(25));
    ASSERT_EQ(r.similarity.rows(), 25);
    for (Index i = 0; i < 25; ++i) {
      const Matrix gi = DenseSampleGradient(w, data, r.sample_ids[i]);
      for (Index j = 0; j < 25; ++j) {
        const Matrix gj = DenseSampleGradient(w, data, r.sample_ids[j]);
        const double dense = FrobeniusDot(gi, gj) / (gi.norm() * gj.norm());
        EXPECT_NEAR(r.similarity(i, j), dense, 1e-10);
      }
    }
  }
}

TEST(CosineTest, UnitDiagonalExactSymmetryAndRange) {
  const Dataset data = RandomDataset(40, 5, 6, 7);
  const GradFactors f =
      ComputeGradFactors(Logits(RandomMatrix(6, 5, 2.0, 8), data), data);
  const CosineResult r = CosineMatrix(f, AllIds(40));
  EXPECT_EQ(MaxAbsDiff(r.similarity, r.similarity.transpose()), 0.0);
  for (Index i = 0; i < 40; ++i) EXPECT_NEAR(r.similarity(i, i), 1.0, 1e-12);
  EXPECT_LE(r.similarity.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  EXPECT_EQ(r.zero_norm_rows, 0);
}

TEST(CosineTest, RowsAreSortedByClass) {
  const Dataset data = RandomDataset(30, 3, 5, 1);
  const GradFactors f = ComputeGradFactors(Matrix::Zero(30, 5), data);
  const CosineResult r = CosineMatrix(f, {29, 3, 17, 8, 0, 12});
  EXPECT_TRUE(std::is_sorted(r.labels.begin(), r.labels.end()));
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    EXPECT_EQ(r.labels[i], data.labels[r.sample_ids[i]]);
  }
}

TEST(CosineTest, ZeroNormRowsAreZeroAndFlagged) {
  Dataset data = RandomDataset(4, 3, 2, 5);
  data.features.row(2).setZero();
  const GradFactors f = ComputeGradFactors(Matrix::Zero(4, 2), data);
  const CosineResult r = CosineMatrix(f, AllIds(4));
  EXPECT_EQ(r.zero_norm_rows, 1);
  Index zero_row = -1;
  for (Index i = 0; i < 4; ++i) {
    if (r.sample_ids[i] == 2) zero_row = i;
  }
  EXPECT_TRUE(r.similarity.row(zero_row).isZero(0.0));
  EXPECT_TRUE(r.similarity.col(zero_row).isZero(0.0));
}

TEST(CosineTest, CapAndRangeChecks) {
  const Dataset data = RandomDataset(10, 2, 2, 5);
  const GradFactors f = ComputeGradFactors(Matrix::Zero(10, 2), data);
  try {
    CosineMatrix(f, AllIds(10), 9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kResourceLimit);
  }
  EXPECT_THROW(CosineMatrix(f, {0, 10}), Error);
}

TEST(CosineTest, SummarySeparatesWithinAndCross) {
  CosineResult r;
  r.labels = {0, 0, 1};
  r.similarity = Matrix{{1.0, 0.8, -0.1}, {0.8, 1.0, 0.3}, {-0.1, 0.3, 1.0}};
  const CosineSummary s = SummarizeCosine(r);
  EXPECT_EQ(s.within_pairs, 1);
  EXPECT_EQ(s.cross_pairs, 2);
  EXPECT_DOUBLE_EQ(s.within_class_mean, 0.8);
  EXPECT_DOUBLE_EQ(s.cross_class_mean, 0.1);
}

TEST(ClassBlockNormsTest, UniformPointClosedForm) {
  const Dataset data = RandomDataset(60, 7, 5, 13);
  const ClassStats stats = ComputeClassStats(data.labels, 5);
  const Vector norms =
      ClassBlockNorms(ComputeGradFactors(Matrix::Zero(60, 5), data));
  const Vector mean_all = data.features.colwise().mean();
  for (int k = 0; k < 5; ++k) {
    Vector class_mean = Vector::Zero(7);
    for (Index i = 0; i < 60; ++i) {
      if (static_cast<int>(data.labels[i]) == k) {
        class_mean += data.features.row(i).transpose();
      }
    }
    class_mean /= static_cast<double>(stats.counts[k]);
    EXPECT_NEAR(norms[k],
                (mean_all / 5.0 - stats.frequencies[k] * class_mean).norm(),
                1e-10);
  }
}

TEST(ClassBlockNormsTest, SingleClassHasNoGradient) {
  const Dataset data = RandomDataset(6, 3, 1, 2);
  const Vector norms = ClassBlockNorms(
      ComputeGradFactors(Logits(RandomMatrix(1, 3, 1.0, 1), data), data));
  ASSERT_EQ(norms.size(), 1);
  EXPECT_EQ(norms[0], 0.0);
}

TEST(SecondMomentBiasTest, NoNoiseMeansNoDomination) {
  OptState s = MakeOptimizer(OptimizerKind::kDpAdam, Hyperparameters{}, 2, 2);
  Matrix w = Matrix::Zero(2, 2);
  DpAdamStep(s, w, {Matrix::Constant(2, 2, 1e-9), 1});
  const SecondMomentBias r =
      SecondMomentBiasReport(s, {1.0, 0.0, 8192.0, 1e-5});
  EXPECT_EQ(r.noise_floor, 0.0);
  EXPECT_EQ(r.dominated_fraction, 0.0);
}

TEST(SecondMomentBiasTest, FloorArithmetic) {
  OptState s = MakeOptimizer(OptimizerKind::kDpAdamBc, Hyperparameters{}, 1, 1);
  s.t = 1;
  const SecondMomentBias r =
      SecondMomentBiasReport(s, {1.0, 10.0, 8192.0, 1e-5});
  EXPECT_NEAR(r.noise_floor, 1.4901e-6, 1e-10);
  EXPECT_DOUBLE_EQ(r.noise_floor, (10.0 / 8192.0) * (10.0 / 8192.0));
}

TEST(SecondMomentBiasTest, ConstructedBelowFloorIsFullyDominated) {
  const DpConfig cfg{1.0, 10.0, 8192.0, 1e-5};
  const double floor = cfg.NoiseStddev() * cfg.NoiseStddev();
  OptState s = MakeOptimizer(OptimizerKind::kDpAdam, Hyperparameters{}, 3, 4);
  s.t = 5;
  s.v =
      Matrix::Constant(3, 4, floor / 10.0 * (1.0 - std::pow(s.hp.beta2, 5.0)));
  EXPECT_DOUBLE_EQ(SecondMomentBiasReport(s, cfg).dominated_fraction, 1.0);
  s.v(0, 0) = 1.0;
  EXPECT_DOUBLE_EQ(SecondMomentBiasReport(s, cfg).dominated_fraction,
                   11.0 / 12.0);
}

TEST(SecondMomentBiasTest, RejectsKindWithoutSecondMoment) {
  const OptState s =
      MakeOptimizer(OptimizerKind::kDpGdm, Hyperparameters{}, 1, 1);
  EXPECT_THROW(SecondMomentBiasReport(s, DpConfig{}), Error);
}

TEST(EstimatePTest, UniformLogits) {
  const ProbabilityEstimate p =
      EstimateP(Matrix::Zero(4, 8), std::vector<std::uint32_t>{0, 1, 7, 7});
  EXPECT_DOUBLE_EQ(p.overall, 0.125);
  EXPECT_DOUBLE_EQ(p.per_class[7], 0.125);
  EXPECT_EQ(p.per_class[3], 0.0);
}

TEST(EstimatePTest, ConfidentLogits) {
  Matrix z = Matrix::Zero(2, 3);
  z(0, 1) = 100.0;
  z(1, 2) = 100.0;
  EXPECT_NEAR(EstimateP(z, std::vector<std::uint32_t>{1, 2}).overall, 1.0,
              1e-40);
}

TEST(EstimatePTest, TwoSampleArithmetic) {
  // Sample 0: softmax(ln 3, 0) = (3/4, 1/4), label 0 -> 0.75.
  // Sample 1: softmax(0, ln 4) = (1/5, 4/5), label 0 -> 0.2.
  const Matrix z{{std::log(3.0), 0.0}, {0.0, std::log(4.0)}};
  const ProbabilityEstimate p = EstimateP(z, std::vector<std::uint32_t>{0, 0});
  EXPECT_NEAR(p.overall, 0.475, 1e-15);
  EXPECT_NEAR(p.per_class[0], 0.475, 1e-15);
}

TEST(SpearmanTest, KnownValues) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> up = {10, 20, 25, 100, 1000};
  const std::vector<double> down = {5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(SpearmanCorrelation(a, up), 1.0);
  EXPECT_DOUBLE_EQ(SpearmanCorrelation(a, down), -1.0);
  // Ranks of b with ties: (1.5, 1.5, 3, 4); textbook value 0.9486832980505138.
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> b = {7, 7, 8, 9};
  EXPECT_NEAR(SpearmanCorrelation(x, b), 3.0 / std::sqrt(10.0), 1e-15);
  EXPECT_THROW(SpearmanCorrelation(x, a), Error);
}

TEST(ReportTest, JsonFields) {
  DiagnosticsReport r;
  r.step = 7;
  r.p_hat = 0.25;
  r.noise_floor = 1e-6;
  const nlohmann::json without = ToJson(r);
  EXPECT_TRUE(without["cosine"].is_null());
  EXPECT_TRUE(without["dominated_fraction"].is_null());
  r.cosine = CosineSummary{0.7, 0.01, 10, 20};
  r.dominated_fraction = 0.9;
  const nlohmann::json with = ToJson(r);
  EXPECT_EQ(with["step"], 7);
  EXPECT_EQ(with["cosine"]["within_class_mean"], 0.7);
  EXPECT_EQ(with["dominated_fraction"], 0.9);
}

TEST(CosineFileTest, BinaryAndIndexRoundTrip) {
  const auto dir = ScratchDir("cosine_file");
  const Dataset data = RandomDataset(12, 3, 3, 4);
  const GradFactors f =
      ComputeGradFactors(Logits(RandomMatrix(3, 3, 1.0, 2), data), data);
  const CosineResult r = CosineMatrix(f, AllIds(12));
  const auto index_path = WriteCosineMatrix(r, 100, dir / "cosine_step100");
  const nlohmann::json index = nlohmann::json::parse(std::ifstream(index_path));
  EXPECT_EQ(index["step"], 100);
  EXPECT_EQ(index["size"], 12);
  EXPECT_EQ(index["dtype"], "float64-le");
  EXPECT_EQ(index["matrix_path"], "cosine_step100.bin");
  EXPECT_EQ(index["sample_ids"].get<std::vector<Index>>(), r.sample_ids);
  EXPECT_EQ(index["labels"].get<std::vector<std::uint32_t>>(), r.labels);

  std::ifstream bin(dir / "cosine_step100.bin", std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(bin),
                          std::istreambuf_iterator<char>()};
  ASSERT_EQ(bytes.size(), 12u * 12u * 8u);
  for (Index i = 0; i < 144; ++i) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) {
      bits = (bits << 8) | static_cast<unsigned char>(bytes[8 * i + b]);
    }
    EXPECT_EQ(std::bit_cast<double>(bits), r.similarity.data()[i]);
  }
}

}  // namespace
}  // namespace dpimb
