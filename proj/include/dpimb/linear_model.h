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

// Softmax linear classifier z = W x with cross-entropy loss.
//
// The per-sample gradient of the loss with respect to W is the rank-1 matrix
// a_i x_i^T with a_i = softmax(W x_i) - e_{y_i}. Everything downstream
// (clipping, aggregation, cosine analysis) works on the factor rows a_i and
// never materializes the n dense c x d gradients.
//
// Reductions run in a fixed order: matrix products go through Eigen's
// single-threaded GEMM and the per-sample loops accumulate in index order, so
// results are reproducible bit-for-bit on a given build.

#ifndef DPIMB_LINEAR_MODEL_H_
#define DPIMB_LINEAR_MODEL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dpimb/common.h"

namespace dpimb {

struct Dataset {
  Matrix features;  // n x d, entries in [0, 1]
  std::vector<std::uint32_t> labels;
  int num_classes = 0;

  Index n() const { return features.rows(); }
  Index d() const { return features.cols(); }
  int c() const { return num_classes; }
};

inline void ValidateLabels(std::span<const std::uint32_t> labels,
                           int num_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= static_cast<std::uint32_t>(num_classes)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "label " + std::to_string(labels[i]) + " at sample " +
                      std::to_string(i) +
                      " is not < c=" + std::to_string(num_classes));
    }
  }
}

// Checks every Dataset invariant; throws Error on the first violation.
inline void ValidateDataset(const Dataset& data) {
  if (data.n() <= 0 || data.d() <= 0 || data.num_classes <= 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "dataset dimensions must be positive, got n=" +
                    std::to_string(data.n()) +
                    " d=" + std::to_string(data.d()) +
                    " c=" + std::to_string(data.num_classes));
  }
  if (static_cast<Index>(data.labels.size()) != data.n()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "features have " + std::to_string(data.n()) +
                    " rows but there are " +
                    std::to_string(data.labels.size()) + " labels");
  }
  ValidateLabels(data.labels, data.num_classes);
  std::vector<bool> seen(data.num_classes, false);
  for (std::uint32_t y : data.labels) seen[y] = true;
  for (int k = 0; k < data.num_classes; ++k) {
    if (!seen[k]) {
      throw Error(ErrorCode::kInvalidArgument,
                  "class " + std::to_string(k) + " has no samples");
    }
  }
  if (data.features.size() > 0 &&
      (data.features.minCoeff() < 0.0 || data.features.maxCoeff() > 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "feature entries must lie in [0, 1]");
  }
}

struct ClassStats {
  std::vector<std::int64_t> counts;  // n_k
  std::vector<double> frequencies;   // pi_k = n_k / n
  std::vector<int> group_of_class;
  int num_groups = 1;
};

// group_of_class may be empty, in which case every class is put in group 0.
inline ClassStats ComputeClassStats(std::span<const std::uint32_t> labels,
                                    int num_classes,
                                    std::vector<int> group_of_class = {}) {
  ValidateLabels(labels, num_classes);
  ClassStats stats;
  stats.counts.assign(num_classes, 0);
  for (std::uint32_t y : labels) ++stats.counts[y];
  const double n = static_cast<double>(labels.size());
  stats.frequencies.resize(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    stats.frequencies[k] = static_cast<double>(stats.counts[k]) / n;
  }
  if (group_of_class.empty()) group_of_class.assign(num_classes, 0);
  if (static_cast<int>(group_of_class.size()) != num_classes) {
    throw Error(ErrorCode::kDimensionMismatch,
                "group map has " + std::to_string(group_of_class.size()) +
                    " entries for c=" + std::to_string(num_classes));
  }
  int max_group = 0;
  for (int g : group_of_class) {
    if (g < 0) {
      throw Error(ErrorCode::kInvalidArgument, "negative group id");
    }
    max_group = std::max(max_group, g);
  }
  stats.group_of_class = std::move(group_of_class);
  stats.num_groups = max_group + 1;
  return stats;
}

// Z = X W^T, one row of logits per sample.
inline Matrix Logits(const Matrix& weights, const Dataset& data) {
  if (weights.cols() != data.d() || weights.rows() != data.c()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "weights " + ShapeString(weights.rows(), weights.cols()) +
                    " do not match features " +
                    ShapeString(data.n(), data.d()) +
                    " with c=" + std::to_string(data.c()));
  }
  Matrix z(data.n(), data.c());
  z.noalias() = data.features * weights.transpose();
  return z;
}

namespace internal {

inline void CheckLogitShape(const Matrix& logits,
                            std::span<const std::uint32_t> labels) {
  if (logits.rows() != static_cast<Index>(labels.size())) {
    throw Error(ErrorCode::kDimensionMismatch,
                "logits " + ShapeString(logits.rows(), logits.cols()) + " vs " +
                    std::to_string(labels.size()) + " labels");
  }
  ValidateLabels(labels, static_cast<int>(logits.cols()));
}

}  // namespace internal

// Row-wise softmax with max subtraction.
// Probabilities below the smallest normal double are flushed to zero.
inline Matrix Softmax(const Matrix& logits) {
  constexpr double kTiny = std::numeric_limits<double>::min();
  Matrix probs(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double shift = logits.row(i).maxCoeff();
    probs.row(i) = (logits.row(i).array() - shift).exp().matrix();
    probs.row(i) /= probs.row(i).sum();
    probs.row(i) = (probs.row(i).array() < kTiny).select(0.0, probs.row(i));
  }
  return probs;
}

// l_i = logsumexp(z_i) - z_{i, y_i}.
inline Vector PerSampleLosses(const Matrix& logits,
                              std::span<const std::uint32_t> labels) {
  internal::CheckLogitShape(logits, labels);
  Vector losses(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double shift = logits.row(i).maxCoeff();
    const double lse =
        shift + std::log((logits.row(i).array() - shift).exp().sum());
    losses[i] = lse - logits(i, labels[i]);
  }
  return losses;
}

inline double MeanLoss(const Matrix& logits,
                       std::span<const std::uint32_t> labels) {
  return PerSampleLosses(logits, labels).mean();
}

// Rank-1 factorization of the per-sample gradients: row i of `errors` is a_i.
struct GradFactors {
  Matrix errors;  // n x c
  const Dataset* data = nullptr;
};

inline GradFactors ComputeGradFactors(const Matrix& logits,
                                      const Dataset& data) {
  internal::CheckLogitShape(logits, data.labels);
  if (logits.cols() != data.c()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "logits have " + std::to_string(logits.cols()) +
                    " columns for c=" + std::to_string(data.c()));
  }
  GradFactors factors{Softmax(logits), &data};
  for (Index i = 0; i < data.n(); ++i) factors.errors(i, data.labels[i]) -= 1.0;
  return factors;
}

// Gradient of the mean loss: (1/n) A^T X.
inline Matrix FullGradient(const GradFactors& factors) {
  const Dataset& data = *factors.data;
  Matrix grad(factors.errors.cols(), data.d());
  grad.noalias() = factors.errors.transpose() * data.features;
  grad /= static_cast<double>(data.n());
  return grad;
}

inline constexpr Index kDefaultHessianDimCap = 512;

// Exact diagonal Hessian block for row w_k of W:
//   (1/n) sum_i s_ik (1 - s_ik) x_i x_i^T.
inline Matrix HessianBlock(const Matrix& logits, const Dataset& data, int k,
                           Index max_dim = kDefaultHessianDimCap) {
  if (data.d() > max_dim) {
    throw Error(ErrorCode::kResourceLimit,
                "hessian block of dimension " + std::to_string(data.d()) +
                    " exceeds cap " + std::to_string(max_dim));
  }
  if (k < 0 || k >= data.c()) {
    throw Error(ErrorCode::kInvalidArgument,
                "class id " + std::to_string(k) + " out of range");
  }
  internal::CheckLogitShape(logits, data.labels);
  const Matrix probs = Softmax(logits);
  const Vector curvature =
      (probs.col(k).array() * (1.0 - probs.col(k).array())).matrix();
  Matrix block(data.d(), data.d());
  block.noalias() =
      data.features.transpose() * curvature.asDiagonal() * data.features;
  block /= static_cast<double>(data.n());
  return 0.5 * (block + block.transpose());
}

// Argmax per row; ties go to the smallest class id.
inline std::vector<std::uint32_t> Predict(const Matrix& logits) {
  std::vector<std::uint32_t> out(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

// Per-group entries are NaN for a group without samples.
struct GroupedMetric {
  double overall = 0.0;
  std::vector<double> per_group;
};

namespace internal {

inline GroupedMetric GroupMeans(const Vector& values,
                                std::span<const std::uint32_t> labels,
                                const ClassStats& stats) {
  std::vector<double> sums(stats.num_groups, 0.0);
  std::vector<std::int64_t> counts(stats.num_groups, 0);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int g = stats.group_of_class[labels[i]];
    sums[g] += values[static_cast<Index>(i)];
    ++counts[g];
    total += values[static_cast<Index>(i)];
  }
  GroupedMetric out;
  out.overall = total / static_cast<double>(labels.size());
  out.per_group.resize(stats.num_groups);
  for (int g = 0; g < stats.num_groups; ++g) {
    out.per_group[g] = counts[g] > 0 ? sums[g] / static_cast<double>(counts[g])
                                     : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace internal

inline GroupedMetric Accuracy(const Matrix& logits,
                              std::span<const std::uint32_t> labels,
                              const ClassStats& stats) {
  internal::CheckLogitShape(logits, labels);
  const std::vector<std::uint32_t> predicted = Predict(logits);
  Vector hits(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    hits[i] = predicted[i] == labels[i] ? 1.0 : 0.0;
  }
  return internal::GroupMeans(hits, labels, stats);
}

inline GroupedMetric GroupedLoss(const Vector& losses,
                                 std::span<const std::uint32_t> labels,
                                 const ClassStats& stats) {
  return internal::GroupMeans(losses, labels, stats);
}

}  // namespace dpimb

#endif  // DPIMB_LINEAR_MODEL_H_
