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

// Read-only probes over training state: per-sample gradient cosine structure,
// class-block gradient norms, the noise floor of the Adam second moment, and
// the mean correct-class probability.

#ifndef DPIMB_DIAGNOSTICS_H_
#define DPIMB_DIAGNOSTICS_H_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpimb/common.h"
#include "dpimb/dp_core.h"
#include "dpimb/linear_model.h"
#include "dpimb/optimizers.h"
#include "json.hpp"

namespace dpimb {

inline constexpr std::size_t kDefaultCosineCap = 1024;
inline constexpr std::size_t kDefaultCosineSamples = 520;

// Picks `count` distinct sample ids, visiting classes round-robin (in a
// freshly shuffled class order each round) so that rare classes are
// represented. Returned ids are sorted.
inline std::vector<Index> StratifiedSample(
    std::span<const std::uint32_t> labels, int num_classes, std::size_t count,
    std::uint64_t seed) {
  if (count > labels.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "cannot sample " + std::to_string(count) + " of " +
                    std::to_string(labels.size()) + " samples");
  }
  std::mt19937_64 rng = MakeRng(seed, RngStream::kSampling);
  std::vector<std::vector<Index>> pools(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pools[labels[i]].push_back(static_cast<Index>(i));
  }
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<int> order(num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Index> picked;
  picked.reserve(count);
  for (std::size_t round = 0; picked.size() < count; ++round) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int k : order) {
      if (picked.size() == count) break;
      if (round < pools[k].size()) picked.push_back(pools[k][round]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

struct CosineResult {
  Matrix similarity;              // rows/cols in `sample_ids` order
  std::vector<Index> sample_ids;  // sorted by (class, id)
  std::vector<std::uint32_t> labels;
  std::int64_t zero_norm_rows = 0;
};

// Pairwise cosine similarity of the flattened per-sample gradients a_i x_i^T,
// using <a_i x_i^T, a_j x_j^T> = <a_i, a_j><x_i, x_j>. The feature Gram of
// the sample is fixed for a dataset, so it is computed once at construction.
class CosineProbe {
 public:
  CosineProbe(const Dataset& data, std::vector<Index> sample_ids,
              std::size_t cap = kDefaultCosineCap)
      : data_(&data) {
    if (sample_ids.size() > cap) {
      throw Error(ErrorCode::kResourceLimit,
                  std::to_string(sample_ids.size()) +
                      " samples exceed the cosine cap of " +
                      std::to_string(cap));
    }
    for (Index id : sample_ids) {
      if (id < 0 || id >= data.n()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "sample id " + std::to_string(id) + " out of range");
      }
    }
    std::stable_sort(sample_ids.begin(), sample_ids.end(),
                     [&](Index a, Index b) {
                       return data.labels[a] != data.labels[b]
                                  ? data.labels[a] < data.labels[b]
                                  : a < b;
                     });
    ids_ = std::move(sample_ids);
    const Index m = static_cast<Index>(ids_.size());
    Matrix xs(m, data.d());
    for (Index r = 0; r < m; ++r) xs.row(r) = data.features.row(ids_[r]);
    feature_gram_.resize(m, m);
    feature_gram_.noalias() = xs * xs.transpose();
    feature_norms_ = xs.rowwise().norm();
  }

  const std::vector<Index>& sample_ids() const { return ids_; }

  CosineResult Compute(const GradFactors& factors) const {
    const Index m = static_cast<Index>(ids_.size());
    Matrix as(m, factors.errors.cols());
    for (Index r = 0; r < m; ++r) as.row(r) = factors.errors.row(ids_[r]);
    Matrix error_gram(m, m);
    error_gram.noalias() = as * as.transpose();
    const Vector norms =
        (as.rowwise().norm().array() * feature_norms_.array()).matrix();

    CosineResult out;
    out.sample_ids = ids_;
    out.labels.reserve(m);
    for (Index id : ids_) out.labels.push_back(data_->labels[id]);
    out.similarity.resize(m, m);
    for (Index i = 0; i < m; ++i) {
      if (norms[i] == 0.0) ++out.zero_norm_rows;
      for (Index j = i; j < m; ++j) {
        const double denom = norms[i] * norms[j];
        const double value =
            denom > 0.0 ? error_gram(i, j) * feature_gram_(i, j) / denom : 0.0;
        out.similarity(i, j) = value;
        out.similarity(j, i) = value;
      }
    }
    return out;
  }

 private:
  const Dataset* data_;
  std::vector<Index> ids_;
  Matrix feature_gram_;
  Vector feature_norms_;
};

inline CosineResult CosineMatrix(const GradFactors& factors,
                                 std::vector<Index> sample_ids,
                                 std::size_t cap = kDefaultCosineCap) {
  return CosineProbe(*factors.data, std::move(sample_ids), cap)
      .Compute(factors);
}

struct CosineSummary {
  double within_class_mean = 0.0;  // off-diagonal same-class pairs
  double cross_class_mean = 0.0;
  std::int64_t within_pairs = 0;
  std::int64_t cross_pairs = 0;
};

// Zero-norm rows are left out of both means.
inline CosineSummary SummarizeCosine(const CosineResult& result) {
  const Index m = result.similarity.rows();
  std::vector<bool> zero(m, false);
  for (Index i = 0; i < m; ++i) zero[i] = result.similarity(i, i) == 0.0;
  CosineSummary s;
  double within = 0.0, cross = 0.0;
  for (Index i = 0; i < m; ++i) {
    if (zero[i]) continue;
    for (Index j = i + 1; j < m; ++j) {
      if (zero[j]) continue;
      if (result.labels[i] == result.labels[j]) {
        within += result.similarity(i, j);
        ++s.within_pairs;
      } else {
        cross += result.similarity(i, j);
        ++s.cross_pairs;
      }
    }
  }
  if (s.within_pairs > 0) s.within_class_mean = within / s.within_pairs;
  if (s.cross_pairs > 0) s.cross_class_mean = cross / s.cross_pairs;
  return s;
}

// ||grad_{w_k} L|| for every class k.
inline Vector ClassBlockNorms(const GradFactors& factors) {
  return FullGradient(factors).rowwise().norm();
}

struct SecondMomentBias {
  double noise_floor = 0.0;  // (sigma C / L)^2
  double kappa = 2.0;
  double dominated_fraction = 0.0;
};

// Fraction of bias-corrected second-moment coordinates with
// v^ <= kappa * (sigma C / L)^2. Without noise nothing is dominated.
inline SecondMomentBias SecondMomentBiasReport(const OptState& state,
                                               const DpConfig& config,
                                               double kappa = 2.0) {
  const Matrix v_hat = CorrectedSecondMoment(state);
  const double std_dev = config.NoiseStddev();
  SecondMomentBias report;
  report.noise_floor = std_dev * std_dev;
  report.kappa = kappa;
  if (report.noise_floor > 0.0 && v_hat.size() > 0) {
    const double threshold = kappa * report.noise_floor;
    const auto dominated = (v_hat.array() <= threshold).count();
    report.dominated_fraction =
        static_cast<double>(dominated) / static_cast<double>(v_hat.size());
  }
  return report;
}

// Mean correct-class softmax probability, overall and per class.
struct ProbabilityEstimate {
  double overall = 0.0;
  std::vector<double> per_class;
};

inline ProbabilityEstimate EstimateP(const Matrix& logits,
                                     std::span<const std::uint32_t> labels) {
  internal::CheckLogitShape(logits, labels);
  const Matrix probs = Softmax(logits);
  const int c = static_cast<int>(logits.cols());
  std::vector<double> sums(c, 0.0);
  std::vector<std::int64_t> counts(c, 0);
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const double p = probs(i, labels[i]);
    total += p;
    sums[labels[i]] += p;
    ++counts[labels[i]];
  }
  ProbabilityEstimate out;
  out.overall = total / static_cast<double>(logits.rows());
  out.per_class.resize(c);
  for (int k = 0; k < c; ++k) {
    out.per_class[k] = counts[k] > 0 ? sums[k] / counts[k] : 0.0;
  }
  return out;
}

// Spearman rank correlation with average ranks for ties.
inline double SpearmanCorrelation(std::span<const double> a,
                                  std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "spearman needs two equal-length series of length >= 2");
  }
  auto ranks = [](std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    for (std::size_t s = 0; s < idx.size();) {
      std::size_t e = s;
      while (e + 1 < idx.size() && x[idx[e + 1]] == x[idx[s]]) ++e;
      const double avg = 0.5 * static_cast<double>(s + e) + 1.0;
      for (std::size_t k = s; k <= e; ++k) r[idx[k]] = avg;
      s = e + 1;
    }
    return Eigen::Map<const Vector>(r.data(), static_cast<Index>(r.size()))
        .eval();
  };
  const Vector ra = ranks(a);
  const Vector rb = ranks(b);
  const Vector ca = ra.array() - ra.mean();
  const Vector cb = rb.array() - rb.mean();
  const double denom = ca.norm() * cb.norm();
  return denom > 0.0 ? ca.dot(cb) / denom : 0.0;
}

struct DiagnosticsReport {
  std::int64_t step = 0;
  std::optional<CosineSummary> cosine;
  std::int64_t cosine_samples = 0;
  std::int64_t zero_norm_rows = 0;
  std::vector<double> class_block_norms;
  double p_hat = 0.0;
  std::vector<double> p_hat_per_class;
  double noise_floor = 0.0;
  // Absent for kinds without a second moment and before the first step.
  std::optional<double> dominated_fraction;
  double kappa = 2.0;
};

inline nlohmann::json ToJson(const DiagnosticsReport& r) {
  nlohmann::json j = {{"step", r.step},
                      {"class_block_norms", r.class_block_norms},
                      {"p_hat", r.p_hat},
                      {"p_hat_per_class", r.p_hat_per_class},
                      {"noise_floor", r.noise_floor},
                      {"kappa", r.kappa},
                      {"dominated_fraction", nullptr},
                      {"cosine", nullptr}};
  if (r.dominated_fraction) j["dominated_fraction"] = *r.dominated_fraction;
  if (r.cosine) {
    j["cosine"] = {{"within_class_mean", r.cosine->within_class_mean},
                   {"cross_class_mean", r.cosine->cross_class_mean},
                   {"within_pairs", r.cosine->within_pairs},
                   {"cross_pairs", r.cosine->cross_pairs},
                   {"samples", r.cosine_samples},
                   {"zero_norm_rows", r.zero_norm_rows}};
  }
  return j;
}

// Writes <prefix>.bin (m*m little-endian float64, row-major) and the index
// <prefix>.json describing it. Returns the index path.
inline std::filesystem::path WriteCosineMatrix(
    const CosineResult& result, std::int64_t step,
    const std::filesystem::path& prefix) {
  std::filesystem::path bin = prefix;
  bin += ".bin";
  std::filesystem::path index = prefix;
  index += ".json";
  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + bin.string());
    const Index m = result.similarity.rows();
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < m; ++j) {
        std::uint64_t bits =
            std::bit_cast<std::uint64_t>(result.similarity(i, j));
        if constexpr (std::endian::native == std::endian::big) {
          bits = __builtin_bswap64(bits);
        }
        out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
      }
    }
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + bin.string());
  }
  const CosineSummary summary = SummarizeCosine(result);
  nlohmann::json j = {{"step", step},
                      {"size", result.similarity.rows()},
                      {"dtype", "float64-le"},
                      {"matrix_path", bin.filename().string()},
                      {"sample_ids", result.sample_ids},
                      {"labels", result.labels},
                      {"zero_norm_rows", result.zero_norm_rows},
                      {"within_class_mean", summary.within_class_mean},
                      {"cross_class_mean", summary.cross_class_mean}};
  std::ofstream out(index, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + index.string());
  out << j.dump(2) << "\n";
  return index;
}

}  // namespace dpimb

#endif  // DPIMB_DIAGNOSTICS_H_
