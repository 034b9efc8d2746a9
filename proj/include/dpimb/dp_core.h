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

// Per-sample clipping and noisy aggregation of the softmax-regression gradient.

#ifndef DPIMB_DP_CORE_H_
#define DPIMB_DP_CORE_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dpimb/common.h"
#include "dpimb/linear_model.h"

namespace dpimb {

struct DpConfig {
  double clip_norm = 1.0;          // C
  double noise_multiplier = 10.0;  // sigma
  double denominator = 1.0;        // L; the harness sets L = n
  double delta = 1e-5;

  void Validate() const {
    if (!(clip_norm > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "clip norm must be > 0");
    }
    if (!(noise_multiplier >= 0.0) || !std::isfinite(noise_multiplier)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "noise multiplier must be finite and >= 0");
    }
    if (!(denominator >= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "denominator L must be >= 1");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "delta must lie in (0, 1)");
    }
  }

  // Standard deviation sigma*C/L of each coordinate of the noise in g~.
  // Zero whenever sigma is zero, also for an infinite clip norm.
  double NoiseStddev() const {
    if (noise_multiplier == 0.0) return 0.0;
    return noise_multiplier * clip_norm / denominator;
  }
};

struct NormQuantiles {
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
};

inline NormQuantiles ComputeQuantiles(std::vector<double> values) {
  NormQuantiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  auto at = [&](double p) {
    const auto idx = static_cast<std::size_t>(
        std::lround(p * static_cast<double>(values.size() - 1)));
    return values[idx];
  };
  q.min = values.front();
  q.q25 = at(0.25);
  q.median = at(0.5);
  q.q75 = at(0.75);
  q.max = values.back();
  return q;
}

struct ClipStats {
  double fraction_clipped = 0.0;
  NormQuantiles pre;
  NormQuantiles post;
};

// ||a_i x_i^T||_F = ||a_i|| ||x_i||.
inline Vector PerSampleGradientNorms(const GradFactors& factors) {
  const Dataset& data = *factors.data;
  return (factors.errors.rowwise().norm().array() *
          data.features.rowwise().norm().array())
      .matrix();
}

struct ClipResult {
  GradFactors clipped;
  ClipStats stats;
};

// Scales row i by 1 / max(1, r_i / C). Rows already within the bound are
// left untouched bit for bit.
inline ClipResult ClipFactors(const GradFactors& factors, double clip_norm) {
  if (!(clip_norm > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "clip norm must be > 0");
  }
  const Vector norms = PerSampleGradientNorms(factors);
  ClipResult result{factors, {}};
  std::vector<double> pre(norms.begin(), norms.end());
  std::vector<double> post(pre);
  std::int64_t clipped = 0;
  for (Index i = 0; i < norms.size(); ++i) {
    if (norms[i] > clip_norm) {
      const double scale = 1.0 / (norms[i] / clip_norm);
      result.clipped.errors.row(i) *= scale;
      post[i] = norms[i] * scale;
      ++clipped;
    }
  }
  result.stats.fraction_clipped =
      norms.size() > 0
          ? static_cast<double>(clipped) / static_cast<double>(norms.size())
          : 0.0;
  result.stats.pre = ComputeQuantiles(std::move(pre));
  result.stats.post = ComputeQuantiles(std::move(post));
  return result;
}

// Seedable standard-normal source: std::mt19937_64 feeding
// std::normal_distribution<double> (Marsaglia polar method in libstdc++).
class GaussianNoise {
 public:
  explicit GaussianNoise(std::uint64_t seed)
      : engine_(MakeRng(seed, RngStream::kNoise)) {}

  double Next() { return normal_(engine_); }

  // Overwrites `out` with i.i.d. N(0, stddev^2) entries in storage order.
  void Fill(Matrix& out, double stddev) {
    double* p = out.data();
    for (Index i = 0; i < out.size(); ++i) p[i] = stddev * normal_(engine_);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

struct PrivateGradient {
  Matrix value;  // c x d
  std::int64_t step = 0;
};

// g~ = (1/L) (sum_i a'_i x_i^T + N(0, sigma^2 C^2 I)). With sigma = 0 no
// random numbers are consumed.
inline PrivateGradient Privatize(const GradFactors& clipped,
                                 const DpConfig& config, GaussianNoise& noise,
                                 std::int64_t step = 0) {
  config.Validate();
  const Dataset& data = *clipped.data;
  PrivateGradient out;
  out.step = step;
  out.value.resize(clipped.errors.cols(), data.d());
  out.value.noalias() = clipped.errors.transpose() * data.features;
  if (config.noise_multiplier > 0.0) {
    Matrix z(out.value.rows(), out.value.cols());
    noise.Fill(z, config.noise_multiplier * config.clip_norm);
    out.value += z;
  }
  out.value /= config.denominator;
  return out;
}

}  // namespace dpimb

#endif  // DPIMB_DP_CORE_H_
