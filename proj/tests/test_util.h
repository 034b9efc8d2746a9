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

// Small random instances and dense brute-force references shared by tests.

#ifndef DPIMB_TESTS_TEST_UTIL_H_
#define DPIMB_TESTS_TEST_UTIL_H_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dpimb/common.h"
#include "dpimb/linear_model.h"

namespace dpimb::testing {

// Random dataset where every class in [0, c) occurs; n >= c.
inline Dataset RandomDataset(Index n, Index d, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Dataset data;
  data.num_classes = c;
  data.features.resize(n, d);
  for (Index i = 0; i < data.features.size(); ++i) {
    data.features.data()[i] = unif(rng);
  }
  data.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    data.labels[i] = i < c ? static_cast<std::uint32_t>(i)
                           : static_cast<std::uint32_t>(rng() % c);
  }
  return data;
}

inline Matrix RandomMatrix(Index rows, Index cols, double scale,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Straightforward per-sample loss, no stabilization beyond long double.
inline double NaiveLoss(const Matrix& w, const Dataset& data, Index i) {
  long double sum = 0.0L;
  std::vector<long double> z(data.c());
  for (int k = 0; k < data.c(); ++k) {
    long double acc = 0.0L;
    for (Index j = 0; j < data.d(); ++j) {
      acc += static_cast<long double>(w(k, j)) * data.features(i, j);
    }
    z[k] = acc;
    sum += std::exp(acc);
  }
  return static_cast<double>(std::log(sum) - z[data.labels[i]]);
}

inline double NaiveMeanLoss(const Matrix& w, const Dataset& data) {
  double total = 0.0;
  for (Index i = 0; i < data.n(); ++i) total += NaiveLoss(w, data, i);
  return total / static_cast<double>(data.n());
}

// Dense c x d per-sample gradient built by explicit loops from the softmax.
inline Matrix DenseSampleGradient(const Matrix& w, const Dataset& data,
                                  Index i) {
  std::vector<double> z(data.c());
  double max_z = -INFINITY;
  for (int k = 0; k < data.c(); ++k) {
    double acc = 0.0;
    for (Index j = 0; j < data.d(); ++j) acc += w(k, j) * data.features(i, j);
    z[k] = acc;
    max_z = std::max(max_z, acc);
  }
  double norm = 0.0;
  for (double& v : z) {
    v = std::exp(v - max_z);
    norm += v;
  }
  Matrix g(data.c(), data.d());
  for (int k = 0; k < data.c(); ++k) {
    const double a =
        z[k] / norm - (k == static_cast<int>(data.labels[i]) ? 1.0 : 0.0);
    for (Index j = 0; j < data.d(); ++j) g(k, j) = a * data.features(i, j);
  }
  return g;
}

inline double FrobeniusDot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (Index i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

inline double MaxAbsDiff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path ScratchDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dpimb_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dpimb::testing

#endif  // DPIMB_TESTS_TEST_UTIL_H_
