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

#ifndef DPIMB_COMMON_H_
#define DPIMB_COMMON_H_

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dpimb {

// Row-major so that per-sample rows x_i and a_i are contiguous.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kResourceLimit,
  kIo,
  kVersionMismatch,
  kTruncated,
  kIntegrity,
  kChecksum,
  kAllDiverged,
};

inline const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid argument";
    case ErrorCode::kDimensionMismatch:
      return "dimension mismatch";
    case ErrorCode::kResourceLimit:
      return "resource limit";
    case ErrorCode::kIo:
      return "io error";
    case ErrorCode::kVersionMismatch:
      return "version mismatch";
    case ErrorCode::kTruncated:
      return "truncated";
    case ErrorCode::kIntegrity:
      return "integrity error";
    case ErrorCode::kChecksum:
      return "checksum failure";
    case ErrorCode::kAllDiverged:
      return "all runs diverged";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string ShapeString(Index rows, Index cols) {
  return "(" + std::to_string(rows) + " x " + std::to_string(cols) + ")";
}

// Independent random streams derived from one user seed. Each consumer of
// randomness owns a stream id, so e.g. changing how many features are drawn
// never perturbs the DP noise sequence.
enum class RngStream : std::uint32_t {
  kFeatures = 1,
  kShuffle = 2,
  kNoise = 3,
  kSampling = 4,
};

inline std::mt19937_64 MakeRng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace dpimb

#endif  // DPIMB_COMMON_H_
