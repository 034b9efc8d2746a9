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

// Renyi-DP accounting for T full-batch releases of the Gaussian mechanism.
//
// Each step releases a sum of clipped gradients (L2 sensitivity C) plus
// N(0, sigma^2 C^2), which is (alpha, alpha / (2 sigma^2))-RDP. There is no
// subsampling, so composition over T steps is linear in T. The conversion to
// (epsilon, delta) is eps = min_alpha rdp(alpha) + log(1/delta) / (alpha - 1)
// over a fixed order grid.

#ifndef DPIMB_RDP_ACCOUNTANT_H_
#define DPIMB_RDP_ACCOUNTANT_H_

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dpimb/common.h"

namespace dpimb {

// Version 1 of the order grid: 64 log-spaced orders from 1.25 to 512.
inline constexpr int kRdpOrderGridVersion = 1;

inline std::vector<double> DefaultRdpOrders() {
  constexpr int kCount = 64;
  constexpr double kLo = 1.25;
  constexpr double kHi = 512.0;
  std::vector<double> orders(kCount);
  for (int i = 0; i < kCount; ++i) {
    orders[i] =
        kLo * std::pow(kHi / kLo, static_cast<double>(i) / (kCount - 1));
  }
  orders.back() = kHi;
  return orders;
}

struct EpsilonResult {
  double epsilon = 0.0;
  double order = 0.0;  // minimizing alpha
};

class RdpAccountant {
 public:
  explicit RdpAccountant(double noise_multiplier,
                         std::vector<double> orders = DefaultRdpOrders())
      : sigma_(noise_multiplier), orders_(std::move(orders)) {
    if (!(sigma_ >= 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "noise multiplier must be >= 0");
    }
    if (orders_.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "empty order grid");
    }
    for (double a : orders_) {
      if (!(a > 1.0)) {
        throw Error(ErrorCode::kInvalidArgument,
                    "RDP orders must be > 1, got " + std::to_string(a));
      }
    }
  }

  void Step(std::int64_t count = 1) {
    if (count < 0) {
      throw Error(ErrorCode::kInvalidArgument, "negative step count");
    }
    steps_ += count;
  }
  std::int64_t steps() const { return steps_; }
  double noise_multiplier() const { return sigma_; }
  const std::vector<double>& orders() const { return orders_; }

  // rdp(alpha) = T alpha / (2 sigma^2); +inf for every order when sigma = 0
  // and T > 0.
  std::vector<double> RdpAt(std::int64_t steps) const {
    std::vector<double> rdp(orders_.size());
    for (std::size_t i = 0; i < orders_.size(); ++i) {
      if (steps == 0) {
        rdp[i] = 0.0;
      } else if (sigma_ == 0.0) {
        rdp[i] = std::numeric_limits<double>::infinity();
      } else {
        rdp[i] =
            static_cast<double>(steps) * orders_[i] / (2.0 * sigma_ * sigma_);
      }
    }
    return rdp;
  }

  EpsilonResult EpsilonAt(std::int64_t steps, double delta) const {
    if (!(delta > 0.0 && delta < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "delta must lie in (0, 1)");
    }
    const std::vector<double> rdp = RdpAt(steps);
    const double log_inv_delta = std::log(1.0 / delta);
    EpsilonResult best{std::numeric_limits<double>::infinity(), orders_.back()};
    for (std::size_t i = 0; i < orders_.size(); ++i) {
      const double eps = rdp[i] + log_inv_delta / (orders_[i] - 1.0);
      if (eps < best.epsilon) best = {eps, orders_[i]};
    }
    return best;
  }

  EpsilonResult Epsilon(double delta) const { return EpsilonAt(steps_, delta); }

 private:
  double sigma_;
  std::vector<double> orders_;
  std::int64_t steps_ = 0;
};

// Largest T with epsilon(T) <= target_epsilon. Epsilon is nondecreasing in T,
// so this is a bisection over [0, upper].
inline std::int64_t CalibrateSteps(
    double noise_multiplier, double delta, double target_epsilon,
    std::vector<double> orders = DefaultRdpOrders()) {
  const RdpAccountant accountant(noise_multiplier, std::move(orders));
  if (accountant.EpsilonAt(0, delta).epsilon > target_epsilon) {
    throw Error(ErrorCode::kInvalidArgument,
                "target epsilon " + std::to_string(target_epsilon) +
                    " is below the zero-step epsilon");
  }
  if (noise_multiplier == 0.0) return 0;
  std::int64_t lo = 0;
  std::int64_t hi = 1;
  while (accountant.EpsilonAt(hi, delta).epsilon <= target_epsilon) {
    lo = hi;
    hi *= 2;
    if (hi > (std::int64_t{1} << 40)) {
      throw Error(ErrorCode::kInvalidArgument, "step calibration overflow");
    }
  }
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (accountant.EpsilonAt(mid, delta).epsilon <= target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace dpimb

#endif  // DPIMB_RDP_ACCOUNTANT_H_
