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

// Update rules applied to a privatized gradient g~_t:
//
//   DP-GD      W <- W - lr g~
//   DP-GDM     b <- g~ (t = 1), mu b + g~ (t > 1);  W <- W - lr b
//   DP-Adam    m <- b1 m + (1-b1) g~,  v <- b2 v + (1-b2) g~^2,
//              m^ = m / (1-b1^t), v^ = v / (1-b2^t),
//              W <- W - lr m^ / (sqrt(v^) + gamma)
//   DP-AdamBC  moments as DP-Adam,
//              W <- W - lr m^ / sqrt(max(v^ - (sigma C / L)^2, gamma'))
//
// All rules are elementwise in (W, g~, buffers).

#ifndef DPIMB_OPTIMIZERS_H_
#define DPIMB_OPTIMIZERS_H_

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "dpimb/common.h"
#include "dpimb/dp_core.h"

namespace dpimb {

enum class OptimizerKind { kDpGd, kDpGdm, kDpAdam, kDpAdamBc };

inline constexpr std::array<OptimizerKind, 4> kAllOptimizers = {
    OptimizerKind::kDpGd, OptimizerKind::kDpGdm, OptimizerKind::kDpAdam,
    OptimizerKind::kDpAdamBc};

inline std::string_view OptimizerName(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kDpGd:
      return "dp-gd";
    case OptimizerKind::kDpGdm:
      return "dp-gdm";
    case OptimizerKind::kDpAdam:
      return "dp-adam";
    case OptimizerKind::kDpAdamBc:
      return "dp-adambc";
  }
  return "unknown";
}

inline OptimizerKind ParseOptimizerKind(std::string_view name) {
  for (OptimizerKind kind : kAllOptimizers) {
    if (OptimizerName(kind) == name) return kind;
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown optimizer '" + std::string(name) +
                  "'; valid kinds are dp-gd, dp-gdm, dp-adam, dp-adambc");
}

inline bool UsesSecondMoment(OptimizerKind kind) {
  return kind == OptimizerKind::kDpAdam || kind == OptimizerKind::kDpAdamBc;
}

struct Hyperparameters {
  double lr = 1e-3;
  double momentum = 0.9;  // mu
  double beta1 = 0.9;
  double beta2 = 0.999;
  double gamma = 1e-8;        // additive constant of DP-Adam
  double gamma_floor = 1e-8;  // floor of DP-AdamBC

  void Validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "learning rate must be positive and finite");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "momentum must lie in [0, 1)");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "betas must lie in [0, 1)");
    }
    if (!(gamma >= 0.0) || !(gamma_floor > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "gamma must be >= 0 and gamma' must be > 0");
    }
  }
};

// Buffers that a kind does not use stay empty (0 x 0).
struct OptState {
  OptimizerKind kind = OptimizerKind::kDpGd;
  Hyperparameters hp;
  std::int64_t t = 0;
  Matrix m;
  Matrix v;
  Matrix b;
};

inline OptState MakeOptimizer(OptimizerKind kind, const Hyperparameters& hp,
                              Index rows, Index cols) {
  hp.Validate();
  OptState state;
  state.kind = kind;
  state.hp = hp;
  if (kind == OptimizerKind::kDpGdm) state.b = Matrix::Zero(rows, cols);
  if (UsesSecondMoment(kind)) {
    state.m = Matrix::Zero(rows, cols);
    state.v = Matrix::Zero(rows, cols);
  }
  return state;
}

inline OptState MakeOptimizer(std::string_view kind, const Hyperparameters& hp,
                              Index rows, Index cols) {
  return MakeOptimizer(ParseOptimizerKind(kind), hp, rows, cols);
}

namespace internal {

inline void CheckStepShapes(const OptState& state, const Matrix& weights,
                            const PrivateGradient& grad,
                            OptimizerKind expected) {
  if (state.kind != expected) {
    throw Error(ErrorCode::kInvalidArgument,
                "optimizer state is " + std::string(OptimizerName(state.kind)) +
                    ", step is " + std::string(OptimizerName(expected)));
  }
  if (weights.rows() != grad.value.rows() ||
      weights.cols() != grad.value.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "weights " + ShapeString(weights.rows(), weights.cols()) +
                    " vs gradient " +
                    ShapeString(grad.value.rows(), grad.value.cols()));
  }
}

inline void UpdateMoments(OptState& state, const Matrix& g) {
  const Hyperparameters& hp = state.hp;
  state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * g;
  state.v = (hp.beta2 * state.v.array() + (1.0 - hp.beta2) * g.array().square())
                .matrix();
}

}  // namespace internal

inline void DpGdStep(OptState& state, Matrix& weights,
                     const PrivateGradient& grad) {
  internal::CheckStepShapes(state, weights, grad, OptimizerKind::kDpGd);
  ++state.t;
  weights -= state.hp.lr * grad.value;
}

inline void DpGdmStep(OptState& state, Matrix& weights,
                      const PrivateGradient& grad) {
  internal::CheckStepShapes(state, weights, grad, OptimizerKind::kDpGdm);
  ++state.t;
  if (state.t == 1) {
    state.b = grad.value;
  } else {
    state.b = state.hp.momentum * state.b + grad.value;
  }
  weights -= state.hp.lr * state.b;
}

// Bias-corrected moments m^_t, v^_t of an Adam-family state with t >= 1.
inline Matrix CorrectedFirstMoment(const OptState& state) {
  return state.m /
         (1.0 - std::pow(state.hp.beta1, static_cast<double>(state.t)));
}

inline Matrix CorrectedSecondMoment(const OptState& state) {
  if (!UsesSecondMoment(state.kind)) {
    throw Error(
        ErrorCode::kInvalidArgument,
        std::string(OptimizerName(state.kind)) + " keeps no second moment");
  }
  if (state.t == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "second moment is undefined before the first step");
  }
  return state.v /
         (1.0 - std::pow(state.hp.beta2, static_cast<double>(state.t)));
}

inline void DpAdamStep(OptState& state, Matrix& weights,
                       const PrivateGradient& grad) {
  internal::CheckStepShapes(state, weights, grad, OptimizerKind::kDpAdam);
  ++state.t;
  internal::UpdateMoments(state, grad.value);
  const Matrix m_hat = CorrectedFirstMoment(state);
  const Matrix v_hat = CorrectedSecondMoment(state);
  weights.array() -=
      state.hp.lr * m_hat.array() / (v_hat.array().sqrt() + state.hp.gamma);
}

// sqrt(max(v^ - (sigma C / L)^2, gamma')), the DP-AdamBC denominator.
inline Matrix AdamBcDenominator(const Matrix& v_hat, double noise_variance,
                                double gamma_floor) {
  return (v_hat.array() - noise_variance).max(gamma_floor).sqrt().matrix();
}

inline void DpAdamBcStep(OptState& state, Matrix& weights,
                         const PrivateGradient& grad, const DpConfig& config) {
  internal::CheckStepShapes(state, weights, grad, OptimizerKind::kDpAdamBc);
  ++state.t;
  internal::UpdateMoments(state, grad.value);
  const Matrix m_hat = CorrectedFirstMoment(state);
  const double noise_std = config.NoiseStddev();
  const Matrix denom =
      AdamBcDenominator(CorrectedSecondMoment(state), noise_std * noise_std,
                        state.hp.gamma_floor);
  weights.array() -= state.hp.lr * m_hat.array() / denom.array();
}

inline void OptimizerStep(OptState& state, Matrix& weights,
                          const PrivateGradient& grad, const DpConfig& config) {
  switch (state.kind) {
    case OptimizerKind::kDpGd:
      DpGdStep(state, weights, grad);
      return;
    case OptimizerKind::kDpGdm:
      DpGdmStep(state, weights, grad);
      return;
    case OptimizerKind::kDpAdam:
      DpAdamStep(state, weights, grad);
      return;
    case OptimizerKind::kDpAdamBc:
      DpAdamBcStep(state, weights, grad, config);
      return;
  }
}

}  // namespace dpimb

#endif  // DPIMB_OPTIMIZERS_H_
