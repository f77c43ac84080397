#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "egflow/mlp.hpp"
#include "egflow/tensor.hpp"

namespace egflow {

struct AdamConfig {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  /// Global gradient-norm clip; 0 disables it.
  float clip_norm = 0.0f;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState for_params(std::span<const Tensor* const> params, AdamConfig config = {});
  static AdamState for_mlp(const MlpParams& params, AdamConfig config = {});
};

/// One bias-corrected Adam update in place; increments state.step.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);
void adam_step(MlpParams& params, std::span<const Tensor> grads, AdamState& state);

}  // namespace egflow
