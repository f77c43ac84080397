#include "egflow/adam.hpp"

#include <cmath>

#include "egflow/errors.hpp"

namespace egflow {

AdamState AdamState::for_params(std::span<const Tensor* const> params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape(), 0.0f);
    s.v.emplace_back(p->shape(), 0.0f);
  }
  return s;
}

AdamState AdamState::for_mlp(const MlpParams& params, AdamConfig config) {
  const auto ts = params.tensors();
  return for_params(ts, config);
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw DimensionError("adam_step: parameter/gradient/moment count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step gradient");
    require_same_shape(*params[i], state.m[i], "adam_step moment");
  }
  const AdamConfig& c = state.config;
  double clip_scale = 1.0;
  if (c.clip_norm > 0.0f) {
    double sq = 0.0;
    for (const auto& g : grads) {
      for (float x : g.data()) sq += static_cast<double>(x) * x;
    }
    const double norm = std::sqrt(sq);
    if (norm > c.clip_norm) clip_scale = c.clip_norm / norm;
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));
  const auto scale = static_cast<float>(clip_scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const float gj = g[j] * scale;
      m[j] = c.beta1 * m[j] + (1.0f - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0f - c.beta2) * gj * gj;
      const auto mhat = static_cast<float>(m[j] / bc1);
      const auto vhat = static_cast<float>(v[j] / bc2);
      p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void adam_step(MlpParams& params, std::span<const Tensor> grads, AdamState& state) {
  const auto ts = params.tensors();
  adam_step(std::span<Tensor* const>(ts), grads, state);
}

}  // namespace egflow
