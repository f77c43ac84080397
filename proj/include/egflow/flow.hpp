#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "egflow/adam.hpp"
#include "egflow/autodiff.hpp"
#include "egflow/mlp.hpp"
#include "egflow/rng.hpp"
#include "egflow/tensor.hpp"

namespace egflow {

/// Training times are drawn from U[0, kMaxTrainTime] so the conditional target
/// (x1 - x_t)/(1 - t) stays finite.
inline constexpr float kMaxTrainTime = 1.0f - 1e-5f;

// Linear (optimal-transport) Gaussian path p_t(x|x1) = N(t x1, (1-t)^2 I).
// Batched forms take one time per row.

Tensor linear_path_sample(const Tensor& x1, const Tensor& eps, float t);
Tensor linear_path_sample(const Tensor& x1, const Tensor& eps, std::span<const float> t);

/// (x1 - x_t) / (1 - t). Throws DomainError at t = 1.
Tensor linear_cond_velocity(const Tensor& x_t, const Tensor& x1, float t);
Tensor linear_cond_velocity(const Tensor& x_t, const Tensor& x1, std::span<const float> t);

/// Velocity of a general Gaussian path N(alpha(t), sigma(t)^2 I):
/// dalpha + (dsigma / sigma) (x_t - alpha).
Tensor gaussian_cond_velocity(const Tensor& x_t, const Tensor& alpha, const Tensor& dalpha, float sigma,
                              float dsigma);

/// Velocity network u_theta(x, t[, s]); the input row is x ⊕ t ⊕ s.
struct FlowModel {
  std::size_t x_dim = 0;
  std::size_t cond_dim = 0;
  MlpParams net;

  static FlowModel create(std::size_t x_dim, std::size_t cond_dim, const std::vector<std::size_t>& hidden,
                          Activation activation, Rng& rng);

  Tensor velocity(const Tensor& x, std::span<const float> t, const Tensor* cond = nullptr) const;
  Tensor velocity(const Tensor& x, float t, const Tensor* cond = nullptr) const;
  Var velocity(Tape& tape, Var x, Var t_col, const Var* cond, MlpBinding* binding) const;
};

/// Per-sample randomness of one flow-matching batch. Sharing a FlowDraws
/// between two losses makes them directly comparable.
struct FlowDraws {
  std::vector<float> t;
  Tensor eps;

  static FlowDraws sample(std::size_t n, std::size_t dim, Rng& rng);
};

/// Mean over rows of the squared Euclidean distance between pred and target.
float regression_loss(const Tensor& pred, const Tensor& target);

float cfm_loss(const FlowModel& model, const Tensor& x1, const FlowDraws& draws, const Tensor* cond = nullptr);
float cfm_loss(const FlowModel& model, const Tensor& x1, Rng& rng, const Tensor* cond = nullptr);

/// One Adam step regressing the model velocity at (x_t, t[, s]) onto `target`.
/// Returns the pre-update loss.
float velocity_regression_step(FlowModel& model, AdamState& opt, const Tensor& x_t, std::span<const float> t,
                               const Tensor* cond, const Tensor& target);

float cfm_train_step(FlowModel& model, AdamState& opt, const Tensor& x1, const FlowDraws& draws,
                     const Tensor* cond = nullptr);

using VelocityField = std::function<Tensor(const Tensor& x, float t)>;

/// Fixed-step Euler: x <- x + field(x, k/T) / T for k = 0..T-1.
Tensor euler_integrate(const VelocityField& field, Tensor x0, int steps);

/// Draws `n` samples from the model by integrating from N(0, I).
Tensor sample_flow(const FlowModel& model, std::size_t n, int steps, Rng& rng, const Tensor* cond = nullptr);

}  // namespace egflow
