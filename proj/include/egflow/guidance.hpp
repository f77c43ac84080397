#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "egflow/adam.hpp"
#include "egflow/energy.hpp"
#include "egflow/flow.hpp"
#include "egflow/schedule.hpp"

namespace egflow {

// Energy-guided Gaussian path. Every op takes one time per row of x1; the
// gradient and Hessian terms are evaluated at y = t x1. With λ = 0 the energy
// is never called and results match the unguided ops bit for bit.

/// t x1 - (1-t)^2 λ(t) ∇E(t x1)
Tensor guided_mean(const Tensor& x1, std::span<const float> t, const EnergyFn& energy, const Schedule& sched,
                   const Tensor* cond = nullptr);

/// guided_mean + (1-t) eps
Tensor guided_sample(const Tensor& x1, const Tensor& eps, std::span<const float> t, const EnergyFn& energy,
                     const Schedule& sched, const Tensor* cond = nullptr);

/// ∇²E(y) v per row. Throws NumericError on non-finite output.
Tensor energy_hvp(const EnergyFn& energy, const Tensor& y, const Tensor& v, const Tensor* cond = nullptr);

/// (x1 - x_t)/(1-t) + (1-t)[λ - (1-t)λ'] ∇E(t x1) - (1-t)^2 λ ∇²E(t x1) x1
Tensor guided_cond_velocity(const Tensor& x_t, const Tensor& x1, std::span<const float> t,
                            const EnergyFn& energy, const Schedule& sched, const Tensor* cond = nullptr);

/// Guided point and its target velocity, sharing one gradient evaluation.
struct GuidedTargets {
  Tensor x_t;
  Tensor target;
};
GuidedTargets guided_targets(const Tensor& x1, const FlowDraws& draws, const EnergyFn& energy,
                             const Schedule& sched, const Tensor* cond = nullptr);

float egfm_loss(const FlowModel& model, const Tensor& x1, const FlowDraws& draws, const EnergyFn& energy,
                const Schedule& sched, const Tensor* cond = nullptr);
float egfm_loss(const FlowModel& model, const Tensor& x1, Rng& rng, const EnergyFn& energy,
                const Schedule& sched, const Tensor* cond = nullptr);

/// One Adam step on the energy-guided loss. For the learnable kind f_θ is
/// updated jointly through `sched_opt`, which must then be non-null.
float egfm_train_step(FlowModel& model, AdamState& opt, const Tensor& x1, const FlowDraws& draws,
                      const EnergyFn& energy, Schedule& sched, AdamState* sched_opt, const Tensor* cond = nullptr);

struct FlowTrainOptions {
  std::vector<std::size_t> hidden{256, 256};
  Activation activation = Activation::mish;
  std::size_t steps = 5000;
  std::size_t batch_size = 256;
  float lr = 3e-4f;
  /// A log row every this many steps holding the mean loss since the last row;
  /// the first row is the loss of step 1 alone.
  std::size_t log_interval = 100;
};

struct LossRow {
  std::size_t step = 0;
  double loss = 0.0;
};

struct FlowTrainResult {
  FlowModel model;
  Schedule schedule;
  std::vector<LossRow> log;
};

/// Trains a flow on the rows of `x1` (conditioned on `cond` rows when given).
/// `energy` may be null only when sched.lambda is 0. The energy scale is
/// estimated on the data first. Randomness: Rng::stream(seed, "init") forks
/// 0 (model) and 2 (f_θ), Rng::stream(seed, "train") forks 0 (batches) and 2
/// (path draws). Throws NumericError naming the step on divergence.
FlowTrainResult train_guided_flow(const Tensor& x1, const Tensor* cond, const EnergyFn* energy, Schedule sched,
                                  const FlowTrainOptions& opts, std::uint64_t seed);

/// CSV with header step,loss.
std::string loss_csv(const std::vector<LossRow>& rows);

}  // namespace egflow
