#pragma once

#include <optional>
#include <span>
#include <string_view>

#include <nlohmann/json.hpp>

#include "egflow/autodiff.hpp"
#include "egflow/mlp.hpp"
#include "egflow/rng.hpp"

namespace egflow {

/// h(t) shapes λ(t) = λ h(t). All kinds satisfy h(0) = 0.
///   linear_t      h = t
///   quadratic_t2  h = t^2
///   maxseek       h = t^2 / (1 - t)
///   learnable     h = t + t (1 - t) f_θ(t)
enum class ScheduleKind { linear_t, quadratic_t2, maxseek, learnable };

/// Which schedule kinds pick up the dataset energy scale.
enum class RescaleMode { learnable_only, all, off };

std::string_view to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(std::string_view name);
std::string_view to_string(RescaleMode m);
RescaleMode rescale_mode_from_string(std::string_view name);

inline constexpr double kMaxseekClamp = 1.0 - 1e-5;

struct Schedule {
  ScheduleKind kind = ScheduleKind::linear_t;
  double lambda = 1.0;
  double energy_scale = 1.0;
  RescaleMode rescale = RescaleMode::learnable_only;
  MlpParams f_theta;  // only for learnable

  /// For the learnable kind `rng` initialises f_θ as a [1, 32, 32, 1] tanh MLP.
  static Schedule make(ScheduleKind kind, double lambda, Rng* rng = nullptr);

  /// λ / energy_scale
  double base() const { return lambda / energy_scale; }
  void validate() const;
};

struct ScheduleValue {
  double h = 0.0;
  double dh = 0.0;
};

/// (h(t), dh/dt). maxseek throws DomainError for t >= 1.
ScheduleValue schedule_eval(const Schedule& s, double t);

/// (λ(t), dλ/dt) = base() * (h, dh).
ScheduleValue lambda_t(const Schedule& s, double t);

/// Coefficients of the guided path at time t:
///   shift = (1-t)^2 λ(t)                 (mean displacement along -∇E)
///   drift = (1-t) [λ(t) - (1-t) λ'(t)]   (velocity term along ∇E)
/// Fixed kinds use closed forms that stay finite at t = 1.
struct GuidanceCoeffs {
  double shift = 0.0;
  double drift = 0.0;
};
GuidanceCoeffs guidance_coeffs(const Schedule& s, double t);

/// Sets energy_scale to `estimate` when the rescale mode covers this kind.
void apply_energy_scale(Schedule& s, double estimate);

/// Recorded h(t) and dh/dt for the learnable kind, one row per time, so that
/// f_θ can be trained through a loss. dh/dt comes from forward-mode tangents
/// built out of ordinary tape ops.
struct TapedSchedule {
  Var h;
  Var dh;
};
TapedSchedule learnable_schedule_taped(const MlpParams& f_theta, std::span<const float> t, Tape& tape,
                                       MlpBinding* binding);

nlohmann::json schedule_to_json(const Schedule& s);
Schedule schedule_from_json(const nlohmann::json& j);

}  // namespace egflow
