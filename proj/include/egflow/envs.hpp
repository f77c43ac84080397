#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "egflow/dataset.hpp"
#include "egflow/energy.hpp"
#include "egflow/rng.hpp"
#include "egflow/tensor.hpp"

namespace egflow {

// ---- Gaussian mixture ------------------------------------------------------

struct GmmSpec {
  std::vector<std::vector<float>> means;
  float sd = 0.08f;
  std::vector<double> weights;  // empty means equal weights

  /// Three clusters at (-0.6,-0.6), (0.6,-0.4), (0,0.7), sd 0.08, equal weights.
  static GmmSpec three_cluster();

  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  std::size_t components() const { return means.size(); }
  double weight(std::size_t k) const;
  void validate() const;
  double density(std::span<const float> x) const;
  /// Draws one point into `out`.
  void sample(Rng& rng, std::span<float> out) const;
};

Tensor gen_gmm_samples(const GmmSpec& spec, std::size_t n, Rng& rng);
/// n i.i.d. draws packed as an unconditional dataset (s_dim = 0, samples in `a`).
OfflineDataset gen_gmm_dataset(const GmmSpec& spec, std::size_t n, std::uint64_t seed);

/// 0.5 |x - μ_k|^2 / sd^2: energy minimised at the centre of component k.
QuadraticEnergy gmm_energy_in(const GmmSpec& spec, std::size_t component);
/// 0.5 |x - target|^2, default target (1, 1) outside the data.
QuadraticEnergy gmm_energy_out(std::vector<float> target = {1.0f, 1.0f});

// ---- Contextual bandit -----------------------------------------------------

enum class RewardId { negdist_goal, bimodal };

/// Single-step task: s ~ U[state_lo, state_hi]^s_dim, a ~ behaviour mixture
/// whose means move with the state as μ_k + B s, truncated to [-1,1]^a_dim.
///   negdist_goal  r = -0.5 k |a - (goal + G s)|^2
///   bimodal       r = Σ_j w_j exp(-|a - c_j|^2 / (2 σ^2))
struct BanditSpec {
  std::size_t s_dim = 1;
  std::size_t a_dim = 2;
  float state_lo = -1.0f;
  float state_hi = 1.0f;
  GmmSpec behavior;
  Tensor behavior_gain;  // [a_dim, s_dim]; empty means zero
  RewardId reward = RewardId::negdist_goal;
  std::vector<float> goal;
  Tensor goal_gain;  // [a_dim, s_dim]; empty means zero
  float reward_scale = 1.0f;
  std::vector<std::vector<float>> bump_centers;
  std::vector<float> bump_weights;
  float bump_sd = 0.2f;

  /// 1-D Gaussian behaviour N(0.2 s, 0.3^2), reward -2 (a - 0.5 + 0.2 s)^2.
  static BanditSpec gaussian_1d();
  /// 2-D behaviour with modes at (-0.5,-0.5) and (0.5,0.5); reward bump on the second.
  static BanditSpec bimodal_2d();

  void validate() const;
  std::vector<float> behavior_mean(std::size_t k, std::span<const float> s) const;
  std::vector<float> goal_at(std::span<const float> s) const;
  /// Behaviour density at state s (untruncated mixture; callers normalise on a grid).
  double behavior_density(std::span<const float> s, std::span<const float> a) const;
  float reward_fn(std::span<const float> s, std::span<const float> a) const;
  void sample_action(std::span<const float> s, Rng& rng, std::span<float> out) const;
};

OfflineDataset gen_bandit_dataset(const BanditSpec& spec, std::size_t n, std::uint64_t seed);

/// -r(s, a) with the state passed as the conditioning row; exact Q for a bandit.
class BanditRewardEnergy final : public EnergyFn {
 public:
  explicit BanditRewardEnergy(const BanditSpec& spec) : spec_(spec) {}
  std::vector<float> value(const Tensor& y, const Tensor* cond = nullptr) const override;
  Tensor grad(const Tensor& y, const Tensor* cond = nullptr) const override;

 private:
  const BanditSpec& spec_;
};

// ---- Point mass -------------------------------------------------------------

/// 2-D point in [lo, hi]^2. Actions live in [-1,1]^2 and move the point by
/// max_action * a plus Gaussian noise; reward -|s' - goal| every step.
struct PointMassSpec {
  float lo = -1.0f;
  float hi = 1.0f;
  std::vector<float> goal{0.6f, 0.6f};
  float max_action = 0.1f;
  int horizon = 30;
  float noise_sd = 0.01f;
  std::vector<float> start_center{-0.6f, -0.6f};
  float start_halfwidth = 0.1f;

  void validate() const;
  static constexpr std::size_t dim = 2;
};

struct StepResult {
  std::vector<float> s_next;
  float reward = 0.0f;
  bool done = false;
};

/// One transition; `t` is the 0-based step index, done when t + 1 == horizon.
StepResult pointmass_step(const PointMassSpec& spec, std::span<const float> s, std::span<const float> a, int t,
                          Rng& rng);
std::vector<float> pointmass_reset(const PointMassSpec& spec, Rng& rng);
/// Unit-speed action toward the goal, clipped to [-1,1] per component.
std::vector<float> pointmass_greedy_action(const PointMassSpec& spec, std::span<const float> s);

enum class BehaviorQuality { random, medium, mixed };
BehaviorQuality behavior_quality_from_string(std::string_view name);
std::string_view to_string(BehaviorQuality q);

/// Rollouts of the behaviour policy: random draws U[-1,1]^2, medium follows
/// the greedy action plus N(0, 0.3^2) noise, mixed picks one of the two per episode.
OfflineDataset gen_pointmass_dataset(const PointMassSpec& spec, std::size_t n_episodes, BehaviorQuality quality,
                                     std::uint64_t seed);
/// Spec hash recorded by gen_pointmass_dataset (spec plus generation settings).
std::uint64_t pointmass_dataset_hash(const PointMassSpec& spec, std::size_t n_episodes, BehaviorQuality quality);

// ---- Serialisation ----------------------------------------------------------

nlohmann::json to_json(const GmmSpec& spec);
GmmSpec gmm_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BanditSpec& spec);
BanditSpec bandit_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PointMassSpec& spec);
PointMassSpec pointmass_spec_from_json(const nlohmann::json& j);

/// FNV-1a of the compact JSON dump.
std::uint64_t spec_hash(const nlohmann::json& j);

}  // namespace egflow
