#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egflow/adam.hpp"
#include "egflow/dataset.hpp"
#include "egflow/energy.hpp"
#include "egflow/flow.hpp"
#include "egflow/mlp.hpp"
#include "egflow/oracle.hpp"
#include "egflow/schedule.hpp"

namespace egflow {

enum class RewardMode { raw, standardize };
/// Which critic drives the policy guidance.
enum class PolicyEnergy { q1, min_twin };

std::string_view to_string(RewardMode m);
RewardMode reward_mode_from_string(std::string_view name);
std::string_view to_string(PolicyEnergy p);
PolicyEnergy policy_energy_from_string(std::string_view name);

struct FlowQConfig {
  std::size_t batch_size = 256;
  double gamma = 0.99;
  float lr = 3e-4f;
  double rho = 0.995;
  int sample_steps = 20;
  ScheduleKind schedule = ScheduleKind::maxseek;
  double lambda = 0.1;
  RescaleMode rescale = RescaleMode::learnable_only;
  bool max_q_backup = false;
  std::size_t n_candidates = 50;
  RewardMode reward_mode = RewardMode::raw;
  std::size_t gradient_steps = 10000;
  /// Metrics row (and evaluation, when an evaluator is given) every this many steps.
  std::size_t eval_interval = 1000;
  std::size_t eval_episodes = 20;
  std::vector<std::size_t> policy_hidden{256, 256, 256};
  Activation policy_activation = Activation::mish;
  std::vector<std::size_t> critic_hidden{256, 256, 256};
  Activation critic_activation = Activation::tanh;
  PolicyEnergy policy_energy = PolicyEnergy::q1;
  /// true: E = -Q, the guided path moves toward higher Q. false flips the sign.
  bool ascend_q = true;
  float grad_clip = 0.0f;
  /// Fills wall_ms_policy_update. Off by default so metric logs stay reproducible.
  bool time_policy_update = false;

  void validate() const;
  Schedule make_schedule(Rng* rng) const;
};

nlohmann::json to_json(const FlowQConfig& c);
/// Strict: unknown keys raise ConfigError naming the key.
FlowQConfig flowq_config_from_json(const nlohmann::json& j);

/// Twin critics Q_i(s ⊕ a) -> scalar.
struct CriticPair {
  std::size_t s_dim = 0;
  std::size_t a_dim = 0;
  MlpParams q1;
  MlpParams q2;

  static CriticPair create(std::size_t s_dim, std::size_t a_dim, const std::vector<std::size_t>& hidden,
                           Activation activation, Rng& rng);
  /// which = 0 or 1.
  std::vector<float> value(int which, const Tensor& s, const Tensor& a) const;
  std::vector<float> min_value(const Tensor& s, const Tensor& a) const;
};

Tensor critic_input(const Tensor& s, const Tensor& a);

/// State-conditioned flow over actions.
struct FlowPolicy {
  FlowModel model;
  int steps = 20;

  static FlowPolicy create(std::size_t s_dim, std::size_t a_dim, const std::vector<std::size_t>& hidden,
                           Activation activation, int steps, Rng& rng);
  std::size_t a_dim() const { return model.x_dim; }
  std::size_t s_dim() const { return model.cond_dim; }
};

/// Euler from a0 ~ N(0, I) over policy.steps, then clip to [-1, 1].
Tensor sample_action(const FlowPolicy& policy, const Tensor& s, Rng& rng);
/// Same with a caller-supplied starting point.
Tensor sample_action(const FlowPolicy& policy, const Tensor& s, Tensor a0);
/// Number of sample_action calls in this process.
std::uint64_t sample_action_calls();

struct TargetNets {
  FlowPolicy policy;
  CriticPair critics;
  double rho = 0.995;
};

/// r + (1 - done) γ min_i Q'_i(s', a') with a' from the target policy. With
/// max_q_backup the min-twin value is maximised over n_candidates draws.
/// Terminal rows never touch the networks.
std::vector<float> critic_target(const OfflineDataset::Batch& batch, const TargetNets& targets,
                                 const FlowQConfig& config, Rng& rng);

/// One Adam step per twin on the mean squared Bellman error. Returns the sum
/// of both losses before the step.
float critic_update(CriticPair& critics, const OfflineDataset::Batch& batch, std::span<const float> targets,
                    AdamState& opt1, AdamState& opt2);

/// E(a | s) = -Q(s, a) (sign flipped when ascend_q is false). Gradients are
/// taken through the critic with its parameters held fixed; the HVP falls back
/// to central differences of the gradient.
class CriticEnergy final : public EnergyFn {
 public:
  CriticEnergy(const CriticPair& critics, PolicyEnergy which, bool ascend_q = true)
      : critics_(critics), which_(which), sign_(ascend_q ? -1.0f : 1.0f) {}
  std::vector<float> value(const Tensor& y, const Tensor* cond = nullptr) const override;
  Tensor grad(const Tensor& y, const Tensor* cond = nullptr) const override;

 private:
  const CriticPair& critics_;
  PolicyEnergy which_;
  float sign_;
};

/// Gradient of Σ_rows Q_which(s, a) with respect to a.
Tensor critic_action_grad(const MlpParams& q, const Tensor& s, const Tensor& a);

/// One energy-guided flow-matching step on (s, a) pairs. Never samples from
/// the policy, so its cost does not depend on policy.steps.
float policy_update(FlowPolicy& policy, const OfflineDataset::Batch& batch, const CriticPair& critics,
                    Schedule& sched, AdamState& opt, AdamState* sched_opt, const FlowQConfig& config, Rng& rng);

/// Backprop-through-sampling update: Euler over policy.steps on the tape,
/// loss = -mean Q1(s, a_T) + bc_weight * CFM loss on the batch actions.
float baseline_policy_update_backprop(FlowPolicy& policy, const OfflineDataset::Batch& batch,
                                      const CriticPair& critics, AdamState& opt, Rng& rng, float bc_weight = 1.0f);

/// target <- rho target + (1 - rho) online, elementwise.
void polyak_update(MlpParams& target, const MlpParams& online, double rho);
void polyak_update(TargetNets& targets, const FlowPolicy& policy, const CriticPair& critics);

struct FlowQState {
  FlowPolicy policy;
  CriticPair critics;
  TargetNets targets;
  Schedule schedule;
  AdamState policy_opt;
  AdamState q1_opt;
  AdamState q2_opt;
  std::optional<AdamState> sched_opt;
  std::size_t step = 0;
};

/// Fresh networks from Rng::stream(seed, "init").
FlowQState init_flowq_state(std::size_t s_dim, std::size_t a_dim, const FlowQConfig& config, std::uint64_t seed);

struct MetricsRow {
  std::size_t step = 0;
  std::optional<double> critic_loss;
  double policy_loss = 0.0;
  std::optional<double> eval_return_mean;
  std::optional<double> eval_return_sd;
  std::optional<double> wall_ms_policy_update;
};

inline constexpr const char* kMetricsHeader =
    "step,critic_loss,policy_loss,eval_return_mean,eval_return_sd,wall_ms_policy_update";
std::string metrics_csv(const std::vector<MetricsRow>& rows);

using PolicyEval = std::function<ReturnStats(const FlowPolicy&)>;

struct TrainResult {
  FlowQState state;
  std::vector<MetricsRow> metrics;
};

/// Critic update, policy update and Polyak step per batch. Randomness: batches
/// from stream "train" fork 0, critic targets fork 1, policy draws fork 2.
/// Throws NumericError naming the step on a non-finite loss.
TrainResult train_flowq(const OfflineDataset& data, const FlowQConfig& config, std::uint64_t seed,
                        const PolicyEval& eval = {});

/// Policy updates only, with λ = 0. Uses the same streams as train_flowq, so a
/// λ = 0 FlowQ run produces the same policy parameters.
TrainResult train_behavior_cloning(const OfflineDataset& data, const FlowQConfig& config, std::uint64_t seed,
                                   const PolicyEval& eval = {});

}  // namespace egflow
