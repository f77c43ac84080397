#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egflow/energy.hpp"
#include "egflow/envs.hpp"
#include "egflow/flowq.hpp"
#include "egflow/schedule.hpp"

namespace egflow {

enum class TaskId { gmm3, bandit, pointmass };

std::string_view to_string(TaskId t);
TaskId task_from_string(std::string_view name);

/// Dataset generation settings. `n` is used by gmm3 and bandit, `episodes`
/// and `quality` by pointmass.
struct GenConfig {
  std::size_t n = 100000;
  std::size_t episodes = 200;
  BehaviorQuality quality = BehaviorQuality::mixed;
};

/// Stand-alone flow training (train-flow).
struct FlowTrainConfig {
  std::vector<std::size_t> hidden{256, 256};
  Activation activation = Activation::mish;
  std::size_t steps = 5000;
  std::size_t batch_size = 256;
  float lr = 3e-4f;
  int sample_steps = 20;
  std::size_t log_interval = 100;
  ScheduleKind schedule = ScheduleKind::maxseek;
  double lambda = 0.0;
  RescaleMode rescale = RescaleMode::learnable_only;
  /// auto | none | in | out | reward. auto picks in (gmm3), reward (bandit), none (pointmass).
  std::string energy = "auto";
  std::size_t energy_component = 0;
};

struct RunConfig {
  TaskId task = TaskId::gmm3;
  std::uint64_t seed = 0;
  /// Dataset directory read by the training commands.
  std::string data;
  GmmSpec gmm = GmmSpec::three_cluster();
  BanditSpec bandit = BanditSpec::gaussian_1d();
  PointMassSpec pointmass;
  GenConfig gen;
  FlowTrainConfig flow;
  FlowQConfig flowq;

  void validate() const;
  /// Spec hash a dataset generated from this config carries.
  std::uint64_t dataset_hash() const;
  /// Energy selected by flow.energy, or nullptr for none.
  std::unique_ptr<EnergyFn> flow_energy() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys anywhere raise ConfigError naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Applies the keys present in `j` on top of `base`.
RunConfig merge_run_config(const RunConfig& base, const nlohmann::json& j);

OfflineDataset generate_dataset(const RunConfig& c);

}  // namespace egflow
