#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "egflow/flow.hpp"
#include "egflow/flowq.hpp"
#include "egflow/mlp.hpp"
#include "egflow/schedule.hpp"

namespace egflow {

/// Named parameter blocks plus the run config that produced them. On disk:
/// `manifest.json` (config, config hash, step, schedule, component list with
/// sizes, activation, offset and count) and `payload.bin` (all blocks as
/// little-endian f32, in component order).
struct Checkpoint {
  nlohmann::json config;
  std::size_t step = 0;
  /// Schedule settings without f_θ, which is stored as component "f_theta".
  nlohmann::json schedule;
  std::vector<std::pair<std::string, MlpParams>> components;

  bool has(const std::string& name) const;
  /// Throws CorruptionError when the component is missing.
  const MlpParams& get(const std::string& name) const;
  std::uint64_t config_hash() const;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir);
/// Validates the manifest against the payload before building anything;
/// any mismatch raises CorruptionError.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

Checkpoint flow_checkpoint(const FlowModel& model, const Schedule& sched, const nlohmann::json& config,
                           std::size_t step);
FlowModel flow_model_from_checkpoint(const Checkpoint& ck);
Schedule schedule_from_checkpoint(const Checkpoint& ck);

/// Policy, twin critics, target copies and (when learnable) f_θ.
Checkpoint flowq_checkpoint(const FlowQState& st, const nlohmann::json& config);
/// Rebuilds networks and schedule; optimiser moments start fresh.
FlowQState flowq_state_from_checkpoint(const Checkpoint& ck, const FlowQConfig& config);

}  // namespace egflow
