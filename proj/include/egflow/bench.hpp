#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "egflow/flowq.hpp"

namespace egflow {

struct BenchOptions {
  std::size_t s_dim = 2;
  std::size_t a_dim = 2;
  std::size_t steps = 1000;
  /// Each cell is the minimum over this many timed repetitions.
  std::size_t repetitions = 3;
  std::uint64_t seed = 0;
};

struct BenchRow {
  int T = 0;
  double flowq_ms = 0.0;
  double backprop_ms = 0.0;
};

/// Wall-clock of `steps` policy_update calls and `steps` backprop-through-
/// sampling updates for each sampling-step count T, on a synthetic batch of
/// config.batch_size rows with random critics.
std::vector<BenchRow> bench_policy_update_time(const FlowQConfig& config, std::span<const int> t_list,
                                               const BenchOptions& opts = {});

/// CSV with header T,flowq_ms,backprop_ms.
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace egflow
