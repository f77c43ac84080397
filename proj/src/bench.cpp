#include "egflow/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <sstream>

#include "egflow/errors.hpp"

namespace egflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <typename F>
double wall_ms(F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  body();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchRow> bench_policy_update_time(const FlowQConfig& config, std::span<const int> t_list,
                                               const BenchOptions& opts) {
  if (t_list.empty()) throw ConfigError("bench: empty T list");
  if (opts.steps == 0 || opts.repetitions == 0) throw ConfigError("bench: steps and repetitions must be positive");
  config.validate();
  const Rng init = Rng::stream(opts.seed, "init");
  Rng data_rng = Rng::stream(opts.seed, "data");
  Rng critic_init = init.fork(1);
  const CriticPair critics =
      CriticPair::create(opts.s_dim, opts.a_dim, config.critic_hidden, config.critic_activation, critic_init);

  OfflineDataset::Batch batch;
  const std::size_t n = config.batch_size;
  batch.s = Tensor::matrix(n, opts.s_dim);
  batch.a = Tensor::matrix(n, opts.a_dim);
  for (float& v : batch.s.data()) v = static_cast<float>(data_rng.uniform(-1.0, 1.0));
  for (float& v : batch.a.data()) v = static_cast<float>(data_rng.uniform(-1.0, 1.0));
  batch.s_next = batch.s;
  batch.r.assign(n, 0.0f);
  batch.done.assign(n, 1.0f);

  const AdamConfig adam{.lr = config.lr, .clip_norm = config.grad_clip};
  for (int T : t_list) {
    if (T < 1) throw ConfigError("bench: T must be >= 1");
  }
  std::vector<BenchRow> rows;
  for (int T : t_list) rows.push_back({T, kInf, kInf});
  // Repetitions are the outer loop so slow drift in machine load is spread
  // over every cell instead of landing on whichever T runs first.
  // The starting cell rotates too, so no T always follows the heaviest one.
  for (std::size_t rep = 0; rep < opts.repetitions; ++rep) {
    for (std::size_t k = 0; k < rows.size(); ++k) {
      BenchRow& row = rows[(rep + k) % rows.size()];
      Rng policy_init = init.fork(0);
      const FlowPolicy fresh = FlowPolicy::create(opts.s_dim, opts.a_dim, config.policy_hidden,
                                                  config.policy_activation, row.T, policy_init);
      Rng sched_rng = init.fork(2);
      const Schedule sched0 = config.make_schedule(&sched_rng);

      auto run_flowq = [&](std::size_t steps) {
        FlowPolicy p = fresh;
        Schedule sched = sched0;
        AdamState opt = AdamState::for_mlp(p.model.net, adam);
        std::optional<AdamState> sopt;
        if (sched.kind == ScheduleKind::learnable) sopt = AdamState::for_mlp(sched.f_theta, adam);
        Rng rng = Rng::stream(opts.seed, "train").fork(2);
        for (std::size_t i = 0; i < steps; ++i) {
          policy_update(p, batch, critics, sched, opt, sopt ? &*sopt : nullptr, config, rng);
        }
      };
      // Untimed warm-up: the previous cell may have left the allocator and
      // caches in a different state.
      run_flowq(std::min<std::size_t>(opts.steps, 20));
      row.flowq_ms = std::min(row.flowq_ms, wall_ms([&] { run_flowq(opts.steps); }));
      row.backprop_ms = std::min(row.backprop_ms, wall_ms([&] {
        FlowPolicy p = fresh;
        AdamState opt = AdamState::for_mlp(p.model.net, adam);
        Rng rng = Rng::stream(opts.seed, "train").fork(2);
        for (std::size_t i = 0; i < opts.steps; ++i) baseline_policy_update_backprop(p, batch, critics, opt, rng);
      }));
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "T,flowq_ms,backprop_ms\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.3f,%.3f\n", r.T, r.flowq_ms, r.backprop_ms);
    out << buf;
  }
  return out.str();
}

}  // namespace egflow
