#include "egflow/flowq.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>

#include "egflow/errors.hpp"
#include "egflow/guidance.hpp"
#include "egflow/json_util.hpp"

namespace egflow {

namespace {

std::atomic<std::uint64_t> g_sample_calls{0};

// Batch energy estimates near zero would blow up λ / scale early in training.
constexpr double kMinEnergyScale = 1e-2;

std::vector<std::size_t> sizes_for(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

std::vector<float> column_values(const Tensor& t) {
  return std::vector<float>(t.data().begin(), t.data().end());
}

float critic_regression_step(MlpParams& q, AdamState& opt, const Tensor& input, std::span<const float> targets) {
  Tape tape;
  MlpBinding binding;
  Var pred = mlp_forward(q, tape.constant(input), tape, &binding);
  Var loss = scale(sum(square(sub(pred, tape.constant(Tensor::column(targets))))),
                   1.0f / static_cast<float>(input.rows()));
  tape.backward(loss);
  const float value = loss.value().item();
  adam_step(q, binding.grads(tape), opt);
  return value;
}

OfflineDataset::Batch draw_batch(const OfflineDataset& data, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(data.size()));
  return data.gather(idx);
}

void check_dataset(const OfflineDataset& data, const char* what) {
  if (data.size() == 0) throw InputError(std::string(what) + ": empty dataset");
  if (data.s_dim == 0) throw InputError(std::string(what) + ": dataset has no states");
  data.validate();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string_view to_string(RewardMode m) { return m == RewardMode::raw ? "raw" : "standardize"; }

RewardMode reward_mode_from_string(std::string_view name) {
  if (name == "raw") return RewardMode::raw;
  if (name == "standardize") return RewardMode::standardize;
  throw ConfigError("unknown reward_mode '" + std::string(name) + "'");
}

std::string_view to_string(PolicyEnergy p) { return p == PolicyEnergy::q1 ? "q1" : "min_twin"; }

PolicyEnergy policy_energy_from_string(std::string_view name) {
  if (name == "q1") return PolicyEnergy::q1;
  if (name == "min_twin") return PolicyEnergy::min_twin;
  throw ConfigError("unknown policy_energy '" + std::string(name) + "'");
}

void FlowQConfig::validate() const {
  if (batch_size == 0) throw ConfigError("flowq.batch_size must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("flowq.gamma must lie in [0, 1]");
  if (!(lr > 0.0f)) throw ConfigError("flowq.lr must be positive");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("flowq.rho must lie in (0, 1)");
  if (sample_steps < 1) throw ConfigError("flowq.sample_steps must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("flowq.lambda must be finite and >= 0");
  if (n_candidates == 0) throw ConfigError("flowq.n_candidates must be >= 1");
  if (gradient_steps == 0) throw ConfigError("flowq.gradient_steps must be positive");
  if (eval_interval == 0) throw ConfigError("flowq.eval_interval must be positive");
  if (eval_episodes == 0) throw ConfigError("flowq.eval_episodes must be positive");
  if (!(grad_clip >= 0.0f)) throw ConfigError("flowq.grad_clip must be >= 0");
  for (auto h : policy_hidden) {
    if (h == 0) throw ConfigError("flowq.policy_hidden entries must be positive");
  }
  for (auto h : critic_hidden) {
    if (h == 0) throw ConfigError("flowq.critic_hidden entries must be positive");
  }
}

Schedule FlowQConfig::make_schedule(Rng* rng) const {
  Schedule s = Schedule::make(schedule, lambda, rng);
  s.rescale = rescale;
  return s;
}

nlohmann::json to_json(const FlowQConfig& c) {
  return {{"batch_size", c.batch_size},
          {"gamma", c.gamma},
          {"lr", c.lr},
          {"rho", c.rho},
          {"sample_steps", c.sample_steps},
          {"schedule", std::string(to_string(c.schedule))},
          {"lambda", c.lambda},
          {"rescale_energy", std::string(to_string(c.rescale))},
          {"max_q_backup", c.max_q_backup},
          {"n_candidates", c.n_candidates},
          {"reward_mode", std::string(to_string(c.reward_mode))},
          {"gradient_steps", c.gradient_steps},
          {"eval_interval", c.eval_interval},
          {"eval_episodes", c.eval_episodes},
          {"policy_hidden", c.policy_hidden},
          {"policy_activation", std::string(to_string(c.policy_activation))},
          {"critic_hidden", c.critic_hidden},
          {"critic_activation", std::string(to_string(c.critic_activation))},
          {"policy_energy", std::string(to_string(c.policy_energy))},
          {"ascend_q", c.ascend_q},
          {"grad_clip", c.grad_clip},
          {"time_policy_update", c.time_policy_update}};
}

FlowQConfig flowq_config_from_json(const nlohmann::json& j) {
  constexpr std::string_view w = "flowq";
  reject_unknown_keys(j,
                      {"batch_size", "gamma", "lr", "rho", "sample_steps", "schedule", "lambda", "rescale_energy",
                       "max_q_backup", "n_candidates", "reward_mode", "gradient_steps", "eval_interval",
                       "eval_episodes", "policy_hidden", "policy_activation", "critic_hidden", "critic_activation",
                       "policy_energy", "ascend_q", "grad_clip", "time_policy_update"},
                      w);
  FlowQConfig c;
  c.batch_size = json_get(j, "batch_size", c.batch_size, w);
  c.gamma = json_get(j, "gamma", c.gamma, w);
  c.lr = json_get(j, "lr", c.lr, w);
  c.rho = json_get(j, "rho", c.rho, w);
  c.sample_steps = json_get(j, "sample_steps", c.sample_steps, w);
  c.schedule = schedule_kind_from_string(json_get(j, "schedule", std::string(to_string(c.schedule)), w));
  c.lambda = json_get(j, "lambda", c.lambda, w);
  c.rescale = rescale_mode_from_string(json_get(j, "rescale_energy", std::string(to_string(c.rescale)), w));
  c.max_q_backup = json_get(j, "max_q_backup", c.max_q_backup, w);
  c.n_candidates = json_get(j, "n_candidates", c.n_candidates, w);
  c.reward_mode = reward_mode_from_string(json_get(j, "reward_mode", std::string(to_string(c.reward_mode)), w));
  c.gradient_steps = json_get(j, "gradient_steps", c.gradient_steps, w);
  c.eval_interval = json_get(j, "eval_interval", c.eval_interval, w);
  c.eval_episodes = json_get(j, "eval_episodes", c.eval_episodes, w);
  c.policy_hidden = json_get(j, "policy_hidden", c.policy_hidden, w);
  c.policy_activation =
      activation_from_string(json_get(j, "policy_activation", std::string(to_string(c.policy_activation)), w));
  c.critic_hidden = json_get(j, "critic_hidden", c.critic_hidden, w);
  c.critic_activation =
      activation_from_string(json_get(j, "critic_activation", std::string(to_string(c.critic_activation)), w));
  c.policy_energy =
      policy_energy_from_string(json_get(j, "policy_energy", std::string(to_string(c.policy_energy)), w));
  c.ascend_q = json_get(j, "ascend_q", c.ascend_q, w);
  c.grad_clip = json_get(j, "grad_clip", c.grad_clip, w);
  c.time_policy_update = json_get(j, "time_policy_update", c.time_policy_update, w);
  c.validate();
  return c;
}

CriticPair CriticPair::create(std::size_t s_dim, std::size_t a_dim, const std::vector<std::size_t>& hidden,
                              Activation activation, Rng& rng) {
  CriticPair c;
  c.s_dim = s_dim;
  c.a_dim = a_dim;
  Rng r1 = rng.fork(0);
  Rng r2 = rng.fork(1);
  c.q1 = MlpParams::init(sizes_for(s_dim + a_dim, hidden, 1), activation, r1);
  c.q2 = MlpParams::init(sizes_for(s_dim + a_dim, hidden, 1), activation, r2);
  return c;
}

Tensor critic_input(const Tensor& s, const Tensor& a) {
  if (s.rows() != a.rows()) throw DimensionError("critic_input: state and action row counts differ");
  const Tensor parts[] = {s, a};
  return concat_columns(parts);
}

std::vector<float> CriticPair::value(int which, const Tensor& s, const Tensor& a) const {
  if (s.cols() != s_dim || a.cols() != a_dim) throw DimensionError("CriticPair: input width mismatch");
  return column_values(mlp_forward(which == 0 ? q1 : q2, critic_input(s, a)));
}

std::vector<float> CriticPair::min_value(const Tensor& s, const Tensor& a) const {
  auto v1 = value(0, s, a);
  const auto v2 = value(1, s, a);
  for (std::size_t i = 0; i < v1.size(); ++i) v1[i] = std::min(v1[i], v2[i]);
  return v1;
}

FlowPolicy FlowPolicy::create(std::size_t s_dim, std::size_t a_dim, const std::vector<std::size_t>& hidden,
                              Activation activation, int steps, Rng& rng) {
  if (steps < 1) throw DomainError("FlowPolicy: sampling steps must be >= 1");
  return FlowPolicy{FlowModel::create(a_dim, s_dim, hidden, activation, rng), steps};
}

Tensor sample_action(const FlowPolicy& policy, const Tensor& s, Tensor a0) {
  g_sample_calls.fetch_add(1, std::memory_order_relaxed);
  if (s.cols() != policy.s_dim()) throw DimensionError("sample_action: state width mismatch");
  if (a0.rows() != s.rows() || a0.cols() != policy.a_dim()) throw DimensionError("sample_action: bad a0 shape");
  Tensor a = euler_integrate([&](const Tensor& x, float t) { return policy.model.velocity(x, t, &s); },
                             std::move(a0), policy.steps);
  for (float& v : a.data()) v = std::clamp(v, -1.0f, 1.0f);
  return a;
}

Tensor sample_action(const FlowPolicy& policy, const Tensor& s, Rng& rng) {
  Tensor a0 = Tensor::matrix(s.rows(), policy.a_dim());
  for (float& v : a0.data()) v = rng.normalf();
  return sample_action(policy, s, std::move(a0));
}

std::uint64_t sample_action_calls() { return g_sample_calls.load(std::memory_order_relaxed); }

std::vector<float> critic_target(const OfflineDataset::Batch& batch, const TargetNets& targets,
                                 const FlowQConfig& config, Rng& rng) {
  const std::size_t n = batch.r.size();
  if (n == 0) throw InputError("critic_target: empty batch");
  std::vector<float> out(batch.r);
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.done[i] < 0.5f) live.push_back(i);
  }
  if (live.empty()) return out;

  const Tensor s_next = gather_rows(batch.s_next, live);
  std::vector<float> boot;
  if (config.max_q_backup) {
    const std::size_t k = config.n_candidates;
    const Tensor s_rep = repeat_rows(s_next, k);
    const Tensor a_rep = sample_action(targets.policy, s_rep, rng);
    const auto q = targets.critics.min_value(s_rep, a_rep);
    boot.resize(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      boot[i] = *std::max_element(q.begin() + static_cast<std::ptrdiff_t>(i * k),
                                  q.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    }
  } else {
    const Tensor a_next = sample_action(targets.policy, s_next, rng);
    boot = targets.critics.min_value(s_next, a_next);
  }
  const auto gamma = static_cast<float>(config.gamma);
  for (std::size_t j = 0; j < live.size(); ++j) {
    const std::size_t i = live[j];
    out[i] = batch.r[i] + (1.0f - batch.done[i]) * gamma * boot[j];
  }
  return out;
}

float critic_update(CriticPair& critics, const OfflineDataset::Batch& batch, std::span<const float> targets,
                    AdamState& opt1, AdamState& opt2) {
  if (targets.size() != batch.r.size()) throw DimensionError("critic_update: target count mismatch");
  const Tensor input = critic_input(batch.s, batch.a);
  const float l1 = critic_regression_step(critics.q1, opt1, input, targets);
  const float l2 = critic_regression_step(critics.q2, opt2, input, targets);
  return l1 + l2;
}

Tensor critic_action_grad(const MlpParams& q, const Tensor& s, const Tensor& a) {
  Tape tape;
  Var av = tape.leaf(a);
  const Var parts[] = {tape.constant(s), av};
  Var out = sum(mlp_forward(q, concat_cols(parts), tape));
  tape.backward(out);
  return tape.grad(av);
}

std::vector<float> CriticEnergy::value(const Tensor& y, const Tensor* cond) const {
  if (cond == nullptr) throw InputError("CriticEnergy: state conditioning required");
  auto q = which_ == PolicyEnergy::q1 ? critics_.value(0, *cond, y) : critics_.min_value(*cond, y);
  for (float& v : q) v *= sign_;
  return q;
}

Tensor CriticEnergy::grad(const Tensor& y, const Tensor* cond) const {
  if (cond == nullptr) throw InputError("CriticEnergy: state conditioning required");
  if (cond->cols() != critics_.s_dim || y.cols() != critics_.a_dim) {
    throw DimensionError("CriticEnergy: input width mismatch");
  }
  Tensor g = critic_action_grad(critics_.q1, *cond, y);
  if (which_ == PolicyEnergy::min_twin) {
    const Tensor g2 = critic_action_grad(critics_.q2, *cond, y);
    const auto v1 = critics_.value(0, *cond, y);
    const auto v2 = critics_.value(1, *cond, y);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      if (v2[r] < v1[r]) {
        for (std::size_t c = 0; c < y.cols(); ++c) g(r, c) = g2(r, c);
      }
    }
  }
  for (float& v : g.data()) v *= sign_;
  return g;
}

float policy_update(FlowPolicy& policy, const OfflineDataset::Batch& batch, const CriticPair& critics,
                    Schedule& sched, AdamState& opt, AdamState* sched_opt, const FlowQConfig& config, Rng& rng) {
  const FlowDraws draws = FlowDraws::sample(batch.a.rows(), batch.a.cols(), rng);
  const CriticEnergy energy(critics, config.policy_energy, config.ascend_q);
  if (sched.lambda > 0.0) {
    apply_energy_scale(sched, std::max(energy_scale_estimate(batch.a, energy, &batch.s), kMinEnergyScale));
  }
  return egfm_train_step(policy.model, opt, batch.a, draws, energy, sched, sched_opt, &batch.s);
}

float baseline_policy_update_backprop(FlowPolicy& policy, const OfflineDataset::Batch& batch,
                                      const CriticPair& critics, AdamState& opt, Rng& rng, float bc_weight) {
  const std::size_t n = batch.a.rows();
  if (n == 0) throw InputError("baseline_policy_update_backprop: empty batch");
  const int steps = policy.steps;
  Tensor a0 = Tensor::matrix(n, policy.a_dim());
  for (float& v : a0.data()) v = rng.normalf();
  const FlowDraws draws = FlowDraws::sample(n, policy.a_dim(), rng);

  Tape tape;
  MlpBinding binding;
  binding.bind(policy.model.net, tape);
  Var sv = tape.constant(batch.s);
  Var a = tape.constant(std::move(a0));
  const float dt = 1.0f / static_cast<float>(steps);
  for (int k = 0; k < steps; ++k) {
    Var tcol = tape.constant(Tensor::matrix(n, 1, static_cast<float>(k) * dt));
    a = add(a, scale(policy.model.velocity(tape, a, tcol, &sv, &binding), dt));
  }
  const Var q_in[] = {sv, a};
  Var q_term = scale(mean(mlp_forward(critics.q1, concat_cols(q_in), tape)), -1.0f);

  const Tensor x_t = linear_path_sample(batch.a, draws.eps, draws.t);
  const Tensor target = linear_cond_velocity(x_t, batch.a, draws.t);
  Var pred = policy.model.velocity(tape, tape.constant(x_t), tape.constant(Tensor::column(draws.t)), &sv, &binding);
  Var bc = scale(sum(square(sub(pred, tape.constant(target)))), bc_weight / static_cast<float>(n));
  Var loss = add(q_term, bc);
  tape.backward(loss);
  const float value = loss.value().item();
  adam_step(policy.model.net, binding.grads(tape), opt);
  return value;
}

void polyak_update(MlpParams& target, const MlpParams& online, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw DomainError("polyak_update: rho must lie in (0, 1)");
  if (!target.same_architecture(online)) throw DimensionError("polyak_update: architectures differ");
  const auto keep = static_cast<float>(rho);
  const auto mix = static_cast<float>(1.0 - rho);
  auto dst = target.tensors();
  const auto src = online.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    require_same_shape(*dst[i], *src[i], "polyak_update");
    auto d = dst[i]->data();
    auto s = src[i]->data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = keep * d[j] + mix * s[j];
  }
}

void polyak_update(TargetNets& targets, const FlowPolicy& policy, const CriticPair& critics) {
  polyak_update(targets.policy.model.net, policy.model.net, targets.rho);
  polyak_update(targets.critics.q1, critics.q1, targets.rho);
  polyak_update(targets.critics.q2, critics.q2, targets.rho);
}

FlowQState init_flowq_state(std::size_t s_dim, std::size_t a_dim, const FlowQConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng init = Rng::stream(seed, "init");
  Rng policy_rng = init.fork(0);
  Rng critic_rng = init.fork(1);
  Rng sched_rng = init.fork(2);
  AdamConfig adam{.lr = config.lr, .clip_norm = config.grad_clip};
  FlowQState st{
      .policy = FlowPolicy::create(s_dim, a_dim, config.policy_hidden, config.policy_activation,
                                   config.sample_steps, policy_rng),
      .critics = CriticPair::create(s_dim, a_dim, config.critic_hidden, config.critic_activation, critic_rng),
      .targets = {},
      .schedule = config.make_schedule(&sched_rng),
      .policy_opt = {},
      .q1_opt = {},
      .q2_opt = {},
      .sched_opt = std::nullopt,
      .step = 0,
  };
  st.targets = TargetNets{st.policy, st.critics, config.rho};
  st.policy_opt = AdamState::for_mlp(st.policy.model.net, adam);
  st.q1_opt = AdamState::for_mlp(st.critics.q1, adam);
  st.q2_opt = AdamState::for_mlp(st.critics.q2, adam);
  if (st.schedule.kind == ScheduleKind::learnable) st.sched_opt = AdamState::for_mlp(st.schedule.f_theta, adam);
  return st;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& r : rows) {
    out << r.step << ',' << opt(r.critic_loss) << ',' << fmt(r.policy_loss) << ',' << opt(r.eval_return_mean)
        << ',' << opt(r.eval_return_sd) << ',' << opt(r.wall_ms_policy_update) << '\n';
  }
  return out.str();
}

namespace {

TrainResult run_training(const OfflineDataset& input, const FlowQConfig& config, std::uint64_t seed,
                         const PolicyEval& eval, bool with_critic) {
  config.validate();
  check_dataset(input, with_critic ? "train_flowq" : "train_behavior_cloning");
  OfflineDataset standardized;
  const OfflineDataset* data = &input;
  if (config.reward_mode == RewardMode::standardize && with_critic) {
    standardized = input;
    standardize_rewards(standardized);
    data = &standardized;
  }

  TrainResult res{init_flowq_state(data->s_dim, data->a_dim, config, seed), {}};
  FlowQState& st = res.state;
  if (!with_critic) st.schedule = Schedule::make(ScheduleKind::linear_t, 0.0);

  const Rng train = Rng::stream(seed, "train");
  Rng batch_rng = train.fork(0);
  Rng critic_rng = train.fork(1);
  Rng policy_rng = train.fork(2);

  double critic_acc = 0.0;
  double policy_acc = 0.0;
  double wall_acc = 0.0;
  std::size_t window = 0;
  auto one_step = [&](const OfflineDataset::Batch& batch) {
    if (with_critic) {
      const auto targets = critic_target(batch, st.targets, config, critic_rng);
      const float lc = critic_update(st.critics, batch, targets, st.q1_opt, st.q2_opt);
      if (!std::isfinite(lc)) throw NumericError("non-finite critic loss");
      critic_acc += lc;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const float lp = policy_update(st.policy, batch, st.critics, st.schedule, st.policy_opt,
                                   st.sched_opt ? &*st.sched_opt : nullptr, config, policy_rng);
    wall_acc += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(lp)) throw NumericError("non-finite policy loss");
    policy_acc += lp;
    if (with_critic) polyak_update(st.targets, st.policy, st.critics);
  };

  for (std::size_t step = 0; step < config.gradient_steps; ++step) {
    const auto batch = draw_batch(*data, config.batch_size, batch_rng);
    try {
      one_step(batch);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    ++window;
    st.step = step + 1;

    if (st.step % config.eval_interval == 0 || st.step == config.gradient_steps) {
      MetricsRow row;
      row.step = st.step;
      if (with_critic) row.critic_loss = critic_acc / static_cast<double>(window);
      row.policy_loss = policy_acc / static_cast<double>(window);
      if (eval) {
        const ReturnStats rs = eval(st.policy);
        row.eval_return_mean = rs.mean;
        row.eval_return_sd = rs.sd;
      }
      if (config.time_policy_update) row.wall_ms_policy_update = wall_acc / static_cast<double>(window);
      res.metrics.push_back(row);
      critic_acc = policy_acc = wall_acc = 0.0;
      window = 0;
    }
  }
  return res;
}

}  // namespace

TrainResult train_flowq(const OfflineDataset& data, const FlowQConfig& config, std::uint64_t seed,
                        const PolicyEval& eval) {
  return run_training(data, config, seed, eval, true);
}

TrainResult train_behavior_cloning(const OfflineDataset& data, const FlowQConfig& config, std::uint64_t seed,
                                   const PolicyEval& eval) {
  return run_training(data, config, seed, eval, false);
}

}  // namespace egflow
