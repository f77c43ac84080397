#include "egflow/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "egflow/errors.hpp"
#include "egflow/json_util.hpp"

namespace egflow {

namespace {

float dot_gain(const Tensor& gain, std::size_t row, std::span<const float> s) {
  if (gain.empty()) return 0.0f;
  float acc = 0.0f;
  for (std::size_t j = 0; j < s.size(); ++j) acc += gain(row, j) * s[j];
  return acc;
}

void check_gain(const Tensor& gain, std::size_t a_dim, std::size_t s_dim, const char* name) {
  if (gain.empty()) return;
  if (gain.rows() != a_dim || gain.cols() != s_dim) {
    throw ConfigError(std::string("bandit ") + name + " must be [a_dim, s_dim]");
  }
}

}  // namespace

// ---- Gaussian mixture ------------------------------------------------------

GmmSpec GmmSpec::three_cluster() {
  GmmSpec g;
  g.means = {{-0.6f, -0.6f}, {0.6f, -0.4f}, {0.0f, 0.7f}};
  g.sd = 0.08f;
  return g;
}

double GmmSpec::weight(std::size_t k) const {
  return weights.empty() ? 1.0 / static_cast<double>(means.size()) : weights[k];
}

void GmmSpec::validate() const {
  if (means.empty()) throw ConfigError("gmm: at least one component required");
  for (const auto& m : means) {
    if (m.size() != dim() || m.empty()) throw ConfigError("gmm: component means differ in dimension");
  }
  if (!(sd > 0.0f)) throw ConfigError("gmm: sd must be positive");
  if (!weights.empty()) {
    if (weights.size() != means.size()) throw ConfigError("gmm: one weight per component required");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw ConfigError("gmm: weights must be non-negative");
      total += w;
    }
    if (std::fabs(total - 1.0) > 1e-6) throw ConfigError("gmm: weights must sum to 1");
  }
}

double GmmSpec::density(std::span<const float> x) const {
  const double var = static_cast<double>(sd) * sd;
  const double norm = std::pow(2.0 * std::numbers::pi * var, -0.5 * static_cast<double>(dim()));
  double p = 0.0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < dim(); ++j) {
      const double d = static_cast<double>(x[j]) - means[k][j];
      d2 += d * d;
    }
    p += weight(k) * norm * std::exp(-0.5 * d2 / var);
  }
  return p;
}

void GmmSpec::sample(Rng& rng, std::span<float> out) const {
  std::size_t k = means.size() - 1;
  if (means.size() > 1) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) {
      acc += weight(i);
      if (u < acc) {
        k = i;
        break;
      }
    }
  }
  for (std::size_t j = 0; j < dim(); ++j) out[j] = means[k][j] + sd * rng.normalf();
}

Tensor gen_gmm_samples(const GmmSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  Tensor x = Tensor::matrix(n, spec.dim());
  for (std::size_t i = 0; i < n; ++i) spec.sample(rng, x.row(i));
  return x;
}

OfflineDataset gen_gmm_dataset(const GmmSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InputError("gen_gmm_dataset: n must be >= 1");
  Rng rng = Rng::stream(seed, "data");
  OfflineDataset d = OfflineDataset::empty(0, spec.dim(), n);
  d.a = gen_gmm_samples(spec, n, rng);
  d.seed = seed;
  d.spec_hash = spec_hash(to_json(spec));
  return d;
}

QuadraticEnergy gmm_energy_in(const GmmSpec& spec, std::size_t component) {
  spec.validate();
  if (component >= spec.components()) throw ConfigError("gmm_energy_in: component index out of range");
  const std::size_t d = spec.dim();
  Tensor a = Tensor::matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) a(i, i) = 1.0f / (spec.sd * spec.sd);
  return QuadraticEnergy(std::move(a), spec.means[component]);
}

QuadraticEnergy gmm_energy_out(std::vector<float> target) {
  const std::size_t d = target.size();
  return QuadraticEnergy::isotropic(d, std::move(target));
}

// ---- Contextual bandit -----------------------------------------------------

BanditSpec BanditSpec::gaussian_1d() {
  BanditSpec b;
  b.s_dim = 1;
  b.a_dim = 1;
  b.behavior.means = {{0.0f}};
  b.behavior.sd = 0.3f;
  b.behavior_gain = Tensor::from_rows({{0.2f}});
  b.reward = RewardId::negdist_goal;
  b.goal = {0.5f};
  b.goal_gain = Tensor::from_rows({{-0.2f}});
  b.reward_scale = 4.0f;
  return b;
}

BanditSpec BanditSpec::bimodal_2d() {
  BanditSpec b;
  b.s_dim = 1;
  b.a_dim = 2;
  b.behavior.means = {{-0.5f, -0.5f}, {0.5f, 0.5f}};
  b.behavior.sd = 0.15f;
  b.reward = RewardId::bimodal;
  b.bump_centers = {{0.5f, 0.5f}, {-0.5f, -0.5f}};
  b.bump_weights = {1.0f, 0.2f};
  b.bump_sd = 0.3f;
  return b;
}

void BanditSpec::validate() const {
  behavior.validate();
  if (a_dim == 0 || behavior.dim() != a_dim) throw ConfigError("bandit: behaviour dimension must equal a_dim");
  if (!(state_lo < state_hi)) throw ConfigError("bandit: state_lo must be below state_hi");
  check_gain(behavior_gain, a_dim, s_dim, "behavior_gain");
  check_gain(goal_gain, a_dim, s_dim, "goal_gain");
  if (reward == RewardId::negdist_goal) {
    if (goal.size() != a_dim) throw ConfigError("bandit: goal must have a_dim entries");
    if (!(reward_scale > 0.0f)) throw ConfigError("bandit: reward_scale must be positive");
  } else {
    if (bump_centers.empty() || bump_centers.size() != bump_weights.size()) {
      throw ConfigError("bandit: bimodal reward needs matching bump_centers and bump_weights");
    }
    for (const auto& c : bump_centers) {
      if (c.size() != a_dim) throw ConfigError("bandit: bump centre dimension must equal a_dim");
    }
    if (!(bump_sd > 0.0f)) throw ConfigError("bandit: bump_sd must be positive");
  }
}

std::vector<float> BanditSpec::behavior_mean(std::size_t k, std::span<const float> s) const {
  std::vector<float> m = behavior.means[k];
  for (std::size_t i = 0; i < a_dim; ++i) m[i] += dot_gain(behavior_gain, i, s);
  return m;
}

std::vector<float> BanditSpec::goal_at(std::span<const float> s) const {
  std::vector<float> g = goal;
  for (std::size_t i = 0; i < a_dim; ++i) g[i] += dot_gain(goal_gain, i, s);
  return g;
}

double BanditSpec::behavior_density(std::span<const float> s, std::span<const float> a) const {
  GmmSpec shifted = behavior;
  for (std::size_t k = 0; k < shifted.components(); ++k) shifted.means[k] = behavior_mean(k, s);
  return shifted.density(a);
}

float BanditSpec::reward_fn(std::span<const float> s, std::span<const float> a) const {
  if (reward == RewardId::negdist_goal) {
    const auto g = goal_at(s);
    float d2 = 0.0f;
    for (std::size_t i = 0; i < a_dim; ++i) d2 += (a[i] - g[i]) * (a[i] - g[i]);
    return -0.5f * reward_scale * d2;
  }
  float r = 0.0f;
  const float inv = 1.0f / (2.0f * bump_sd * bump_sd);
  for (std::size_t j = 0; j < bump_centers.size(); ++j) {
    float d2 = 0.0f;
    for (std::size_t i = 0; i < a_dim; ++i) d2 += (a[i] - bump_centers[j][i]) * (a[i] - bump_centers[j][i]);
    r += bump_weights[j] * std::exp(-d2 * inv);
  }
  return r;
}

void BanditSpec::sample_action(std::span<const float> s, Rng& rng, std::span<float> out) const {
  GmmSpec shifted = behavior;
  for (std::size_t k = 0; k < shifted.components(); ++k) shifted.means[k] = behavior_mean(k, s);
  // Truncate to the action box by rejection so the behaviour density stays a
  // renormalised mixture (no point masses on the boundary).
  for (int attempt = 0; attempt < 10000; ++attempt) {
    shifted.sample(rng, out);
    bool inside = true;
    for (float v : out) inside = inside && v >= -1.0f && v <= 1.0f;
    if (inside) return;
  }
  throw DegenerateError("bandit: behaviour puts almost no mass inside [-1,1]");
}

OfflineDataset gen_bandit_dataset(const BanditSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw InputError("gen_bandit_dataset: n must be >= 1");
  Rng rng = Rng::stream(seed, "data");
  OfflineDataset d = OfflineDataset::empty(spec.s_dim, spec.a_dim, n);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = d.s.row(i);
    for (float& v : s) v = static_cast<float>(rng.uniform(spec.state_lo, spec.state_hi));
    spec.sample_action(s, rng, d.a.row(i));
    d.r[i] = spec.reward_fn(s, d.a.row(i));
    std::copy(s.begin(), s.end(), d.s_next.row(i).begin());
  }
  d.seed = seed;
  d.spec_hash = spec_hash(to_json(spec));
  return d;
}

std::vector<float> BanditRewardEnergy::value(const Tensor& y, const Tensor* cond) const {
  if (y.cols() != spec_.a_dim) throw DimensionError("BanditRewardEnergy: action width mismatch");
  if (spec_.s_dim > 0 && (cond == nullptr || cond->rows() != y.rows())) {
    throw DimensionError("BanditRewardEnergy: one state row per action required");
  }
  std::vector<float> out(y.rows());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const std::span<const float> s = cond ? cond->row(r) : std::span<const float>{};
    out[r] = -spec_.reward_fn(s, y.row(r));
  }
  return out;
}

Tensor BanditRewardEnergy::grad(const Tensor& y, const Tensor* cond) const {
  if (y.cols() != spec_.a_dim) throw DimensionError("BanditRewardEnergy: action width mismatch");
  if (spec_.s_dim > 0 && (cond == nullptr || cond->rows() != y.rows())) {
    throw DimensionError("BanditRewardEnergy: one state row per action required");
  }
  Tensor g(y.shape());
  const std::size_t d = spec_.a_dim;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const std::span<const float> s = cond ? cond->row(r) : std::span<const float>{};
    auto a = y.row(r);
    if (spec_.reward == RewardId::negdist_goal) {
      const auto goal = spec_.goal_at(s);
      for (std::size_t i = 0; i < d; ++i) g(r, i) = spec_.reward_scale * (a[i] - goal[i]);
    } else {
      const float var = spec_.bump_sd * spec_.bump_sd;
      for (std::size_t j = 0; j < spec_.bump_centers.size(); ++j) {
        const auto& c = spec_.bump_centers[j];
        float d2 = 0.0f;
        for (std::size_t i = 0; i < d; ++i) d2 += (a[i] - c[i]) * (a[i] - c[i]);
        const float k = spec_.bump_weights[j] * std::exp(-d2 / (2.0f * var)) / var;
        for (std::size_t i = 0; i < d; ++i) g(r, i) += k * (a[i] - c[i]);
      }
    }
  }
  return g;
}

// ---- Point mass -------------------------------------------------------------

void PointMassSpec::validate() const {
  if (!(lo < hi)) throw ConfigError("pointmass: lo must be below hi");
  if (goal.size() != dim || start_center.size() != dim) throw ConfigError("pointmass: goal/start must be 2-D");
  if (!(max_action > 0.0f)) throw ConfigError("pointmass: max_action must be positive");
  if (horizon < 1) throw ConfigError("pointmass: horizon must be >= 1");
  if (!(noise_sd >= 0.0f)) throw ConfigError("pointmass: noise_sd must be >= 0");
  if (!(start_halfwidth >= 0.0f)) throw ConfigError("pointmass: start_halfwidth must be >= 0");
}

StepResult pointmass_step(const PointMassSpec& spec, std::span<const float> s, std::span<const float> a, int t,
                          Rng& rng) {
  if (s.size() != PointMassSpec::dim || a.size() != PointMassSpec::dim) {
    throw DimensionError("pointmass_step: state and action must be 2-D");
  }
  StepResult out;
  out.s_next.resize(PointMassSpec::dim);
  float d2 = 0.0f;
  for (std::size_t i = 0; i < PointMassSpec::dim; ++i) {
    const float ai = std::clamp(a[i], -1.0f, 1.0f);
    const float noise = spec.noise_sd > 0.0f ? spec.noise_sd * rng.normalf() : 0.0f;
    out.s_next[i] = std::clamp(s[i] + spec.max_action * ai + noise, spec.lo, spec.hi);
    const float diff = out.s_next[i] - spec.goal[i];
    d2 += diff * diff;
  }
  out.reward = -std::sqrt(d2);
  out.done = t + 1 >= spec.horizon;
  return out;
}

std::vector<float> pointmass_reset(const PointMassSpec& spec, Rng& rng) {
  std::vector<float> s(PointMassSpec::dim);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = spec.start_center[i] +
           static_cast<float>(rng.uniform(-spec.start_halfwidth, spec.start_halfwidth));
    s[i] = std::clamp(s[i], spec.lo, spec.hi);
  }
  return s;
}

std::vector<float> pointmass_greedy_action(const PointMassSpec& spec, std::span<const float> s) {
  std::vector<float> a(PointMassSpec::dim);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp((spec.goal[i] - s[i]) / spec.max_action, -1.0f, 1.0f);
  return a;
}

BehaviorQuality behavior_quality_from_string(std::string_view name) {
  if (name == "random") return BehaviorQuality::random;
  if (name == "medium") return BehaviorQuality::medium;
  if (name == "mixed") return BehaviorQuality::mixed;
  throw ConfigError("unknown behavior quality '" + std::string(name) + "'");
}

std::string_view to_string(BehaviorQuality q) {
  switch (q) {
    case BehaviorQuality::random: return "random";
    case BehaviorQuality::medium: return "medium";
    case BehaviorQuality::mixed: return "mixed";
  }
  return "?";
}

OfflineDataset gen_pointmass_dataset(const PointMassSpec& spec, std::size_t n_episodes, BehaviorQuality quality,
                                     std::uint64_t seed) {
  spec.validate();
  if (n_episodes == 0) throw InputError("gen_pointmass_dataset: n_episodes must be >= 1");
  Rng rng = Rng::stream(seed, "data");
  const auto h = static_cast<std::size_t>(spec.horizon);
  OfflineDataset d = OfflineDataset::empty(2, 2, n_episodes * h);
  std::size_t row = 0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    bool greedy = quality == BehaviorQuality::medium;
    if (quality == BehaviorQuality::mixed) greedy = rng.uniform() < 0.5;
    std::vector<float> s = pointmass_reset(spec, rng);
    for (int t = 0; t < spec.horizon; ++t, ++row) {
      std::vector<float> a(2);
      if (greedy) {
        a = pointmass_greedy_action(spec, s);
        for (float& v : a) v = std::clamp(v + 0.3f * rng.normalf(), -1.0f, 1.0f);
      } else {
        for (float& v : a) v = static_cast<float>(rng.uniform(-1.0, 1.0));
      }
      const StepResult step = pointmass_step(spec, s, a, t, rng);
      std::copy(s.begin(), s.end(), d.s.row(row).begin());
      std::copy(a.begin(), a.end(), d.a.row(row).begin());
      d.r[row] = step.reward;
      std::copy(step.s_next.begin(), step.s_next.end(), d.s_next.row(row).begin());
      d.done[row] = step.done ? 1.0f : 0.0f;
      s = step.s_next;
    }
  }
  d.seed = seed;
  d.spec_hash = pointmass_dataset_hash(spec, n_episodes, quality);
  return d;
}

std::uint64_t pointmass_dataset_hash(const PointMassSpec& spec, std::size_t n_episodes, BehaviorQuality quality) {
  nlohmann::json tag = to_json(spec);
  tag["behavior_quality"] = std::string(to_string(quality));
  tag["episodes"] = n_episodes;
  return spec_hash(tag);
}

// ---- Serialisation ----------------------------------------------------------

nlohmann::json to_json(const GmmSpec& spec) {
  nlohmann::json j = {{"means", spec.means}, {"sd", spec.sd}};
  if (!spec.weights.empty()) j["weights"] = spec.weights;
  return j;
}

GmmSpec gmm_spec_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"means", "sd", "weights"}, "gmm");
  GmmSpec g = GmmSpec::three_cluster();
  g.means = json_get(j, "means", g.means, "gmm");
  g.sd = json_get(j, "sd", g.sd, "gmm");
  g.weights = json_get(j, "weights", g.weights, "gmm");
  g.validate();
  return g;
}

nlohmann::json to_json(const BanditSpec& b) {
  nlohmann::json j = {{"s_dim", b.s_dim},
                      {"a_dim", b.a_dim},
                      {"state_lo", b.state_lo},
                      {"state_hi", b.state_hi},
                      {"behavior", to_json(b.behavior)},
                      {"behavior_gain", tensor_to_json(b.behavior_gain)},
                      {"reward", b.reward == RewardId::negdist_goal ? "negdist_goal" : "bimodal"},
                      {"goal", b.goal},
                      {"goal_gain", tensor_to_json(b.goal_gain)},
                      {"reward_scale", b.reward_scale},
                      {"bump_centers", b.bump_centers},
                      {"bump_weights", b.bump_weights},
                      {"bump_sd", b.bump_sd}};
  return j;
}

BanditSpec bandit_spec_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"preset", "s_dim", "a_dim", "state_lo", "state_hi", "behavior", "behavior_gain", "reward",
                       "goal", "goal_gain", "reward_scale", "bump_centers", "bump_weights", "bump_sd"},
                      "bandit");
  const auto preset = json_get<std::string>(j, "preset", "gaussian_1d", "bandit");
  BanditSpec b;
  if (preset == "gaussian_1d") {
    b = BanditSpec::gaussian_1d();
  } else if (preset == "bimodal_2d") {
    b = BanditSpec::bimodal_2d();
  } else {
    throw ConfigError("unknown bandit preset '" + preset + "'");
  }
  b.s_dim = json_get(j, "s_dim", b.s_dim, "bandit");
  b.a_dim = json_get(j, "a_dim", b.a_dim, "bandit");
  b.state_lo = json_get(j, "state_lo", b.state_lo, "bandit");
  b.state_hi = json_get(j, "state_hi", b.state_hi, "bandit");
  if (j.contains("behavior")) b.behavior = gmm_spec_from_json(j.at("behavior"));
  if (j.contains("behavior_gain")) b.behavior_gain = tensor_from_json(j.at("behavior_gain"), "bandit.behavior_gain");
  if (j.contains("reward")) {
    const auto r = json_get<std::string>(j, "reward", "", "bandit");
    if (r == "negdist_goal") {
      b.reward = RewardId::negdist_goal;
    } else if (r == "bimodal") {
      b.reward = RewardId::bimodal;
    } else {
      throw ConfigError("unknown reward id '" + r + "'");
    }
  }
  b.goal = json_get(j, "goal", b.goal, "bandit");
  if (j.contains("goal_gain")) b.goal_gain = tensor_from_json(j.at("goal_gain"), "bandit.goal_gain");
  b.reward_scale = json_get(j, "reward_scale", b.reward_scale, "bandit");
  b.bump_centers = json_get(j, "bump_centers", b.bump_centers, "bandit");
  b.bump_weights = json_get(j, "bump_weights", b.bump_weights, "bandit");
  b.bump_sd = json_get(j, "bump_sd", b.bump_sd, "bandit");
  b.validate();
  return b;
}

nlohmann::json to_json(const PointMassSpec& p) {
  return {{"lo", p.lo},
          {"hi", p.hi},
          {"goal", p.goal},
          {"max_action", p.max_action},
          {"horizon", p.horizon},
          {"noise_sd", p.noise_sd},
          {"start_center", p.start_center},
          {"start_halfwidth", p.start_halfwidth}};
}

PointMassSpec pointmass_spec_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"lo", "hi", "goal", "max_action", "horizon", "noise_sd", "start_center", "start_halfwidth"},
                      "pointmass");
  PointMassSpec p;
  p.lo = json_get(j, "lo", p.lo, "pointmass");
  p.hi = json_get(j, "hi", p.hi, "pointmass");
  p.goal = json_get(j, "goal", p.goal, "pointmass");
  p.max_action = json_get(j, "max_action", p.max_action, "pointmass");
  p.horizon = json_get(j, "horizon", p.horizon, "pointmass");
  p.noise_sd = json_get(j, "noise_sd", p.noise_sd, "pointmass");
  p.start_center = json_get(j, "start_center", p.start_center, "pointmass");
  p.start_halfwidth = json_get(j, "start_halfwidth", p.start_halfwidth, "pointmass");
  p.validate();
  return p;
}

std::uint64_t spec_hash(const nlohmann::json& j) { return fnv1a64(j.dump()); }

}  // namespace egflow
