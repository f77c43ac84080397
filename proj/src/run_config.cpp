#include "egflow/run_config.hpp"

#include <string>

#include "egflow/errors.hpp"
#include "egflow/json_util.hpp"

namespace egflow {

std::string_view to_string(TaskId t) {
  switch (t) {
    case TaskId::gmm3:
      return "gmm3";
    case TaskId::bandit:
      return "bandit";
    case TaskId::pointmass:
      return "pointmass";
  }
  return "?";
}

TaskId task_from_string(std::string_view name) {
  if (name == "gmm3") return TaskId::gmm3;
  if (name == "bandit") return TaskId::bandit;
  if (name == "pointmass") return TaskId::pointmass;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

namespace {

nlohmann::json gen_to_json(const GenConfig& g) {
  return {{"n", g.n}, {"episodes", g.episodes}, {"quality", std::string(to_string(g.quality))}};
}

GenConfig gen_from_json(const nlohmann::json& j) {
  constexpr std::string_view w = "gen";
  reject_unknown_keys(j, {"n", "episodes", "quality"}, w);
  GenConfig g;
  g.n = json_get(j, "n", g.n, w);
  g.episodes = json_get(j, "episodes", g.episodes, w);
  try {
    g.quality = behavior_quality_from_string(json_get(j, "quality", std::string(to_string(g.quality)), w));
  } catch (const InputError& e) {
    throw ConfigError(std::string("gen.quality: ") + e.what());
  }
  return g;
}

nlohmann::json flow_to_json(const FlowTrainConfig& f) {
  return {{"hidden", f.hidden},
          {"activation", std::string(to_string(f.activation))},
          {"steps", f.steps},
          {"batch_size", f.batch_size},
          {"lr", f.lr},
          {"sample_steps", f.sample_steps},
          {"log_interval", f.log_interval},
          {"schedule", std::string(to_string(f.schedule))},
          {"lambda", f.lambda},
          {"rescale_energy", std::string(to_string(f.rescale))},
          {"energy", f.energy},
          {"energy_component", f.energy_component}};
}

FlowTrainConfig flow_from_json(const nlohmann::json& j) {
  constexpr std::string_view w = "flow";
  reject_unknown_keys(j,
                      {"hidden", "activation", "steps", "batch_size", "lr", "sample_steps", "log_interval",
                       "schedule", "lambda", "rescale_energy", "energy", "energy_component"},
                      w);
  FlowTrainConfig f;
  f.hidden = json_get(j, "hidden", f.hidden, w);
  f.activation = activation_from_string(json_get(j, "activation", std::string(to_string(f.activation)), w));
  f.steps = json_get(j, "steps", f.steps, w);
  f.batch_size = json_get(j, "batch_size", f.batch_size, w);
  f.lr = json_get(j, "lr", f.lr, w);
  f.sample_steps = json_get(j, "sample_steps", f.sample_steps, w);
  f.log_interval = json_get(j, "log_interval", f.log_interval, w);
  f.schedule = schedule_kind_from_string(json_get(j, "schedule", std::string(to_string(f.schedule)), w));
  f.lambda = json_get(j, "lambda", f.lambda, w);
  f.rescale = rescale_mode_from_string(json_get(j, "rescale_energy", std::string(to_string(f.rescale)), w));
  f.energy = json_get(j, "energy", f.energy, w);
  f.energy_component = json_get(j, "energy_component", f.energy_component, w);
  return f;
}

// Library parsers report bad values with their own error types; the config
// layer reports everything as ConfigError.
template <typename F>
auto as_config(const char* where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string(where) + ": " + e.what());
  }
}

std::string resolved_energy(const RunConfig& c) {
  if (c.flow.energy != "auto") return c.flow.energy;
  switch (c.task) {
    case TaskId::gmm3:
      return "in";
    case TaskId::bandit:
      return "reward";
    case TaskId::pointmass:
      return "none";
  }
  return "none";
}

}  // namespace

void RunConfig::validate() const {
  as_config("gmm", [&] { gmm.validate(); });
  as_config("bandit", [&] { bandit.validate(); });
  as_config("pointmass", [&] { pointmass.validate(); });
  flowq.validate();
  if (gen.n == 0) throw ConfigError("gen.n must be positive");
  if (gen.episodes == 0) throw ConfigError("gen.episodes must be positive");
  if (flow.steps == 0) throw ConfigError("flow.steps must be positive");
  if (flow.batch_size == 0) throw ConfigError("flow.batch_size must be positive");
  if (!(flow.lr > 0.0f)) throw ConfigError("flow.lr must be positive");
  if (flow.sample_steps < 1) throw ConfigError("flow.sample_steps must be >= 1");
  if (flow.log_interval == 0) throw ConfigError("flow.log_interval must be positive");
  for (auto h : flow.hidden) {
    if (h == 0) throw ConfigError("flow.hidden entries must be positive");
  }
  if (!(flow.lambda >= 0.0)) throw ConfigError("flow.lambda must be >= 0");
  const std::string e = resolved_energy(*this);
  const bool known = e == "none" || e == "in" || e == "out" || e == "reward";
  if (!known) throw ConfigError("flow.energy: unknown energy '" + flow.energy + "'");
  if ((e == "in" || e == "out") && task != TaskId::gmm3) throw ConfigError("flow.energy: in/out need task gmm3");
  if (e == "reward" && task != TaskId::bandit) throw ConfigError("flow.energy: reward needs task bandit");
  if (e == "in" && flow.energy_component >= gmm.components()) {
    throw ConfigError("flow.energy_component: out of range");
  }
  if (e == "none" && flow.lambda > 0.0) throw ConfigError("flow.lambda: positive lambda needs an energy");
}

std::uint64_t RunConfig::dataset_hash() const {
  switch (task) {
    case TaskId::gmm3:
      return spec_hash(to_json(gmm));
    case TaskId::bandit:
      return spec_hash(to_json(bandit));
    case TaskId::pointmass:
      return pointmass_dataset_hash(pointmass, gen.episodes, gen.quality);
  }
  return 0;
}

std::unique_ptr<EnergyFn> RunConfig::flow_energy() const {
  const std::string e = resolved_energy(*this);
  if (e == "in") return std::make_unique<QuadraticEnergy>(gmm_energy_in(gmm, flow.energy_component));
  if (e == "out") return std::make_unique<QuadraticEnergy>(gmm_energy_out());
  if (e == "reward") return std::make_unique<BanditRewardEnergy>(bandit);
  return nullptr;
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"task", std::string(to_string(c.task))},
          {"seed", c.seed},
          {"data", c.data},
          {"gmm", to_json(c.gmm)},
          {"bandit", to_json(c.bandit)},
          {"pointmass", to_json(c.pointmass)},
          {"gen", gen_to_json(c.gen)},
          {"flow", flow_to_json(c.flow)},
          {"flowq", to_json(c.flowq)}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  constexpr std::string_view w = "config";
  reject_unknown_keys(j, {"task", "seed", "data", "gmm", "bandit", "pointmass", "gen", "flow", "flowq"}, w);
  RunConfig c;
  c.task = task_from_string(json_get(j, "task", std::string(to_string(c.task)), w));
  c.seed = json_get(j, "seed", c.seed, w);
  c.data = json_get(j, "data", c.data, w);
  if (j.contains("gmm")) c.gmm = as_config("gmm", [&] { return gmm_spec_from_json(j.at("gmm")); });
  if (j.contains("bandit")) c.bandit = as_config("bandit", [&] { return bandit_spec_from_json(j.at("bandit")); });
  if (j.contains("pointmass")) {
    c.pointmass = as_config("pointmass", [&] { return pointmass_spec_from_json(j.at("pointmass")); });
  }
  if (j.contains("gen")) c.gen = gen_from_json(j.at("gen"));
  if (j.contains("flow")) c.flow = flow_from_json(j.at("flow"));
  if (j.contains("flowq")) c.flowq = flowq_config_from_json(j.at("flowq"));
  c.validate();
  return c;
}

RunConfig merge_run_config(const RunConfig& base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  nlohmann::json merged = to_json(base);
  nlohmann::json patch = j;
  // A preset names a whole bandit spec, so it replaces rather than patches.
  if (patch.contains("bandit") && patch["bandit"].is_object() && patch["bandit"].contains("preset")) {
    merged["bandit"] = patch["bandit"];
    patch.erase("bandit");
  }
  merged.merge_patch(patch);
  return run_config_from_json(merged);
}

OfflineDataset generate_dataset(const RunConfig& c) {
  c.validate();
  switch (c.task) {
    case TaskId::gmm3:
      return gen_gmm_dataset(c.gmm, c.gen.n, c.seed);
    case TaskId::bandit:
      return gen_bandit_dataset(c.bandit, c.gen.n, c.seed);
    case TaskId::pointmass:
      return gen_pointmass_dataset(c.pointmass, c.gen.episodes, c.gen.quality, c.seed);
  }
  throw ConfigError("unknown task");
}

}  // namespace egflow
