#include "egflow/checkpoint.hpp"

#include <string>

#include "egflow/binary_io.hpp"
#include "egflow/envs.hpp"
#include "egflow/errors.hpp"

namespace egflow {

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, p] : components) {
    if (n == name) return true;
  }
  return false;
}

const MlpParams& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, p] : components) {
    if (n == name) return p;
  }
  throw CorruptionError("checkpoint has no component '" + name + "'");
}

std::uint64_t Checkpoint::config_hash() const { return spec_hash(config); }

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  nlohmann::json comps = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& [name, p] : ck.components) {
    const auto flat = p.flatten();
    comps.push_back({{"name", name},
                     {"layer_sizes", p.sizes},
                     {"activation", std::string(to_string(p.activation))},
                     {"offset", payload.size()},
                     {"count", flat.size()}});
    payload.insert(payload.end(), flat.begin(), flat.end());
  }
  const nlohmann::json manifest = {{"format", "egckpt"},
                                   {"version", 1},
                                   {"config_hash", hex64(ck.config_hash())},
                                   {"step", ck.step},
                                   {"config", ck.config},
                                   {"schedule", ck.schedule},
                                   {"components", comps},
                                   {"payload_values", payload.size()}};
  std::filesystem::create_directories(dir);
  write_bytes(dir / "payload.bin", encode_f32_le(payload));
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("checkpoint directory not found: " + dir.string());
  Checkpoint ck;
  struct Entry {
    std::string name;
    std::vector<std::size_t> sizes;
    std::string activation;
    std::size_t offset;
    std::size_t count;
  };
  std::vector<Entry> entries;
  std::size_t declared = 0;
  std::string hash;
  try {
    const auto m = nlohmann::json::parse(read_text(dir / "manifest.json"));
    if (m.at("format") != "egckpt" || m.at("version") != 1) throw CorruptionError("unsupported checkpoint format");
    ck.config = m.at("config");
    ck.step = m.at("step").get<std::size_t>();
    ck.schedule = m.at("schedule");
    hash = m.at("config_hash").get<std::string>();
    declared = m.at("payload_values").get<std::size_t>();
    for (const auto& c : m.at("components")) {
      entries.push_back({c.at("name").get<std::string>(), c.at("layer_sizes").get<std::vector<std::size_t>>(),
                         c.at("activation").get<std::string>(), c.at("offset").get<std::size_t>(),
                         c.at("count").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (hash != hex64(ck.config_hash())) throw CorruptionError("checkpoint config hash does not match its config");

  const auto bytes = read_bytes(dir / "payload.bin");
  if (bytes.size() != declared * 4) {
    throw CorruptionError("checkpoint payload holds " + std::to_string(bytes.size()) + " bytes, manifest declares " +
                          std::to_string(declared * 4));
  }
  const auto flat = decode_f32_le(bytes);
  std::size_t expect_offset = 0;
  for (const auto& e : entries) {
    if (e.sizes.size() < 2) throw CorruptionError("checkpoint component '" + e.name + "' has no layers");
    Activation act{};
    try {
      act = activation_from_string(e.activation);
    } catch (const ConfigError& err) {
      throw CorruptionError(std::string("checkpoint component '") + e.name + "': " + err.what());
    }
    MlpParams p = MlpParams::zeros(e.sizes, act);
    if (e.offset != expect_offset || e.count != p.parameter_count() || e.offset + e.count > flat.size()) {
      throw CorruptionError("checkpoint component '" + e.name + "' does not match the payload layout");
    }
    p.assign(std::span<const float>(flat).subspan(e.offset, e.count));
    expect_offset += e.count;
    ck.components.emplace_back(e.name, std::move(p));
  }
  if (expect_offset != flat.size()) throw CorruptionError("checkpoint payload has trailing values");
  return ck;
}

namespace {

nlohmann::json schedule_settings(const Schedule& s) {
  nlohmann::json j = schedule_to_json(s);
  j.erase("f_theta");
  return j;
}

}  // namespace

Checkpoint flow_checkpoint(const FlowModel& model, const Schedule& sched, const nlohmann::json& config,
                           std::size_t step) {
  Checkpoint ck;
  ck.config = config;
  ck.step = step;
  ck.schedule = schedule_settings(sched);
  ck.components.emplace_back("flow", model.net);
  if (sched.kind == ScheduleKind::learnable) ck.components.emplace_back("f_theta", sched.f_theta);
  return ck;
}

FlowModel flow_model_from_checkpoint(const Checkpoint& ck) {
  const MlpParams& net = ck.get("flow");
  FlowModel m;
  m.x_dim = net.output_dim();
  if (net.input_dim() < m.x_dim + 1) throw CorruptionError("flow network input narrower than x ⊕ t");
  m.cond_dim = net.input_dim() - m.x_dim - 1;
  m.net = net;
  return m;
}

Schedule schedule_from_checkpoint(const Checkpoint& ck) {
  nlohmann::json j = ck.schedule;
  if (ck.has("f_theta")) {
    const MlpParams& f = ck.get("f_theta");
    j["f_theta"] = {{"layer_sizes", f.sizes},
                    {"activation", std::string(to_string(f.activation))},
                    {"params", f.flatten()}};
  }
  try {
    return schedule_from_json(j);
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint schedule: ") + e.what());
  }
}

Checkpoint flowq_checkpoint(const FlowQState& st, const nlohmann::json& config) {
  Checkpoint ck;
  ck.config = config;
  ck.step = st.step;
  ck.schedule = schedule_settings(st.schedule);
  ck.components = {{"policy", st.policy.model.net},       {"q1", st.critics.q1},
                   {"q2", st.critics.q2},                 {"target_policy", st.targets.policy.model.net},
                   {"target_q1", st.targets.critics.q1}, {"target_q2", st.targets.critics.q2}};
  if (st.schedule.kind == ScheduleKind::learnable) ck.components.emplace_back("f_theta", st.schedule.f_theta);
  return ck;
}

FlowQState flowq_state_from_checkpoint(const Checkpoint& ck, const FlowQConfig& config) {
  const MlpParams& pol = ck.get("policy");
  const MlpParams& q1 = ck.get("q1");
  const std::size_t a_dim = pol.output_dim();
  if (pol.input_dim() < a_dim + 1) throw CorruptionError("policy network input narrower than a ⊕ t");
  const std::size_t s_dim = pol.input_dim() - a_dim - 1;
  if (q1.input_dim() != s_dim + a_dim) throw CorruptionError("critic width does not match the policy");

  FlowQState st;
  st.policy.model = FlowModel{a_dim, s_dim, pol};
  st.policy.steps = config.sample_steps;
  st.critics = CriticPair{s_dim, a_dim, q1, ck.get("q2")};
  st.targets.policy = FlowPolicy{FlowModel{a_dim, s_dim, ck.get("target_policy")}, config.sample_steps};
  st.targets.critics = CriticPair{s_dim, a_dim, ck.get("target_q1"), ck.get("target_q2")};
  st.targets.rho = config.rho;
  st.schedule = schedule_from_checkpoint(ck);
  const AdamConfig adam{.lr = config.lr, .clip_norm = config.grad_clip};
  st.policy_opt = AdamState::for_mlp(st.policy.model.net, adam);
  st.q1_opt = AdamState::for_mlp(st.critics.q1, adam);
  st.q2_opt = AdamState::for_mlp(st.critics.q2, adam);
  if (st.schedule.kind == ScheduleKind::learnable) st.sched_opt = AdamState::for_mlp(st.schedule.f_theta, adam);
  st.step = ck.step;
  return st;
}

}  // namespace egflow
