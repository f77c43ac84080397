#include "egflow/cli.hpp"

#include <Eigen/Core>
#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "egflow/bench.hpp"
#include "egflow/binary_io.hpp"
#include "egflow/checkpoint.hpp"
#include "egflow/dataset.hpp"
#include "egflow/errors.hpp"
#include "egflow/guidance.hpp"
#include "egflow/oracle.hpp"
#include "egflow/run_config.hpp"

namespace egflow {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

// Flags shared by the commands that resolve a RunConfig. Optional members
// are applied on top of the config file only when given.
struct CommonFlags {
  std::string config;
  std::string out;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_data) {
  cmd->add_option("--config", f.config, "JSON run config");
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--seed", f.seed, "root seed");
  if (with_data) cmd->add_option("--data", f.data, "dataset directory");
}

// defaults < dataset's generation settings < --config file < flags
RunConfig resolve(const CommonFlags& f, const nlohmann::json& flag_patch) {
  RunConfig cfg;
  std::string data = f.data;
  nlohmann::json file;
  if (!f.config.empty()) {
    file = read_json_file(f.config);
    if (!file.is_object()) throw ConfigError("config: expected an object");
    if (data.empty() && file.contains("data") && file["data"].is_string()) data = file["data"].get<std::string>();
  }
  if (!data.empty()) {
    const fs::path gen = fs::path(data) / "config.resolved.json";
    if (fs::exists(gen)) {
      const nlohmann::json g = read_json_file(gen);
      nlohmann::json inherit = nlohmann::json::object();
      for (const char* key : {"task", "seed", "gmm", "bandit", "pointmass", "gen"}) {
        if (g.contains(key)) inherit[key] = g[key];
      }
      cfg = merge_run_config(cfg, inherit);
    }
  }
  if (!file.is_null()) cfg = merge_run_config(cfg, file);
  nlohmann::json patch = flag_patch;
  if (f.task) patch["task"] = *f.task;
  if (f.seed) patch["seed"] = *f.seed;
  if (!data.empty()) patch["data"] = data;
  if (!patch.empty()) cfg = merge_run_config(cfg, patch);
  cfg.validate();
  return cfg;
}

void check_out_dir(const std::string& out, const std::string& data) {
  if (out.empty()) throw ConfigError("--out must not be empty");
  if (!data.empty() && fs::exists(data) && fs::exists(out) && fs::equivalent(out, data)) {
    throw ConfigError("--out must differ from the dataset directory");
  }
}

OfflineDataset load_checked(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("data: no dataset directory given");
  OfflineDataset d = load_dataset(cfg.data);
  if (d.spec_hash != cfg.dataset_hash()) {
    throw ConfigError("data: dataset was generated from a different '" + std::string(to_string(cfg.task)) +
                      "' spec than the config describes");
  }
  return d;
}

void write_resolved(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  write_text(out / "config.resolved.json", to_json(cfg).dump(2) + "\n");
}

PolicyEval make_policy_eval(const RunConfig& cfg, std::size_t episodes, std::uint64_t seed) {
  if (cfg.task == TaskId::pointmass) {
    return [spec = cfg.pointmass, episodes, seed](const FlowPolicy& p) {
      return eval_policy_return([&](const Tensor& s, Rng& r) { return sample_action(p, s, r); }, spec, episodes,
                                seed);
    };
  }
  if (cfg.task == TaskId::bandit) {
    return [spec = cfg.bandit, episodes, seed](const FlowPolicy& p) {
      return eval_bandit_return([&](const Tensor& s, Rng& r) { return sample_action(p, s, r); }, spec, episodes,
                                seed);
    };
  }
  return {};
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(9);
  o << v;
  return o.str();
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen_data(const CommonFlags& f, const nlohmann::json& patch, std::ostream& out) {
  const RunConfig cfg = resolve(f, patch);
  check_out_dir(f.out, "");
  const OfflineDataset d = generate_dataset(cfg);
  save_dataset(d, f.out);
  write_resolved(cfg, f.out);
  out << "wrote " << d.size() << " transitions to " << f.out << "\n";
  return 0;
}

int cmd_train_flow(const CommonFlags& f, const nlohmann::json& patch, std::ostream& out) {
  const RunConfig cfg = resolve(f, patch);
  check_out_dir(f.out, cfg.data);
  const OfflineDataset d = load_checked(cfg);
  const auto energy = cfg.flow_energy();
  Schedule sched;
  sched.kind = cfg.flow.schedule;
  sched.lambda = cfg.flow.lambda;
  sched.rescale = cfg.flow.rescale;
  const FlowTrainOptions opts{cfg.flow.hidden, cfg.flow.activation, cfg.flow.steps, cfg.flow.batch_size,
                              cfg.flow.lr, cfg.flow.log_interval};
  const Tensor* cond = d.s_dim > 0 ? &d.s : nullptr;
  write_resolved(cfg, f.out);
  const FlowTrainResult res = train_guided_flow(d.a, cond, energy.get(), sched, opts, cfg.seed);
  write_text(fs::path(f.out) / "metrics.csv", loss_csv(res.log));
  save_checkpoint(flow_checkpoint(res.model, res.schedule, to_json(cfg), cfg.flow.steps),
                  fs::path(f.out) / "checkpoint");
  out << "loss " << fmt(res.log.front().loss) << " -> " << fmt(res.log.back().loss) << "\n";
  return 0;
}

int cmd_train_flowq(const CommonFlags& f, const nlohmann::json& patch, std::ostream& out) {
  const RunConfig cfg = resolve(f, patch);
  check_out_dir(f.out, cfg.data);
  if (cfg.task == TaskId::gmm3) throw ConfigError("task: train-flowq needs a bandit or pointmass dataset");
  const OfflineDataset d = load_checked(cfg);
  write_resolved(cfg, f.out);
  const TrainResult res = train_flowq(d, cfg.flowq, cfg.seed, make_policy_eval(cfg, cfg.flowq.eval_episodes, cfg.seed));
  write_text(fs::path(f.out) / "metrics.csv", metrics_csv(res.metrics));
  save_checkpoint(flowq_checkpoint(res.state, to_json(cfg)), fs::path(f.out) / "checkpoint");
  const auto& last = res.metrics.back();
  out << "step " << last.step << " policy_loss " << fmt(last.policy_loss);
  if (last.eval_return_mean) out << " return " << fmt(*last.eval_return_mean);
  out << "\n";
  return 0;
}

struct EvalFlags {
  std::string checkpoint;
  std::string out;
  std::size_t episodes = 20;
  std::size_t samples = 10000;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  if (f.episodes == 0 || f.samples == 0) throw ConfigError("--episodes and --samples must be positive");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const RunConfig cfg = run_config_from_json(ck.config);
  const std::uint64_t seed = f.seed.value_or(cfg.seed);
  nlohmann::json report = {{"checkpoint", f.checkpoint}, {"seed", seed}, {"step", ck.step}};
  fs::create_directories(f.out);
  if (ck.has("policy")) {
    const FlowQState st = flowq_state_from_checkpoint(ck, cfg.flowq);
    const PolicyEval ev = make_policy_eval(cfg, f.episodes, seed);
    if (!ev) throw ConfigError("task: no evaluator for '" + std::string(to_string(cfg.task)) + "'");
    const ReturnStats rs = ev(st.policy);
    report["return_mean"] = rs.mean;
    report["return_sd"] = rs.sd;
    report["returns"] = rs.returns;
    out << "return " << fmt(rs.mean) << " +- " << fmt(rs.sd) << "\n";
  } else {
    const FlowModel m = flow_model_from_checkpoint(ck);
    if (m.cond_dim > 0) throw ConfigError("eval: conditional flows are evaluated through the oracle command");
    Rng rng = Rng::stream(seed, "eval");
    const Tensor x = sample_flow(m, f.samples, cfg.flow.sample_steps, rng);
    std::ostringstream csv;
    for (std::size_t j = 0; j < x.cols(); ++j) csv << (j ? "," : "") << "x" << j;
    csv << "\n";
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t j = 0; j < x.cols(); ++j) csv << (j ? "," : "") << fmt(x(r, j));
      csv << "\n";
    }
    write_text(fs::path(f.out) / "samples.csv", csv.str());
    std::vector<double> mean(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += x(r, j) / static_cast<double>(x.rows());
    }
    report["sample_mean"] = mean;
    report["samples"] = f.samples;
  }
  write_text(fs::path(f.out) / "eval.json", report.dump(2) + "\n");
  return 0;
}

struct OracleFlags {
  CommonFlags common;
  std::string checkpoint;
  std::size_t grid = 128;
  std::size_t samples = 20000;
  std::vector<float> state;
};

int cmd_oracle(OracleFlags& f, const nlohmann::json& patch, std::ostream& out) {
  RunConfig cfg;
  double lambda = 0.0;
  std::optional<FlowModel> model;
  if (!f.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    cfg = run_config_from_json(ck.config);
    lambda = schedule_from_checkpoint(ck).lambda;
    model = flow_model_from_checkpoint(ck);
    if (!patch.empty() || f.common.seed || f.common.task || !f.common.config.empty()) {
      throw ConfigError("oracle: with --checkpoint the task and energy come from the checkpoint");
    }
  } else {
    cfg = resolve(f.common, patch);
    lambda = cfg.flow.lambda;
  }
  if (f.grid < 16) throw ConfigError("--grid must be >= 16");
  check_out_dir(f.common.out, "");

  DensityGrid post;
  std::optional<Tensor> cond_rows;
  if (cfg.task == TaskId::gmm3) {
    if (cfg.gmm.dim() > 2) throw ConfigError("gmm: oracle grids support at most 2 dimensions");
    const GridSpec grid = GridSpec::square(cfg.gmm.dim(), -1.5, 1.5, f.grid);
    const auto energy = cfg.flow_energy();
    const DensityFn p = [&](std::span<const float> x) { return cfg.gmm.density(x); };
    post = energy ? grid_posterior(p, *energy, lambda, grid) : density_grid(p, grid);
  } else if (cfg.task == TaskId::bandit) {
    if (cfg.bandit.a_dim > 2) throw ConfigError("bandit: oracle grids support at most 2 action dimensions");
    std::vector<float> s = f.state;
    if (s.empty()) s.assign(cfg.bandit.s_dim, 0.0f);
    if (s.size() != cfg.bandit.s_dim) throw ConfigError("--state: expected " + std::to_string(cfg.bandit.s_dim) + " values");
    post = bandit_policy_oracle(s, cfg.bandit, lambda, GridSpec::square(cfg.bandit.a_dim, -1.0, 1.0, f.grid));
    Tensor c = Tensor::matrix(f.samples, s.size());
    for (std::size_t r = 0; r < f.samples; ++r) std::copy(s.begin(), s.end(), c.row(r).begin());
    cond_rows = std::move(c);
  } else {
    throw ConfigError("task: the oracle covers gmm3 and bandit");
  }

  fs::create_directories(f.common.out);
  write_density_csv(post, fs::path(f.common.out) / "posterior.csv");
  nlohmann::json report = {{"task", std::string(to_string(cfg.task))},
                           {"lambda", lambda},
                           {"posterior_mean", post.mean()},
                           {"posterior_variance", post.variance()}};
  if (model) {
    Rng rng = Rng::stream(cfg.seed, "eval");
    const Tensor x = sample_flow(*model, f.samples, cfg.flow.sample_steps, rng, cond_rows ? &*cond_rows : nullptr);
    const double coverage = grid_coverage(x, post.grid);
    report["coverage"] = coverage;
    // Too few samples on the grid leaves KL undefined; say so in the report
    // rather than failing after posterior.csv is written.
    try {
      report["kl"] = kl_estimate(x, post);
    } catch (const CoverageError&) {
      report["kl"] = nullptr;
    }
    const Tensor ref = post.sample(f.samples, rng);
    std::vector<double> w1;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      std::vector<float> a(x.rows());
      std::vector<float> b(ref.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) a[r] = x(r, j);
      for (std::size_t r = 0; r < ref.rows(); ++r) b[r] = ref(r, j);
      w1.push_back(wasserstein1d(a, b));
    }
    report["w1_marginals"] = w1;
    if (report["kl"].is_null()) {
      out << "kl undefined: only " << fmt(coverage) << " of samples inside the grid\n";
    } else {
      out << "kl " << fmt(report["kl"].get<double>()) << "\n";
    }
  } else {
    write_resolved(cfg, f.common.out);
  }
  write_text(fs::path(f.common.out) / "oracle.json", report.dump(2) + "\n");
  return 0;
}

struct BenchFlags {
  CommonFlags common;
  std::vector<int> t_list{5, 20, 100};
  std::size_t steps = 1000;
  std::size_t repetitions = 3;
};

int cmd_bench(const BenchFlags& f, const nlohmann::json& patch, std::ostream& out) {
  const RunConfig cfg = resolve(f.common, patch);
  check_out_dir(f.common.out, "");
  Eigen::setNbThreads(1);
  BenchOptions opts;
  opts.steps = f.steps;
  opts.repetitions = f.repetitions;
  opts.seed = cfg.seed;
  write_resolved(cfg, f.common.out);
  const auto rows = bench_policy_update_time(cfg.flowq, f.t_list, opts);
  const std::string csv = bench_csv(rows);
  write_text(fs::path(f.common.out) / "bench.csv", csv);
  out << csv;
  return 0;
}

int apply_thread_env() {
  const char* v = std::getenv("EGFLOW_THREADS");
  if (v == nullptr || *v == '\0') return 0;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("EGFLOW_THREADS must be a positive integer");
  Eigen::setNbThreads(static_cast<int>(n));
  return static_cast<int>(n);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Energy-guided flow matching and FlowQ"};
  app.require_subcommand(1);

  // Flag values destined for the config are collected as a JSON patch.
  nlohmann::json patch = nlohmann::json::object();
  auto set_path = [&patch](const std::string& section, const std::string& key) {
    return [&patch, section, key](const auto& v) {
      if (section.empty()) {
        patch[key] = v;
      } else {
        patch[section][key] = v;
      }
    };
  };

  CommonFlags gen_f;
  auto* gen = app.add_subcommand("gen-data", "generate an offline dataset");
  add_common(gen, gen_f, false);
  gen->add_option("--task", gen_f.task, "gmm3 | bandit | pointmass");
  gen->add_option_function<std::size_t>("--n", set_path("gen", "n"), "samples (gmm3, bandit)");
  gen->add_option_function<std::size_t>("--episodes", set_path("gen", "episodes"), "episodes (pointmass)");
  gen->add_option_function<std::string>("--quality", set_path("gen", "quality"), "random | medium | mixed");

  CommonFlags flow_f;
  auto* tflow = app.add_subcommand("train-flow", "train an (energy-guided) flow on a dataset");
  add_common(tflow, flow_f, true);
  tflow->add_option_function<std::string>("--schedule", set_path("flow", "schedule"), "schedule kind");
  tflow->add_option_function<double>("--lambda", set_path("flow", "lambda"), "guidance scale");
  tflow->add_option_function<std::size_t>("--steps", set_path("flow", "steps"), "gradient steps");
  tflow->add_option_function<std::string>("--energy", set_path("flow", "energy"), "auto | none | in | out | reward");
  tflow->add_option_function<std::size_t>("--batch-size", set_path("flow", "batch_size"), "batch size");
  tflow->add_option_function<float>("--lr", set_path("flow", "lr"), "learning rate");
  tflow->add_option_function<std::size_t>("--log-interval", set_path("flow", "log_interval"), "metrics interval");

  CommonFlags fq_f;
  auto* tfq = app.add_subcommand("train-flowq", "train FlowQ on an offline RL dataset");
  add_common(tfq, fq_f, true);
  tfq->add_option_function<std::string>("--schedule", set_path("flowq", "schedule"), "schedule kind");
  tfq->add_option_function<double>("--lambda", set_path("flowq", "lambda"), "guidance scale");
  tfq->add_option_function<std::size_t>("--steps", set_path("flowq", "gradient_steps"), "gradient steps");
  tfq->add_option_function<std::size_t>("--eval-interval", set_path("flowq", "eval_interval"), "steps between evals");
  tfq->add_option_function<std::size_t>("--eval-episodes", set_path("flowq", "eval_episodes"), "rollouts per eval");
  tfq->add_option_function<std::string>("--reward-mode", set_path("flowq", "reward_mode"), "raw | standardize");
  tfq->add_flag_function(
      "--max-q-backup", [&patch](std::int64_t) { patch["flowq"]["max_q_backup"] = true; }, "max-Q backup");

  EvalFlags ev_f;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ev_f.checkpoint, "checkpoint directory")->required();
  ev->add_option("--out", ev_f.out, "output directory")->required();
  ev->add_option("--episodes", ev_f.episodes, "rollouts (policy checkpoints)");
  ev->add_option("--samples", ev_f.samples, "samples (flow checkpoints)");
  ev->add_option("--seed", ev_f.seed, "evaluation seed");

  OracleFlags or_f;
  auto* orc = app.add_subcommand("oracle", "grid posterior, optionally compared with a trained flow");
  add_common(orc, or_f.common, false);
  orc->add_option("--task", or_f.common.task, "gmm3 | bandit");
  orc->add_option("--checkpoint", or_f.checkpoint, "flow checkpoint to compare");
  orc->add_option("--grid", or_f.grid, "grid points per dimension");
  orc->add_option("--samples", or_f.samples, "model samples");
  orc->add_option("--state", or_f.state, "bandit state")->delimiter(',');
  orc->add_option_function<double>("--lambda", set_path("flow", "lambda"), "tilt scale");
  orc->add_option_function<std::string>("--energy", set_path("flow", "energy"), "auto | none | in | out | reward");

  BenchFlags b_f;
  auto* bench = app.add_subcommand("bench-time", "time policy updates against backprop through sampling");
  add_common(bench, b_f.common, false);
  bench->add_option("--T", b_f.t_list, "sampling step counts")->delimiter(',');
  bench->add_option("--steps", b_f.steps, "updates per timing");
  bench->add_option("--repetitions", b_f.repetitions, "timings per cell (minimum kept)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? 0 : 2;
  }

  try {
    apply_thread_env();
    if (gen->parsed()) return cmd_gen_data(gen_f, patch, out);
    if (tflow->parsed()) return cmd_train_flow(flow_f, patch, out);
    if (tfq->parsed()) return cmd_train_flowq(fq_f, patch, out);
    if (ev->parsed()) return cmd_eval(ev_f, out);
    if (orc->parsed()) return cmd_oracle(or_f, patch, out);
    if (bench->parsed()) return cmd_bench(b_f, patch, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DegenerateError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace egflow
