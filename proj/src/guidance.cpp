#include "egflow/guidance.hpp"

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>

#include "egflow/errors.hpp"

namespace egflow {

namespace {

bool guidance_active(const Schedule& s) { return s.lambda != 0.0; }

Tensor scaled_rows(const Tensor& x1, std::span<const float> t) {
  if (t.size() != x1.rows()) throw DimensionError("guidance: one time per row required");
  Tensor y(x1.shape());
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    for (std::size_t j = 0; j < x1.cols(); ++j) y(r, j) = t[r] * x1(r, j);
  }
  return y;
}

std::vector<GuidanceCoeffs> coeffs_for(const Schedule& s, std::span<const float> t) {
  std::vector<GuidanceCoeffs> c(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) c[i] = guidance_coeffs(s, t[i]);
  return c;
}

Tensor checked_grad(const EnergyFn& energy, const Tensor& y, const Tensor* cond) {
  Tensor g = energy.grad(y, cond);
  require_same_shape(y, g, "energy gradient");
  g.check_finite("energy gradient");
  return g;
}

// out -= coeff_r * g_r
void sub_scaled(Tensor& out, const std::vector<GuidanceCoeffs>& c, const Tensor& g, bool use_shift) {
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto k = static_cast<float>(use_shift ? c[r].shift : -c[r].drift);
    for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) -= k * g(r, j);
  }
}

}  // namespace

Tensor guided_mean(const Tensor& x1, std::span<const float> t, const EnergyFn& energy, const Schedule& sched,
                   const Tensor* cond) {
  Tensor y = scaled_rows(x1, t);
  if (!guidance_active(sched)) return y;
  const Tensor g = checked_grad(energy, y, cond);
  sub_scaled(y, coeffs_for(sched, t), g, true);
  return y;
}

Tensor guided_sample(const Tensor& x1, const Tensor& eps, std::span<const float> t, const EnergyFn& energy,
                     const Schedule& sched, const Tensor* cond) {
  Tensor x = linear_path_sample(x1, eps, t);
  if (!guidance_active(sched)) return x;
  const Tensor g = checked_grad(energy, scaled_rows(x1, t), cond);
  sub_scaled(x, coeffs_for(sched, t), g, true);
  return x;
}

Tensor energy_hvp(const EnergyFn& energy, const Tensor& y, const Tensor& v, const Tensor* cond) {
  require_same_shape(y, v, "energy_hvp");
  Tensor out = energy.hvp(y, v, cond);
  require_same_shape(y, out, "energy_hvp result");
  out.check_finite("energy_hvp");
  return out;
}

Tensor guided_cond_velocity(const Tensor& x_t, const Tensor& x1, std::span<const float> t,
                            const EnergyFn& energy, const Schedule& sched, const Tensor* cond) {
  Tensor u = linear_cond_velocity(x_t, x1, t);
  if (!guidance_active(sched)) return u;
  const Tensor y = scaled_rows(x1, t);
  const Tensor g = checked_grad(energy, y, cond);
  const Tensor hx = energy_hvp(energy, y, x1, cond);
  const auto c = coeffs_for(sched, t);
  sub_scaled(u, c, g, false);
  sub_scaled(u, c, hx, true);
  return u;
}

GuidedTargets guided_targets(const Tensor& x1, const FlowDraws& draws, const EnergyFn& energy,
                             const Schedule& sched, const Tensor* cond) {
  GuidedTargets out;
  out.x_t = linear_path_sample(x1, draws.eps, draws.t);
  if (!guidance_active(sched)) {
    out.target = linear_cond_velocity(out.x_t, x1, draws.t);
    return out;
  }
  const Tensor y = scaled_rows(x1, draws.t);
  const Tensor g = checked_grad(energy, y, cond);
  const Tensor hx = energy_hvp(energy, y, x1, cond);
  const auto c = coeffs_for(sched, draws.t);
  sub_scaled(out.x_t, c, g, true);
  out.target = linear_cond_velocity(out.x_t, x1, draws.t);
  sub_scaled(out.target, c, g, false);
  sub_scaled(out.target, c, hx, true);
  return out;
}

float egfm_loss(const FlowModel& model, const Tensor& x1, const FlowDraws& draws, const EnergyFn& energy,
                const Schedule& sched, const Tensor* cond) {
  if (x1.rows() == 0) throw InputError("egfm_loss: empty batch");
  const GuidedTargets gt = guided_targets(x1, draws, energy, sched, cond);
  return regression_loss(model.velocity(gt.x_t, draws.t, cond), gt.target);
}

float egfm_loss(const FlowModel& model, const Tensor& x1, Rng& rng, const EnergyFn& energy,
                const Schedule& sched, const Tensor* cond) {
  return egfm_loss(model, x1, FlowDraws::sample(x1.rows(), x1.cols(), rng), energy, sched, cond);
}

float egfm_train_step(FlowModel& model, AdamState& opt, const Tensor& x1, const FlowDraws& draws,
                      const EnergyFn& energy, Schedule& sched, AdamState* sched_opt, const Tensor* cond) {
  if (x1.rows() == 0) throw InputError("egfm_train_step: empty batch");
  if (sched.kind != ScheduleKind::learnable || !guidance_active(sched)) {
    const GuidedTargets gt = guided_targets(x1, draws, energy, sched, cond);
    return velocity_regression_step(model, opt, gt.x_t, draws.t, cond, gt.target);
  }
  if (sched_opt == nullptr) throw StateError("egfm_train_step: learnable schedule needs its own optimiser");

  // Learnable h: the guided point and target both depend on f_θ, so they are
  // recorded on the tape. ∇E and the HVP at t x1 do not depend on θ.
  const std::size_t n = x1.rows();
  const std::span<const float> t = draws.t;
  const Tensor y = scaled_rows(x1, t);
  const Tensor g = checked_grad(energy, y, cond);
  const Tensor hx = energy_hvp(energy, y, x1, cond);
  const auto b = static_cast<float>(sched.base());
  std::vector<float> shift_k(n);
  std::vector<float> drift_k(n);
  std::vector<float> one_minus(n);
  std::vector<float> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float u = 1.0f - t[i];
    shift_k[i] = b * u * u;
    drift_k[i] = b * u;
    one_minus[i] = u;
    inv[i] = 1.0f / u;
  }

  Tape tape;
  MlpBinding sched_binding;
  const TapedSchedule hs = learnable_schedule_taped(sched.f_theta, t, tape, &sched_binding);
  Var shift = mul(tape.constant(Tensor::column(shift_k)), hs.h);
  Var drift = mul(tape.constant(Tensor::column(drift_k)), sub(hs.h, mul(tape.constant(Tensor::column(one_minus)), hs.dh)));
  Var gv = tape.constant(g);
  Var x1v = tape.constant(x1);
  Var x_t = sub(tape.constant(linear_path_sample(x1, draws.eps, t)), mul_col(shift, gv));
  Var target = mul_col(tape.constant(Tensor::column(inv)), sub(x1v, x_t));
  target = sub(add(target, mul_col(drift, gv)), mul_col(shift, tape.constant(hx)));
  Var tcol = tape.constant(Tensor::column(t));
  Var cv;
  if (cond) cv = tape.constant(*cond);
  MlpBinding model_binding;
  Var pred = model.velocity(tape, x_t, tcol, cond ? &cv : nullptr, &model_binding);
  Var loss = scale(sum(square(sub(pred, target))), 1.0f / static_cast<float>(n));
  tape.backward(loss);
  const float value = loss.value().item();
  adam_step(model.net, model_binding.grads(tape), opt);
  adam_step(sched.f_theta, sched_binding.grads(tape), *sched_opt);
  return value;
}

FlowTrainResult train_guided_flow(const Tensor& x1, const Tensor* cond, const EnergyFn* energy, Schedule sched,
                                  const FlowTrainOptions& opts, std::uint64_t seed) {
  const std::size_t n = x1.rows();
  if (n == 0) throw InputError("train_guided_flow: empty data");
  if (opts.steps == 0 || opts.batch_size == 0 || opts.log_interval == 0) {
    throw ConfigError("train_guided_flow: steps, batch_size and log_interval must be positive");
  }
  if (cond && cond->rows() != n) throw DimensionError("train_guided_flow: conditioning rows differ from data rows");
  if (energy == nullptr && sched.lambda > 0.0) throw ConfigError("train_guided_flow: positive lambda needs an energy");

  const Rng init = Rng::stream(seed, "init");
  Rng model_rng = init.fork(0);
  FlowTrainResult res;
  res.model = FlowModel::create(x1.cols(), cond ? cond->cols() : 0, opts.hidden, opts.activation, model_rng);
  if (sched.kind == ScheduleKind::learnable && sched.f_theta.weights.empty()) {
    Rng sched_rng = init.fork(2);
    sched.f_theta = Schedule::make(ScheduleKind::learnable, sched.lambda, &sched_rng).f_theta;
  }
  sched.validate();
  if (energy && sched.lambda > 0.0) apply_energy_scale(sched, energy_scale_estimate(x1, *energy, cond));
  // With λ = 0 the energy is never evaluated; the placeholder only fills the reference.
  const QuadraticEnergy placeholder = QuadraticEnergy::isotropic(x1.cols());
  const EnergyFn& e = energy ? *energy : placeholder;

  const AdamConfig adam{.lr = opts.lr};
  AdamState opt = AdamState::for_mlp(res.model.net, adam);
  std::optional<AdamState> sched_opt;
  if (sched.kind == ScheduleKind::learnable) sched_opt = AdamState::for_mlp(sched.f_theta, adam);

  const Rng train = Rng::stream(seed, "train");
  Rng batch_rng = train.fork(0);
  Rng draw_rng = train.fork(2);
  std::vector<std::size_t> idx(opts.batch_size);
  double acc = 0.0;
  std::size_t window = 0;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    for (auto& i : idx) i = static_cast<std::size_t>(batch_rng.below(n));
    const Tensor xb = gather_rows(x1, idx);
    std::optional<Tensor> cb;
    if (cond) cb = gather_rows(*cond, idx);
    const FlowDraws draws = FlowDraws::sample(idx.size(), x1.cols(), draw_rng);
    float loss = 0.0f;
    try {
      loss = egfm_train_step(res.model, opt, xb, draws, e, sched, sched_opt ? &*sched_opt : nullptr,
                             cb ? &*cb : nullptr);
      if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    } catch (const NumericError& err) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + err.what());
    }
    acc += loss;
    ++window;
    const std::size_t done = step + 1;
    if (done == 1 || done % opts.log_interval == 0 || done == opts.steps) {
      res.log.push_back({done, acc / static_cast<double>(window)});
      acc = 0.0;
      window = 0;
    }
  }
  res.schedule = std::move(sched);
  return res;
}

std::string loss_csv(const std::vector<LossRow>& rows) {
  std::ostringstream out;
  out << "step,loss\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", r.step, r.loss);
    out << buf;
  }
  return out.str();
}

}  // namespace egflow
