#include "egflow/flow.hpp"

#include <string>

#include "egflow/errors.hpp"

namespace egflow {

namespace {

void check_time_rows(const Tensor& x, std::span<const float> t, const char* what) {
  if (t.size() != x.rows()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(t.size()) + " times for " +
                         std::to_string(x.rows()) + " rows");
  }
}

}  // namespace

Tensor linear_path_sample(const Tensor& x1, const Tensor& eps, float t) {
  std::vector<float> ts(x1.rows(), t);
  return linear_path_sample(x1, eps, ts);
}

Tensor linear_path_sample(const Tensor& x1, const Tensor& eps, std::span<const float> t) {
  require_same_shape(x1, eps, "linear_path_sample");
  check_time_rows(x1, t, "linear_path_sample");
  Tensor out(x1.shape());
  const std::size_t d = x1.cols();
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    const float tr = t[r];
    if (!(tr >= 0.0f && tr <= 1.0f)) throw DomainError("linear_path_sample: t outside [0,1]");
    for (std::size_t j = 0; j < d; ++j) {
      out(r, j) = tr * x1(r, j) + (1.0f - tr) * eps(r, j);
    }
  }
  return out;
}

Tensor linear_cond_velocity(const Tensor& x_t, const Tensor& x1, float t) {
  std::vector<float> ts(x1.rows(), t);
  return linear_cond_velocity(x_t, x1, ts);
}

Tensor linear_cond_velocity(const Tensor& x_t, const Tensor& x1, std::span<const float> t) {
  require_same_shape(x_t, x1, "linear_cond_velocity");
  check_time_rows(x1, t, "linear_cond_velocity");
  Tensor out(x1.shape());
  const std::size_t d = x1.cols();
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    const float tr = t[r];
    if (tr >= 1.0f) throw DomainError("linear_cond_velocity: singular at t = 1");
    if (tr < 0.0f) throw DomainError("linear_cond_velocity: t < 0");
    const float denom = 1.0f - tr;
    for (std::size_t j = 0; j < d; ++j) out(r, j) = (x1(r, j) - x_t(r, j)) / denom;
  }
  return out;
}

Tensor gaussian_cond_velocity(const Tensor& x_t, const Tensor& alpha, const Tensor& dalpha, float sigma,
                              float dsigma) {
  require_same_shape(x_t, alpha, "gaussian_cond_velocity");
  require_same_shape(x_t, dalpha, "gaussian_cond_velocity");
  if (!(sigma > 0.0f)) throw DomainError("gaussian_cond_velocity: sigma must be positive");
  const float ratio = dsigma / sigma;
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dalpha[i] + ratio * (x_t[i] - alpha[i]);
  return out;
}

FlowModel FlowModel::create(std::size_t x_dim, std::size_t cond_dim, const std::vector<std::size_t>& hidden,
                            Activation activation, Rng& rng) {
  std::vector<std::size_t> sizes;
  sizes.push_back(x_dim + 1 + cond_dim);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(x_dim);
  FlowModel m;
  m.x_dim = x_dim;
  m.cond_dim = cond_dim;
  m.net = MlpParams::init(std::move(sizes), activation, rng);
  return m;
}

Tensor FlowModel::velocity(const Tensor& x, std::span<const float> t, const Tensor* cond) const {
  if (x.cols() != x_dim) throw DimensionError("FlowModel: sample width mismatch");
  check_time_rows(x, t, "FlowModel::velocity");
  if ((cond != nullptr) != (cond_dim > 0) || (cond && (cond->cols() != cond_dim || cond->rows() != x.rows()))) {
    throw DimensionError("FlowModel: conditioning input mismatch");
  }
  const std::size_t n = x.rows();
  const std::size_t width = x_dim + 1 + cond_dim;
  Tensor input = Tensor::matrix(n, width);
  for (std::size_t r = 0; r < n; ++r) {
    float* dst = input.row(r).data();
    auto xr = x.row(r);
    dst = std::copy(xr.begin(), xr.end(), dst);
    *dst++ = t[r];
    if (cond) {
      auto sr = cond->row(r);
      std::copy(sr.begin(), sr.end(), dst);
    }
  }
  return mlp_forward(net, input);
}

Tensor FlowModel::velocity(const Tensor& x, float t, const Tensor* cond) const {
  std::vector<float> ts(x.rows(), t);
  return velocity(x, ts, cond);
}

Var FlowModel::velocity(Tape& tape, Var x, Var t_col, const Var* cond, MlpBinding* binding) const {
  if ((cond != nullptr) != (cond_dim > 0)) throw DimensionError("FlowModel: conditioning input mismatch");
  std::vector<Var> parts{x, t_col};
  if (cond) parts.push_back(*cond);
  return mlp_forward(net, concat_cols(parts), tape, binding);
}

FlowDraws FlowDraws::sample(std::size_t n, std::size_t dim, Rng& rng) {
  FlowDraws d;
  d.t.resize(n);
  d.eps = Tensor::matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    d.t[i] = static_cast<float>(rng.uniform() * static_cast<double>(kMaxTrainTime));
    for (std::size_t j = 0; j < dim; ++j) d.eps(i, j) = rng.normalf();
  }
  return d;
}

float regression_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "regression_loss");
  if (pred.rows() == 0) throw InputError("regression_loss: empty batch");
  float acc = 0.0f;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const float d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<float>(pred.rows());
}

float cfm_loss(const FlowModel& model, const Tensor& x1, const FlowDraws& draws, const Tensor* cond) {
  if (x1.rows() == 0) throw InputError("cfm_loss: empty batch");
  const Tensor x_t = linear_path_sample(x1, draws.eps, draws.t);
  const Tensor target = linear_cond_velocity(x_t, x1, draws.t);
  return regression_loss(model.velocity(x_t, draws.t, cond), target);
}

float cfm_loss(const FlowModel& model, const Tensor& x1, Rng& rng, const Tensor* cond) {
  return cfm_loss(model, x1, FlowDraws::sample(x1.rows(), x1.cols(), rng), cond);
}

float velocity_regression_step(FlowModel& model, AdamState& opt, const Tensor& x_t, std::span<const float> t,
                               const Tensor* cond, const Tensor& target) {
  Tape tape;
  Var xv = tape.constant(x_t);
  Var tv = tape.constant(Tensor::column(t));
  Var cv;
  if (cond) cv = tape.constant(*cond);
  MlpBinding binding;
  Var pred = model.velocity(tape, xv, tv, cond ? &cv : nullptr, &binding);
  Var diff = sub(pred, tape.constant(target));
  Var loss = scale(sum(square(diff)), 1.0f / static_cast<float>(x_t.rows()));
  tape.backward(loss);
  const float value = loss.value().item();
  adam_step(model.net, binding.grads(tape), opt);
  return value;
}

float cfm_train_step(FlowModel& model, AdamState& opt, const Tensor& x1, const FlowDraws& draws,
                     const Tensor* cond) {
  const Tensor x_t = linear_path_sample(x1, draws.eps, draws.t);
  const Tensor target = linear_cond_velocity(x_t, x1, draws.t);
  return velocity_regression_step(model, opt, x_t, draws.t, cond, target);
}

Tensor euler_integrate(const VelocityField& field, Tensor x0, int steps) {
  if (steps < 1) throw DomainError("euler_integrate: need at least one step");
  const float dt = 1.0f / static_cast<float>(steps);
  Tensor x = std::move(x0);
  for (int k = 0; k < steps; ++k) {
    const float t = static_cast<float>(k) / static_cast<float>(steps);
    const Tensor u = field(x, t);
    require_same_shape(x, u, "euler_integrate field");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * u[i];
    if (!x.all_finite()) {
      throw NumericError("euler_integrate: non-finite state at step " + std::to_string(k));
    }
  }
  return x;
}

Tensor sample_flow(const FlowModel& model, std::size_t n, int steps, Rng& rng, const Tensor* cond) {
  Tensor x0 = Tensor::matrix(n, model.x_dim);
  for (float& v : x0.data()) v = rng.normalf();
  return euler_integrate([&](const Tensor& x, float t) { return model.velocity(x, t, cond); }, std::move(x0),
                         steps);
}

}  // namespace egflow
