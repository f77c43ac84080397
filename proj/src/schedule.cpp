#include "egflow/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "egflow/errors.hpp"

namespace egflow {

std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::linear_t: return "linear_t";
    case ScheduleKind::quadratic_t2: return "quadratic_t2";
    case ScheduleKind::maxseek: return "maxseek_t2_over_1mt";
    case ScheduleKind::learnable: return "learnable";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(std::string_view name) {
  if (name == "linear_t") return ScheduleKind::linear_t;
  if (name == "quadratic_t2") return ScheduleKind::quadratic_t2;
  if (name == "maxseek_t2_over_1mt" || name == "maxseek") return ScheduleKind::maxseek;
  if (name == "learnable") return ScheduleKind::learnable;
  throw ConfigError("unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(RescaleMode m) {
  switch (m) {
    case RescaleMode::learnable_only: return "learnable_only";
    case RescaleMode::all: return "all";
    case RescaleMode::off: return "off";
  }
  return "?";
}

RescaleMode rescale_mode_from_string(std::string_view name) {
  if (name == "learnable_only") return RescaleMode::learnable_only;
  if (name == "all") return RescaleMode::all;
  if (name == "off") return RescaleMode::off;
  throw ConfigError("unknown rescale_energy mode '" + std::string(name) + "'");
}

Schedule Schedule::make(ScheduleKind kind, double lambda, Rng* rng) {
  Schedule s;
  s.kind = kind;
  s.lambda = lambda;
  if (kind == ScheduleKind::learnable) {
    if (rng == nullptr) throw ConfigError("learnable schedule needs an rng to initialise f_theta");
    s.f_theta = MlpParams::init({1, 32, 32, 1}, Activation::tanh, *rng);
  }
  s.validate();
  return s;
}

void Schedule::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("schedule lambda must be finite and >= 0");
  if (!(energy_scale > 0.0) || !std::isfinite(energy_scale)) {
    throw ConfigError("schedule energy_scale must be finite and > 0");
  }
  if (kind == ScheduleKind::learnable) {
    if (f_theta.weights.empty() || f_theta.input_dim() != 1 || f_theta.output_dim() != 1) {
      throw ConfigError("learnable schedule needs a scalar-to-scalar f_theta");
    }
    if (f_theta.activation != Activation::tanh) throw ConfigError("f_theta must use tanh");
  }
}

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule: t outside [0,1]");
}

// f_θ(t) and df/dt by forward-mode tangents, in double.
std::pair<double, double> f_theta_eval(const MlpParams& f, double t) {
  std::vector<double> a{t};
  std::vector<double> da{1.0};
  for (std::size_t l = 0; l < f.num_layers(); ++l) {
    const Tensor& w = f.weights[l];
    const Tensor& b = f.biases[l];
    const std::size_t out = w.cols();
    std::vector<double> z(out);
    std::vector<double> dz(out, 0.0);
    for (std::size_t j = 0; j < out; ++j) {
      double acc = b[j];
      double dacc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * w(i, j);
        dacc += da[i] * w(i, j);
      }
      z[j] = acc;
      dz[j] = dacc;
    }
    if (l + 1 < f.num_layers()) {
      for (std::size_t j = 0; j < out; ++j) {
        z[j] = std::tanh(z[j]);
        dz[j] *= 1.0 - z[j] * z[j];
      }
    }
    a = std::move(z);
    da = std::move(dz);
  }
  return {a[0], da[0]};
}

}  // namespace

ScheduleValue schedule_eval(const Schedule& s, double t) {
  check_time(t);
  switch (s.kind) {
    case ScheduleKind::linear_t: return {t, 1.0};
    case ScheduleKind::quadratic_t2: return {t * t, 2.0 * t};
    case ScheduleKind::maxseek: {
      if (t >= 1.0) throw DomainError("maxseek schedule is singular at t = 1");
      const double u = 1.0 - t;
      return {t * t / u, t * (2.0 - t) / (u * u)};
    }
    case ScheduleKind::learnable: {
      const auto [f, df] = f_theta_eval(s.f_theta, t);
      const double u = 1.0 - t;
      return {t + t * u * f, 1.0 + (1.0 - 2.0 * t) * f + t * u * df};
    }
  }
  return {};
}

ScheduleValue lambda_t(const Schedule& s, double t) {
  const ScheduleValue v = schedule_eval(s, t);
  const double b = s.base();
  return {b * v.h, b * v.dh};
}

GuidanceCoeffs guidance_coeffs(const Schedule& s, double t) {
  check_time(t);
  const double b = s.base();
  switch (s.kind) {
    case ScheduleKind::linear_t: {
      const double u = 1.0 - t;
      return {b * t * u * u, b * u * (2.0 * t - 1.0)};
    }
    case ScheduleKind::quadratic_t2: {
      const double u = 1.0 - t;
      return {b * t * t * u * u, b * u * t * (3.0 * t - 2.0)};
    }
    case ScheduleKind::maxseek: {
      const double tc = std::min(t, kMaxseekClamp);
      const double u = 1.0 - tc;
      return {b * tc * tc * u, -2.0 * b * tc * u};
    }
    case ScheduleKind::learnable: {
      const ScheduleValue v = schedule_eval(s, t);
      const double u = 1.0 - t;
      return {b * u * u * v.h, b * u * (v.h - u * v.dh)};
    }
  }
  return {};
}

void apply_energy_scale(Schedule& s, double estimate) {
  const bool covered = s.rescale == RescaleMode::all ||
                       (s.rescale == RescaleMode::learnable_only && s.kind == ScheduleKind::learnable);
  if (!covered) return;
  if (!(estimate > 0.0) || !std::isfinite(estimate)) {
    throw DegenerateError("energy scale estimate must be positive and finite");
  }
  s.energy_scale = estimate;
}

TapedSchedule learnable_schedule_taped(const MlpParams& f, std::span<const float> t, Tape& tape,
                                       MlpBinding* binding) {
  const std::size_t n = t.size();
  std::vector<float> c1(n);
  std::vector<float> c2(n);
  for (std::size_t i = 0; i < n; ++i) {
    c1[i] = t[i] * (1.0f - t[i]);
    c2[i] = 1.0f - 2.0f * t[i];
  }
  Var tv = tape.constant(Tensor::column(t));
  Var a = tv;
  Var da = tape.constant(Tensor::matrix(n, 1, 1.0f));
  for (std::size_t l = 0; l < f.num_layers(); ++l) {
    Var w;
    Var b;
    if (binding) {
      w = tape.leaf(f.weights[l]);
      b = tape.leaf(f.biases[l]);
      binding->params.push_back(w);
      binding->params.push_back(b);
    } else {
      w = tape.constant(f.weights[l]);
      b = tape.constant(f.biases[l]);
    }
    Var z = add_row(matmul(a, w), b);
    Var dz = matmul(da, w);
    if (l + 1 < f.num_layers()) {
      a = tanh(z);
      da = mul(add_scalar(scale(square(a), -1.0f), 1.0f), dz);
    } else {
      a = z;
      da = dz;
    }
  }
  Var c1v = tape.constant(Tensor::column(c1));
  Var c2v = tape.constant(Tensor::column(c2));
  Var h = add(tv, mul(c1v, a));
  Var dh = add_scalar(add(mul(c2v, a), mul(c1v, da)), 1.0f);
  return {h, dh};
}

nlohmann::json schedule_to_json(const Schedule& s) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(s.kind));
  j["lambda"] = s.lambda;
  j["energy_scale"] = s.energy_scale;
  j["rescale_energy"] = std::string(to_string(s.rescale));
  if (s.kind == ScheduleKind::learnable) {
    j["f_theta"] = {{"layer_sizes", s.f_theta.sizes},
                    {"activation", std::string(to_string(s.f_theta.activation))},
                    {"params", s.f_theta.flatten()}};
  }
  return j;
}

Schedule schedule_from_json(const nlohmann::json& j) {
  try {
    Schedule s;
    s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    s.lambda = j.at("lambda").get<double>();
    s.energy_scale = j.value("energy_scale", 1.0);
    s.rescale = rescale_mode_from_string(j.value("rescale_energy", std::string("learnable_only")));
    if (s.kind == ScheduleKind::learnable) {
      const auto& f = j.at("f_theta");
      s.f_theta = MlpParams::zeros(f.at("layer_sizes").get<std::vector<std::size_t>>(),
                                   activation_from_string(f.at("activation").get<std::string>()));
      const auto flat = f.at("params").get<std::vector<float>>();
      if (flat.size() != s.f_theta.parameter_count()) {
        throw CorruptionError("schedule f_theta parameter count mismatch");
      }
      s.f_theta.assign(flat);
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
}

}  // namespace egflow
