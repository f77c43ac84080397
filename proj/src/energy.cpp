#include "egflow/energy.hpp"

#include <cmath>

#include "egflow/errors.hpp"

namespace egflow {

Tensor EnergyFn::hvp(const Tensor& y, const Tensor& v, const Tensor* cond) const {
  return fd_hvp(*this, y, v, cond);
}

Tensor fd_hvp(const EnergyFn& energy, const Tensor& y, const Tensor& v, const Tensor* cond) {
  require_same_shape(y, v, "fd_hvp");
  const std::size_t n = y.rows();
  const std::size_t d = y.cols();
  Tensor up(y.shape());
  Tensor down(y.shape());
  std::vector<float> step(n);
  for (std::size_t r = 0; r < n; ++r) {
    double ny = 0.0;
    double nv = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      ny += static_cast<double>(y(r, j)) * y(r, j);
      nv += static_cast<double>(v(r, j)) * v(r, j);
    }
    const double h = 1e-3 * (1.0 + std::sqrt(ny)) / (1.0 + std::sqrt(nv));
    step[r] = static_cast<float>(h);
    for (std::size_t j = 0; j < d; ++j) {
      up(r, j) = y(r, j) + step[r] * v(r, j);
      down(r, j) = y(r, j) - step[r] * v(r, j);
    }
  }
  const Tensor gu = energy.grad(up, cond);
  const Tensor gd = energy.grad(down, cond);
  Tensor out(y.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double denom = 2.0 * static_cast<double>(step[r]);
    for (std::size_t j = 0; j < d; ++j) {
      out(r, j) = static_cast<float>((static_cast<double>(gu(r, j)) - gd(r, j)) / denom);
    }
  }
  return out;
}

QuadraticEnergy::QuadraticEnergy(Tensor a, std::vector<float> center) : a_(std::move(a)), center_(std::move(center)) {
  if (a_.rows() != center_.size() || a_.cols() != center_.size()) {
    throw DimensionError("QuadraticEnergy: matrix must be square and match the centre");
  }
}

QuadraticEnergy QuadraticEnergy::isotropic(std::size_t dim, std::vector<float> center) {
  if (center.empty()) center.assign(dim, 0.0f);
  Tensor a = Tensor::matrix(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) a(i, i) = 1.0f;
  return QuadraticEnergy(std::move(a), std::move(center));
}

std::vector<float> QuadraticEnergy::value(const Tensor& y, const Tensor*) const {
  if (y.cols() != dim()) throw DimensionError("QuadraticEnergy: width mismatch");
  const Tensor g = grad(y);
  std::vector<float> out(y.rows());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    float acc = 0.0f;
    for (std::size_t j = 0; j < dim(); ++j) acc += (y(r, j) - center_[j]) * g(r, j);
    out[r] = 0.5f * acc;
  }
  return out;
}

Tensor QuadraticEnergy::grad(const Tensor& y, const Tensor*) const {
  if (y.cols() != dim()) throw DimensionError("QuadraticEnergy: width mismatch");
  Tensor out(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t i = 0; i < dim(); ++i) {
      float acc = 0.0f;
      for (std::size_t j = 0; j < dim(); ++j) acc += a_(i, j) * (y(r, j) - center_[j]);
      out(r, i) = acc;
    }
  }
  return out;
}

Tensor QuadraticEnergy::hvp(const Tensor& y, const Tensor& v, const Tensor*) const {
  require_same_shape(y, v, "QuadraticEnergy::hvp");
  if (y.cols() != dim()) throw DimensionError("QuadraticEnergy: width mismatch");
  Tensor out(v.shape());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t i = 0; i < dim(); ++i) {
      float acc = 0.0f;
      for (std::size_t j = 0; j < dim(); ++j) acc += a_(i, j) * v(r, j);
      out(r, i) = acc;
    }
  }
  return out;
}

LinearEnergy::LinearEnergy(std::vector<float> coeff, float offset) : coeff_(std::move(coeff)), offset_(offset) {}

std::vector<float> LinearEnergy::value(const Tensor& y, const Tensor*) const {
  if (y.cols() != coeff_.size()) throw DimensionError("LinearEnergy: width mismatch");
  std::vector<float> out(y.rows());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    float acc = offset_;
    for (std::size_t j = 0; j < coeff_.size(); ++j) acc += coeff_[j] * y(r, j);
    out[r] = acc;
  }
  return out;
}

Tensor LinearEnergy::grad(const Tensor& y, const Tensor*) const {
  if (y.cols() != coeff_.size()) throw DimensionError("LinearEnergy: width mismatch");
  Tensor out(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t j = 0; j < coeff_.size(); ++j) out(r, j) = coeff_[j];
  }
  return out;
}

Tensor LinearEnergy::hvp(const Tensor& y, const Tensor& v, const Tensor*) const {
  require_same_shape(y, v, "LinearEnergy::hvp");
  return Tensor(v.shape(), 0.0f);
}

double energy_scale_estimate(const Tensor& data, const EnergyFn& energy, const Tensor* cond) {
  if (data.rows() == 0 || data.empty()) throw InputError("energy_scale_estimate: empty dataset");
  const auto e = energy.value(data, cond);
  double acc = 0.0;
  for (float v : e) {
    if (!std::isfinite(v)) throw NumericError("energy_scale_estimate: non-finite energy");
    acc += std::fabs(static_cast<double>(v));
  }
  return acc / static_cast<double>(e.size());
}

}  // namespace egflow
