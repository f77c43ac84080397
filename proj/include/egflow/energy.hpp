#pragma once

#include <cstddef>
#include <vector>

#include "egflow/tensor.hpp"

namespace egflow {

/// Batched energy E: R^d -> R. Rows of `y` are independent points; `cond`, when
/// given, carries one conditioning row per point (the state in the RL setting).
/// Implementations must tolerate concurrent const calls.
class EnergyFn {
 public:
  virtual ~EnergyFn() = default;

  virtual std::vector<float> value(const Tensor& y, const Tensor* cond = nullptr) const = 0;
  virtual Tensor grad(const Tensor& y, const Tensor* cond = nullptr) const = 0;
  /// Hessian-vector product per row. Defaults to fd_hvp.
  virtual Tensor hvp(const Tensor& y, const Tensor& v, const Tensor* cond = nullptr) const;
};

/// Central difference of the gradient along v, per row:
/// (grad(y + h v) - grad(y - h v)) / 2h with h = 1e-3 (1 + |y|) / (1 + |v|).
Tensor fd_hvp(const EnergyFn& energy, const Tensor& y, const Tensor& v, const Tensor* cond = nullptr);

/// E(y) = 0.5 (y - c)^T A (y - c) with symmetric A.
class QuadraticEnergy final : public EnergyFn {
 public:
  QuadraticEnergy(Tensor a, std::vector<float> center);
  /// 0.5 |y - c|^2 in `dim` dimensions.
  static QuadraticEnergy isotropic(std::size_t dim, std::vector<float> center = {});

  std::vector<float> value(const Tensor& y, const Tensor* cond = nullptr) const override;
  Tensor grad(const Tensor& y, const Tensor* cond = nullptr) const override;
  Tensor hvp(const Tensor& y, const Tensor& v, const Tensor* cond = nullptr) const override;

  std::size_t dim() const { return center_.size(); }

 private:
  Tensor a_;
  std::vector<float> center_;
};

/// E(y) = c^T y + b.
class LinearEnergy final : public EnergyFn {
 public:
  explicit LinearEnergy(std::vector<float> coeff, float offset = 0.0f);

  std::vector<float> value(const Tensor& y, const Tensor* cond = nullptr) const override;
  Tensor grad(const Tensor& y, const Tensor* cond = nullptr) const override;
  Tensor hvp(const Tensor& y, const Tensor& v, const Tensor* cond = nullptr) const override;

 private:
  std::vector<float> coeff_;
  float offset_;
};

/// Mean of |E(x)| over the rows of `data`; used to normalise λ.
double energy_scale_estimate(const Tensor& data, const EnergyFn& energy, const Tensor* cond = nullptr);

}  // namespace egflow
