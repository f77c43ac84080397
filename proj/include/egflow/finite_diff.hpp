#pragma once

#include <functional>
#include <span>
#include <vector>

namespace egflow {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
/// Works in double so the perturbation itself is not lost to f32 rounding.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h);

/// Relative error |a-b| / max(|b|, floor), with vector norms.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace egflow
