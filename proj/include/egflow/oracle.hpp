#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "egflow/energy.hpp"
#include "egflow/envs.hpp"
#include "egflow/rng.hpp"
#include "egflow/tensor.hpp"

namespace egflow {

/// n equal cells over [lo, hi]; density values live at cell centres.
struct GridAxis {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t n = 256;

  double width() const { return (hi - lo) / static_cast<double>(n); }
  double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }
};

struct GridSpec {
  std::vector<GridAxis> axes;

  static GridSpec square(std::size_t dim, double lo, double hi, std::size_t n);
  void validate() const;
  std::size_t dim() const { return axes.size(); }
  std::size_t cells() const;
  double cell_volume() const;
  /// Cell centres as rows, last axis fastest.
  Tensor points() const;
  /// Cell containing x, or nullopt when x is outside the grid.
  std::optional<std::size_t> cell_of(std::span<const float> x) const;
};

/// Piecewise-constant density: values[i] * cell_volume sums to 1.
struct DensityGrid {
  GridSpec grid;
  std::vector<double> values;

  double mass(std::size_t cell) const { return values[cell] * grid.cell_volume(); }
  double total_mass() const;
  std::vector<double> mean() const;
  std::vector<double> variance() const;
  /// Draws cell by mass, then uniformly inside the cell.
  Tensor sample(std::size_t n, Rng& rng) const;
};

using DensityFn = std::function<double(std::span<const float>)>;

/// Normalised p on the grid. Throws DegenerateError for zero total mass.
DensityGrid density_grid(const DensityFn& p, const GridSpec& grid);

/// p(x) exp(-λ E(x)) normalised on the grid. λ = 0 returns density_grid(p).
/// `cond` (one row) is repeated for every grid point.
DensityGrid grid_posterior(const DensityFn& p, const EnergyFn& energy, double lambda, const GridSpec& grid,
                           const Tensor* cond = nullptr);

/// KL(P || Q) where P is the add-one smoothed histogram of the in-grid samples,
/// P_i = (c_i + 1) / (n + K), and Q the reference smoothed the same way,
/// Q_i = (n q_i + 1) / (n + K). Needs at least `min_samples` in-grid samples.
double kl_estimate(const Tensor& samples, const DensityGrid& reference, std::size_t min_samples = 1000);

/// Fraction of rows of `samples` inside the grid.
double grid_coverage(const Tensor& samples, const GridSpec& grid);

/// Empirical W1 between two 1-D sample sets, both resampled by quantile to
/// the larger size.
double wasserstein1d(std::span<const float> a, std::span<const float> b);

/// Fraction of rows with lo <= x <= hi componentwise.
double mode_mass(const Tensor& samples, std::span<const float> lo, std::span<const float> hi);

/// Tilted behaviour policy π_β(a|s) exp(λ r(s,a)) on an action grid.
DensityGrid bandit_policy_oracle(std::span<const float> s, const BanditSpec& spec, double lambda,
                                 const GridSpec& grid);

/// Closed-form tilted posterior for a single-component Gaussian behaviour and
/// negdist_goal reward (per action dimension): returns (mean, sd).
std::vector<std::pair<double, double>> gaussian_bandit_posterior(std::span<const float> s, const BanditSpec& spec,
                                                                 double lambda);

/// Maps a batch of states to actions; `rng` is the policy's own noise source.
using ActionFn = std::function<Tensor(const Tensor& states, Rng& rng)>;

struct ReturnStats {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> returns;
};

/// Undiscounted point-mass returns over `episodes` rollouts, run in lockstep.
/// Episode e uses Rng::stream(seed, "eval").fork(e) for its start and noise.
ReturnStats eval_policy_return(const ActionFn& policy, const PointMassSpec& spec, std::size_t episodes,
                               std::uint64_t seed);

/// Mean bandit reward of the policy over `n` uniformly drawn states.
ReturnStats eval_bandit_return(const ActionFn& policy, const BanditSpec& spec, std::size_t n, std::uint64_t seed);

/// CSV with header x,density (1-D) or x,y,density (2-D).
void write_density_csv(const DensityGrid& g, const std::filesystem::path& path);

}  // namespace egflow
