#include "egflow/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "egflow/errors.hpp"

namespace egflow {

GridSpec GridSpec::square(std::size_t dim, double lo, double hi, std::size_t n) {
  GridSpec g;
  g.axes.assign(dim, GridAxis{lo, hi, n});
  g.validate();
  return g;
}

void GridSpec::validate() const {
  if (axes.empty() || axes.size() > 2) throw ConfigError("grid: 1 or 2 dimensions supported");
  for (const auto& a : axes) {
    if (!(a.lo < a.hi)) throw ConfigError("grid: lo must be below hi");
    if (a.n < 16) throw ConfigError("grid: at least 16 points per axis");
  }
}

std::size_t GridSpec::cells() const {
  std::size_t c = 1;
  for (const auto& a : axes) c *= a.n;
  return c;
}

double GridSpec::cell_volume() const {
  double v = 1.0;
  for (const auto& a : axes) v *= a.width();
  return v;
}

Tensor GridSpec::points() const {
  Tensor p = Tensor::matrix(cells(), dim());
  for (std::size_t i = 0; i < cells(); ++i) {
    std::size_t rem = i;
    for (std::size_t d = dim(); d-- > 0;) {
      p(i, d) = static_cast<float>(axes[d].center(rem % axes[d].n));
      rem /= axes[d].n;
    }
  }
  return p;
}

std::optional<std::size_t> GridSpec::cell_of(std::span<const float> x) const {
  std::size_t idx = 0;
  for (std::size_t d = 0; d < dim(); ++d) {
    const GridAxis& a = axes[d];
    const double v = x[d];
    if (!(v >= a.lo && v <= a.hi)) return std::nullopt;
    auto k = static_cast<std::size_t>((v - a.lo) / a.width());
    k = std::min(k, a.n - 1);
    idx = idx * a.n + k;
  }
  return idx;
}

double DensityGrid::total_mass() const {
  double m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) m += mass(i);
  return m;
}

std::vector<double> DensityGrid::mean() const {
  const Tensor pts = grid.points();
  std::vector<double> m(grid.dim(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t d = 0; d < grid.dim(); ++d) m[d] += mass(i) * pts(i, d);
  }
  return m;
}

std::vector<double> DensityGrid::variance() const {
  const Tensor pts = grid.points();
  const auto m = mean();
  std::vector<double> v(grid.dim(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t d = 0; d < grid.dim(); ++d) {
      const double diff = pts(i, d) - m[d];
      v[d] += mass(i) * diff * diff;
    }
  }
  return v;
}

Tensor DensityGrid::sample(std::size_t n, Rng& rng) const {
  std::vector<double> cdf(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += mass(i);
    cdf[i] = acc;
  }
  const Tensor pts = grid.points();
  Tensor out = Tensor::matrix(n, grid.dim());
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto cell = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(),
                                                                        static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    for (std::size_t d = 0; d < grid.dim(); ++d) {
      const double w = grid.axes[d].width();
      out(k, d) = static_cast<float>(pts(cell, d) + (rng.uniform() - 0.5) * w);
    }
  }
  return out;
}

namespace {

DensityGrid normalise(const GridSpec& grid, std::vector<double> raw) {
  double total = 0.0;
  for (double v : raw) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("density grid: negative or non-finite value");
    total += v;
  }
  total *= grid.cell_volume();
  if (!(total > 0.0)) throw DegenerateError("density grid: zero total mass");
  for (double& v : raw) v /= total;
  return DensityGrid{grid, std::move(raw)};
}

}  // namespace

DensityGrid density_grid(const DensityFn& p, const GridSpec& grid) {
  grid.validate();
  const Tensor pts = grid.points();
  std::vector<double> raw(grid.cells());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = p(pts.row(i));
  return normalise(grid, std::move(raw));
}

DensityGrid grid_posterior(const DensityFn& p, const EnergyFn& energy, double lambda, const GridSpec& grid,
                           const Tensor* cond) {
  if (lambda == 0.0) return density_grid(p, grid);
  grid.validate();
  const Tensor pts = grid.points();
  Tensor cond_rows;
  if (cond) cond_rows = repeat_rows(*cond, pts.rows());
  const auto e = energy.value(pts, cond ? &cond_rows : nullptr);
  // Work in log space relative to the best supported cell so exp() cannot overflow.
  std::vector<double> logw(pts.rows(), -std::numeric_limits<double>::infinity());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    const double pi = p(pts.row(i));
    if (pi < 0.0 || !std::isfinite(pi)) throw NumericError("grid_posterior: invalid base density");
    if (!std::isfinite(e[i])) throw NumericError("grid_posterior: non-finite energy");
    if (pi > 0.0) {
      logw[i] = std::log(pi) - lambda * static_cast<double>(e[i]);
      best = std::max(best, logw[i]);
    }
  }
  if (!std::isfinite(best)) throw DegenerateError("grid_posterior: zero total mass");
  std::vector<double> raw(pts.rows());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = std::exp(logw[i] - best);
  return normalise(grid, std::move(raw));
}

double kl_estimate(const Tensor& samples, const DensityGrid& reference, std::size_t min_samples) {
  const GridSpec& g = reference.grid;
  if (samples.cols() != g.dim()) throw DimensionError("kl_estimate: sample width must match the grid");
  std::vector<double> counts(g.cells(), 0.0);
  std::size_t inside = 0;
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    if (auto c = g.cell_of(samples.row(r))) {
      counts[*c] += 1.0;
      ++inside;
    }
  }
  if (inside < min_samples) {
    throw CoverageError("kl_estimate: " + std::to_string(inside) + " in-grid samples, need " +
                        std::to_string(min_samples));
  }
  const double n = static_cast<double>(inside);
  const double k = static_cast<double>(g.cells());
  double kl = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double p = (counts[i] + 1.0) / (n + k);
    const double q = (n * reference.mass(i) + 1.0) / (n + k);
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

double grid_coverage(const Tensor& samples, const GridSpec& grid) {
  if (samples.rows() == 0) return 0.0;
  std::size_t inside = 0;
  for (std::size_t r = 0; r < samples.rows(); ++r) inside += grid.cell_of(samples.row(r)).has_value() ? 1 : 0;
  return static_cast<double>(inside) / static_cast<double>(samples.rows());
}

double wasserstein1d(std::span<const float> a, std::span<const float> b) {
  if (a.empty() || b.empty()) throw InputError("wasserstein1d: both sample sets must be nonempty");
  std::vector<float> sa(a.begin(), a.end());
  std::vector<float> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const std::size_t len = std::max(sa.size(), sb.size());
  auto quantile = [len](const std::vector<float>& s, std::size_t i) {
    const auto k = static_cast<std::size_t>((static_cast<double>(i) + 0.5) / static_cast<double>(len) *
                                            static_cast<double>(s.size()));
    return static_cast<double>(s[std::min(k, s.size() - 1)]);
  };
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) acc += std::fabs(quantile(sa, i) - quantile(sb, i));
  return acc / static_cast<double>(len);
}

double mode_mass(const Tensor& samples, std::span<const float> lo, std::span<const float> hi) {
  if (samples.rows() == 0) throw InputError("mode_mass: no samples");
  if (lo.size() != samples.cols() || hi.size() != samples.cols()) throw DimensionError("mode_mass: box dimension");
  std::size_t inside = 0;
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    bool in = true;
    for (std::size_t j = 0; j < samples.cols(); ++j) in = in && samples(r, j) >= lo[j] && samples(r, j) <= hi[j];
    inside += in ? 1 : 0;
  }
  return static_cast<double>(inside) / static_cast<double>(samples.rows());
}

DensityGrid bandit_policy_oracle(std::span<const float> s, const BanditSpec& spec, double lambda,
                                 const GridSpec& grid) {
  spec.validate();
  if (grid.dim() != spec.a_dim) throw DimensionError("bandit_policy_oracle: grid must span the action space");
  if (s.size() != spec.s_dim) throw DimensionError("bandit_policy_oracle: state dimension");
  const std::vector<float> state(s.begin(), s.end());
  DensityFn behaviour = [&spec, state](std::span<const float> a) { return spec.behavior_density(state, a); };
  const BanditRewardEnergy energy(spec);
  const Tensor cond({1, spec.s_dim}, state);
  return grid_posterior(behaviour, energy, lambda, grid, spec.s_dim > 0 ? &cond : nullptr);
}

std::vector<std::pair<double, double>> gaussian_bandit_posterior(std::span<const float> s, const BanditSpec& spec,
                                                                 double lambda) {
  if (spec.reward != RewardId::negdist_goal || spec.behavior.components() != 1) {
    throw ConfigError("gaussian_bandit_posterior: needs one behaviour component and negdist_goal reward");
  }
  const auto mu = spec.behavior_mean(0, s);
  const auto g = spec.goal_at(s);
  const double prec_b = 1.0 / (static_cast<double>(spec.behavior.sd) * spec.behavior.sd);
  const double prec_r = lambda * spec.reward_scale;
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < spec.a_dim; ++i) {
    const double prec = prec_b + prec_r;
    out.emplace_back((prec_b * mu[i] + prec_r * g[i]) / prec, 1.0 / std::sqrt(prec));
  }
  return out;
}

namespace {

ReturnStats summarise(std::vector<double> returns) {
  ReturnStats st;
  const double n = static_cast<double>(returns.size());
  for (double r : returns) st.mean += r;
  st.mean /= n;
  if (returns.size() > 1) {
    double var = 0.0;
    for (double r : returns) var += (r - st.mean) * (r - st.mean);
    st.sd = std::sqrt(var / (n - 1.0));
  }
  st.returns = std::move(returns);
  return st;
}

}  // namespace

ReturnStats eval_policy_return(const ActionFn& policy, const PointMassSpec& spec, std::size_t episodes,
                               std::uint64_t seed) {
  spec.validate();
  if (episodes == 0) throw InputError("eval_policy_return: episodes must be >= 1");
  const Rng root = Rng::stream(seed, "eval");
  std::vector<Rng> env_rng;
  Tensor states = Tensor::matrix(episodes, PointMassSpec::dim);
  for (std::size_t e = 0; e < episodes; ++e) {
    env_rng.push_back(root.fork(e));
    const auto s0 = pointmass_reset(spec, env_rng.back());
    std::copy(s0.begin(), s0.end(), states.row(e).begin());
  }
  Rng policy_rng = root.fork(episodes);
  std::vector<double> returns(episodes, 0.0);
  for (int t = 0; t < spec.horizon; ++t) {
    const Tensor actions = policy(states, policy_rng);
    if (actions.rows() != episodes || actions.cols() != PointMassSpec::dim) {
      throw DimensionError("eval_policy_return: policy returned wrong action shape");
    }
    for (std::size_t e = 0; e < episodes; ++e) {
      const StepResult step = pointmass_step(spec, states.row(e), actions.row(e), t, env_rng[e]);
      returns[e] += step.reward;
      std::copy(step.s_next.begin(), step.s_next.end(), states.row(e).begin());
    }
  }
  return summarise(std::move(returns));
}

ReturnStats eval_bandit_return(const ActionFn& policy, const BanditSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw InputError("eval_bandit_return: n must be >= 1");
  Rng rng = Rng::stream(seed, "eval");
  Tensor states = Tensor::matrix(n, spec.s_dim);
  for (float& v : states.data()) v = static_cast<float>(rng.uniform(spec.state_lo, spec.state_hi));
  Rng policy_rng = rng.fork(0);
  const Tensor actions = policy(states, policy_rng);
  if (actions.rows() != n || actions.cols() != spec.a_dim) {
    throw DimensionError("eval_bandit_return: policy returned wrong action shape");
  }
  std::vector<double> rewards(n);
  for (std::size_t i = 0; i < n; ++i) rewards[i] = spec.reward_fn(states.row(i), actions.row(i));
  return summarise(std::move(rewards));
}

void write_density_csv(const DensityGrid& g, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << (g.grid.dim() == 1 ? "x,density\n" : "x,y,density\n");
  out.precision(9);
  const Tensor pts = g.grid.points();
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    for (std::size_t d = 0; d < g.grid.dim(); ++d) out << pts(i, d) << ',';
    out << g.values[i] << '\n';
  }
}

}  // namespace egflow
