#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "egflow/errors.hpp"
#include "egflow/oracle.hpp"

using namespace egflow;

namespace {

double std_normal(std::span<const float> x) { return std::exp(-0.5 * static_cast<double>(x[0]) * x[0]); }

Tensor normal_samples(std::size_t n, double mean, double sd, Rng& rng) {
  Tensor t = Tensor::matrix(n, 1);
  for (float& v : t.data()) v = static_cast<float>(mean + sd * rng.normal());
  return t;
}

}  // namespace

TEST(Grid, Geometry) {
  const GridSpec g = GridSpec::square(2, -1.0, 1.0, 16);
  EXPECT_EQ(g.cells(), 256u);
  EXPECT_DOUBLE_EQ(g.cell_volume(), 0.125 * 0.125);
  const std::vector<float> x{-0.99f, 0.99f};
  EXPECT_EQ(g.cell_of(x), std::optional<std::size_t>(15));
  const std::vector<float> outside{1.5f, 0.0f};
  EXPECT_FALSE(g.cell_of(outside).has_value());
  EXPECT_THROW(GridSpec::square(1, 0.0, 1.0, 8).validate(), ConfigError);
  EXPECT_THROW(GridSpec::square(3, 0.0, 1.0, 16).validate(), ConfigError);
  EXPECT_THROW(GridSpec::square(1, 1.0, 0.0, 16).validate(), ConfigError);
}

TEST(GridPosterior, LambdaZeroIsBaseDensity) {
  const GridSpec g = GridSpec::square(1, -5.0, 5.0, 400);
  const auto e = QuadraticEnergy::isotropic(1);
  const DensityGrid base = density_grid(std_normal, g);
  const DensityGrid post = grid_posterior(std_normal, e, 0.0, g);
  EXPECT_EQ(post.values, base.values);
  EXPECT_NEAR(post.total_mass(), 1.0, 1e-6);
}

TEST(GridPosterior, GaussianConjugacy) {
  const auto e = QuadraticEnergy::isotropic(1);
  const DensityGrid post = grid_posterior(std_normal, e, 1.0, GridSpec::square(1, -8.0, 8.0, 4000));
  EXPECT_NEAR(post.variance()[0], 0.5, 1e-3);
  EXPECT_NEAR(post.mean()[0], 0.0, 1e-6);
  EXPECT_NEAR(post.total_mass(), 1.0, 1e-6);
}

TEST(GridPosterior, TiltFavoursLowEnergyMode) {
  const DensityFn bimodal = [](std::span<const float> x) {
    const double a = x[0] + 1.0;
    const double b = x[0] - 1.0;
    return std::exp(-a * a / 0.08) + std::exp(-b * b / 0.08);
  };
  const auto e = QuadraticEnergy::isotropic(1, {1.0f});
  const DensityGrid post = grid_posterior(bimodal, e, 0.5, GridSpec::square(1, -3.0, 3.0, 600));
  const Tensor pts = post.grid.points();
  double right = 0.0;
  for (std::size_t i = 0; i < post.values.size(); ++i) {
    if (pts(i, 0) > 0.0f) right += post.mass(i);
  }
  EXPECT_GT(right, 0.5);
}

TEST(GridPosterior, Errors) {
  const auto e = QuadraticEnergy::isotropic(1);
  const GridSpec g = GridSpec::square(1, -1.0, 1.0, 32);
  EXPECT_THROW(grid_posterior([](std::span<const float>) { return 0.0; }, e, 1.0, g), DegenerateError);
  EXPECT_THROW(grid_posterior([](std::span<const float>) { return -1.0; }, e, 1.0, g), NumericError);
}

TEST(Kl, SelfSamplesAreClose) {
  const GridSpec g = GridSpec::square(2, -1.5, 1.5, 64);
  const GmmSpec gmm = GmmSpec::three_cluster();
  const DensityGrid ref = density_grid([&](std::span<const float> x) { return gmm.density(x); }, g);
  Rng rng(3);
  const double kl = kl_estimate(ref.sample(100000, rng), ref);
  EXPECT_GE(kl, 0.0);
  EXPECT_LT(kl, 0.05);
}

TEST(Kl, DisjointSupportIsLarge) {
  const GridSpec g = GridSpec::square(1, -4.0, 4.0, 128);
  const DensityGrid ref = density_grid(std_normal, g);
  Rng rng(4);
  EXPECT_GT(kl_estimate(normal_samples(20000, 3.0, 0.1, rng), ref), 1.0);
}

TEST(Kl, ShrinksWithMoreSamples) {
  const GridSpec g = GridSpec::square(1, -4.0, 4.0, 128);
  const DensityGrid ref = density_grid(std_normal, g);
  double small = 0.0;
  double large = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    small += kl_estimate(ref.sample(2000, rng), ref);
    large += kl_estimate(ref.sample(50000, rng), ref);
  }
  EXPECT_LT(large, small);
}

TEST(Kl, TooFewInGridSamples) {
  const DensityGrid ref = density_grid(std_normal, GridSpec::square(1, -1.0, 1.0, 32));
  Rng rng(5);
  EXPECT_THROW(kl_estimate(normal_samples(5000, 10.0, 0.1, rng), ref), CoverageError);
  EXPECT_DOUBLE_EQ(grid_coverage(normal_samples(100, 10.0, 0.1, rng), ref.grid), 0.0);
}

TEST(Wasserstein, Examples) {
  const std::vector<float> a{0.3f, -1.0f, 2.0f};
  EXPECT_DOUBLE_EQ(wasserstein1d(a, a), 0.0);
  const std::vector<float> zero(10, 0.0f);
  const std::vector<float> one(7, 1.0f);
  EXPECT_DOUBLE_EQ(wasserstein1d(zero, one), 1.0);
  Rng rng(6);
  const Tensor x = normal_samples(100000, 0.0, 1.0, rng);
  const Tensor y = normal_samples(100000, 1.0, 1.0, rng);
  EXPECT_NEAR(wasserstein1d(x.data(), y.data()), 1.0, 0.03);
  EXPECT_THROW(wasserstein1d(std::vector<float>{}, a), InputError);
}

TEST(ModeMass, Examples) {
  const Tensor x = Tensor::from_rows({{0.1f, 0.2f}, {0.3f, 0.4f}});
  const std::vector<float> lo{0.0f, 0.0f};
  const std::vector<float> hi{1.0f, 1.0f};
  EXPECT_DOUBLE_EQ(mode_mass(x, lo, hi), 1.0);
  const std::vector<float> far_lo{5.0f, 5.0f};
  const std::vector<float> far_hi{6.0f, 6.0f};
  EXPECT_DOUBLE_EQ(mode_mass(x, far_lo, far_hi), 0.0);

  GmmSpec two;
  two.means = {{-1.0f}, {1.0f}};
  two.sd = 0.1f;
  Rng rng(7);
  const Tensor s = gen_gmm_samples(two, 10000, rng);
  const std::vector<float> box_lo{0.5f};
  const std::vector<float> box_hi{1.5f};
  EXPECT_NEAR(mode_mass(s, box_lo, box_hi), 0.5, 0.02);
}

TEST(BanditOracle, LambdaZeroIsBehaviourBitForBit) {
  const BanditSpec spec = BanditSpec::bimodal_2d();
  const GridSpec g = GridSpec::square(2, -1.0, 1.0, 64);
  const float s = 0.3f;
  const std::span<const float> st(&s, 1);
  const DensityGrid oracle = bandit_policy_oracle(st, spec, 0.0, g);
  const DensityGrid behaviour = density_grid([&](std::span<const float> a) { return spec.behavior_density(st, a); }, g);
  EXPECT_EQ(oracle.values, behaviour.values);
}

TEST(BanditOracle, TiltMovesMassToRewardedMode) {
  const BanditSpec spec = BanditSpec::bimodal_2d();
  const GridSpec g = GridSpec::square(2, -1.0, 1.0, 64);
  const float s = 0.0f;
  const std::span<const float> st(&s, 1);
  auto upper_mass = [&](const DensityGrid& d) {
    const Tensor pts = d.grid.points();
    double m = 0.0;
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      if (pts(i, 0) > 0.0f && pts(i, 1) > 0.0f) m += d.mass(i);
    }
    return m;
  };
  EXPECT_GT(upper_mass(bandit_policy_oracle(st, spec, 3.0, g)), upper_mass(bandit_policy_oracle(st, spec, 0.0, g)));
}

TEST(BanditOracle, GaussianClosedFormMatchesGrid) {
  const BanditSpec spec = BanditSpec::gaussian_1d();
  // The closed form ignores the [-1, 1] action box, so the grid reaches past it.
  const GridSpec g = GridSpec::square(1, -2.5, 2.5, 5000);
  for (float s : {-0.8f, 0.0f, 0.5f}) {
    const std::span<const float> st(&s, 1);
    const auto closed = gaussian_bandit_posterior(st, spec, 1.0)[0];
    const DensityGrid grid = bandit_policy_oracle(st, spec, 1.0, g);
    EXPECT_NEAR(grid.mean()[0], closed.first, 1e-3) << s;
    EXPECT_NEAR(std::sqrt(grid.variance()[0]), closed.second, 1e-3) << s;
  }
  EXPECT_THROW(gaussian_bandit_posterior({}, BanditSpec::bimodal_2d(), 1.0), ConfigError);
}

TEST(PolicyReturn, ZeroActionAtGoalScoresZero) {
  PointMassSpec spec;
  spec.noise_sd = 0.0f;
  spec.start_center = spec.goal;
  spec.start_halfwidth = 0.0f;
  const ActionFn still = [](const Tensor& s, Rng&) { return Tensor::matrix(s.rows(), 2); };
  const auto r = eval_policy_return(still, spec, 5, 1);
  EXPECT_DOUBLE_EQ(r.mean, 0.0);
  EXPECT_DOUBLE_EQ(r.sd, 0.0);
  EXPECT_EQ(r.returns.size(), 5u);
}

TEST(PolicyReturn, SameSeedSameStatistics) {
  const PointMassSpec spec;
  const ActionFn random = [](const Tensor& s, Rng& rng) {
    Tensor a(s.shape());
    for (float& v : a.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return a;
  };
  const auto a = eval_policy_return(random, spec, 20, 9);
  const auto b = eval_policy_return(random, spec, 20, 9);
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_NE(a.returns, eval_policy_return(random, spec, 20, 10).returns);
  const ActionFn wrong = [](const Tensor& s, Rng&) { return Tensor::matrix(s.rows(), 3); };
  EXPECT_THROW(eval_policy_return(wrong, spec, 2, 1), DimensionError);
  EXPECT_THROW(eval_policy_return(random, spec, 0, 1), InputError);
}

TEST(BanditReturn, OptimalBeatsBehaviour) {
  const BanditSpec spec = BanditSpec::gaussian_1d();
  const ActionFn best = [&](const Tensor& s, Rng&) {
    Tensor a = Tensor::matrix(s.rows(), 1);
    for (std::size_t r = 0; r < s.rows(); ++r) a(r, 0) = spec.goal_at(s.row(r))[0];
    return a;
  };
  const ActionFn behaviour = [&](const Tensor& s, Rng& rng) {
    Tensor a = Tensor::matrix(s.rows(), 1);
    for (std::size_t r = 0; r < s.rows(); ++r) spec.sample_action(s.row(r), rng, a.row(r));
    return a;
  };
  const auto rb = eval_bandit_return(best, spec, 2000, 1);
  EXPECT_NEAR(rb.mean, 0.0, 1e-6);
  EXPECT_LT(eval_bandit_return(behaviour, spec, 2000, 1).mean, rb.mean);
}

TEST(DensityCsv, WritesHeaderAndRows) {
  const auto path = std::filesystem::temp_directory_path() / "egflow_density.csv";
  write_density_csv(density_grid(std_normal, GridSpec::square(1, -1.0, 1.0, 16)), path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x,density");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 16u);
  std::filesystem::remove(path);
}
