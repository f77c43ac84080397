#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "egflow/dataset.hpp"
#include "egflow/envs.hpp"
#include "egflow/errors.hpp"
#include "egflow/oracle.hpp"

using namespace egflow;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("egflow_envs_" + name);
  std::filesystem::remove_all(p);
  return p;
}

PointMassSpec noiseless() {
  PointMassSpec spec;
  spec.noise_sd = 0.0f;
  return spec;
}

}  // namespace

TEST(Gmm, SingleNarrowComponentCollapses) {
  GmmSpec spec;
  spec.means = {{0.0f, 0.0f}};
  spec.sd = 1e-6f;
  const auto d = gen_gmm_dataset(spec, 500, 3);
  for (float v : d.a.data()) EXPECT_NEAR(v, 0.0f, 1e-4f);
  EXPECT_EQ(d.s_dim, 0u);
}

TEST(Gmm, TwoEqualModesSplitEvenly) {
  GmmSpec spec;
  spec.means = {{-1.0f}, {1.0f}};
  spec.sd = 0.1f;
  const auto d = gen_gmm_dataset(spec, 100000, 4);
  std::size_t right = 0;
  for (float v : d.a.data()) right += v > 0.0f;
  EXPECT_NEAR(static_cast<double>(right) / 100000.0, 0.5, 0.02);
}

TEST(Gmm, SameSeedSameBytes) {
  const GmmSpec spec = GmmSpec::three_cluster();
  EXPECT_EQ(gen_gmm_dataset(spec, 1000, 7), gen_gmm_dataset(spec, 1000, 7));
  EXPECT_NE(gen_gmm_dataset(spec, 1000, 7), gen_gmm_dataset(spec, 1000, 8));
}

TEST(Gmm, InvalidSpecs) {
  GmmSpec spec = GmmSpec::three_cluster();
  spec.sd = 0.0f;
  EXPECT_THROW(gen_gmm_dataset(spec, 10, 1), ConfigError);
  spec = GmmSpec::three_cluster();
  spec.weights = {0.5, 0.5, 0.5};
  EXPECT_THROW(gen_gmm_dataset(spec, 10, 1), ConfigError);
  EXPECT_THROW(gen_gmm_dataset(GmmSpec::three_cluster(), 0, 1), InputError);
}

TEST(Gmm, EnergiesMatchDefinitions) {
  const GmmSpec spec = GmmSpec::three_cluster();
  const Tensor y = Tensor::from_rows({{-0.6f, -0.6f}, {0.0f, 0.0f}});
  const auto in = gmm_energy_in(spec, 0).value(y);
  EXPECT_NEAR(in[0], 0.0f, 1e-6f);
  EXPECT_NEAR(in[1], 0.5 * 0.72 / (0.08 * 0.08), 1e-2);
  const auto out = gmm_energy_out().value(y);
  EXPECT_NEAR(out[1], 1.0f, 1e-6f);
  EXPECT_THROW(gmm_energy_in(spec, 3), ConfigError);
}

TEST(Bandit, PointMassBehaviourGivesThatAction) {
  BanditSpec spec = BanditSpec::gaussian_1d();
  spec.behavior.means = {{0.25f}};
  spec.behavior.sd = 1e-7f;
  spec.behavior_gain = Tensor();
  const auto d = gen_bandit_dataset(spec, 200, 2);
  for (float v : d.a.data()) EXPECT_NEAR(v, 0.25f, 1e-5f);
}

TEST(Bandit, BimodalDatasetHasBothModesAndMidReward) {
  const BanditSpec spec = BanditSpec::bimodal_2d();
  const auto d = gen_bandit_dataset(spec, 20000, 5);
  std::size_t low = 0;
  std::size_t high = 0;
  double mean_r = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    low += d.a(i, 0) < 0.0f && d.a(i, 1) < 0.0f;
    high += d.a(i, 0) > 0.0f && d.a(i, 1) > 0.0f;
    mean_r += d.r[i];
  }
  mean_r /= static_cast<double>(d.size());
  EXPECT_GT(low, 8000u);
  EXPECT_GT(high, 8000u);
  const float s0 = 0.0f;
  const std::vector<float> a_low{-0.5f, -0.5f};
  const std::vector<float> a_high{0.5f, 0.5f};
  const double r_low = spec.reward_fn({&s0, 1}, a_low);
  const double r_high = spec.reward_fn({&s0, 1}, a_high);
  EXPECT_GT(mean_r, r_low);
  EXPECT_LT(mean_r, r_high);
}

TEST(Bandit, RewardsRecomputeExactlyAndEpisodesEnd) {
  for (const BanditSpec& spec : {BanditSpec::gaussian_1d(), BanditSpec::bimodal_2d()}) {
    const auto d = gen_bandit_dataset(spec, 500, 9);
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_EQ(d.r[i], spec.reward_fn(d.s.row(i), d.a.row(i)));
      EXPECT_EQ(d.done[i], 1.0f);
      for (float v : d.a.row(i)) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
      }
      for (float v : d.s.row(i)) {
        EXPECT_GE(v, spec.state_lo);
        EXPECT_LE(v, spec.state_hi);
      }
    }
  }
}

TEST(Bandit, RewardEnergyIsNegatedReward) {
  const BanditSpec spec = BanditSpec::gaussian_1d();
  const BanditRewardEnergy e(spec);
  const Tensor s = Tensor::from_rows({{0.5f}, {-1.0f}});
  const Tensor a = Tensor::from_rows({{0.1f}, {0.9f}});
  const auto v = e.value(a, &s);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(v[i], -spec.reward_fn(s.row(i), a.row(i)));
  EXPECT_THROW(e.value(a), DimensionError);
}

TEST(PointMass, ZeroActionStaysPut) {
  const PointMassSpec spec = noiseless();
  Rng rng(1);
  const std::vector<float> s{0.1f, -0.3f};
  const std::vector<float> a{0.0f, 0.0f};
  const auto r = pointmass_step(spec, s, a, 0, rng);
  EXPECT_EQ(r.s_next, s);
  EXPECT_FLOAT_EQ(r.reward, -std::hypot(0.1f - 0.6f, -0.3f - 0.6f));
  EXPECT_FALSE(r.done);
  EXPECT_TRUE(pointmass_step(spec, s, a, spec.horizon - 1, rng).done);
}

TEST(PointMass, StepOntoGoalScoresZero) {
  const PointMassSpec spec = noiseless();
  Rng rng(1);
  const std::vector<float> a{1.0f, -0.5f};
  const std::vector<float> s{0.6f - 0.1f, 0.6f + 0.05f};
  const auto r = pointmass_step(spec, s, a, 0, rng);
  EXPECT_NEAR(r.reward, 0.0f, 1e-6f);
}

TEST(PointMass, StateIsClippedToArena) {
  const PointMassSpec spec = noiseless();
  Rng rng(1);
  const std::vector<float> s{0.98f, -0.98f};
  const std::vector<float> a{1.0f, -1.0f};
  const auto r = pointmass_step(spec, s, a, 0, rng);
  EXPECT_EQ(r.s_next[0], 1.0f);
  EXPECT_EQ(r.s_next[1], -1.0f);
}

TEST(PointMass, GreedyBeatsRandom) {
  const PointMassSpec spec;
  const ActionFn greedy = [&](const Tensor& s, Rng&) {
    Tensor a(s.shape());
    for (std::size_t r = 0; r < s.rows(); ++r) {
      const auto g = pointmass_greedy_action(spec, s.row(r));
      a(r, 0) = g[0];
      a(r, 1) = g[1];
    }
    return a;
  };
  const ActionFn random = [](const Tensor& s, Rng& rng) {
    Tensor a(s.shape());
    for (float& v : a.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return a;
  };
  EXPECT_GT(eval_policy_return(greedy, spec, 100, 3).mean, eval_policy_return(random, spec, 100, 3).mean);
}

TEST(PointMassDataset, CountsAndEpisodeStructure) {
  const PointMassSpec spec;
  const auto d = gen_pointmass_dataset(spec, 7, BehaviorQuality::medium, 1);
  ASSERT_EQ(d.size(), 7u * static_cast<std::size_t>(spec.horizon));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const bool last = (i + 1) % static_cast<std::size_t>(spec.horizon) == 0;
    EXPECT_EQ(d.done[i], last ? 1.0f : 0.0f);
    if (!last) EXPECT_EQ(std::vector<float>(d.s_next.row(i).begin(), d.s_next.row(i).end()),
                         std::vector<float>(d.s.row(i + 1).begin(), d.s.row(i + 1).end()));
  }
}

TEST(PointMassDataset, RandomScoresBelowMedium) {
  const PointMassSpec spec;
  auto mean_r = [](const OfflineDataset& d) {
    double acc = 0.0;
    for (float r : d.r) acc += r;
    return acc / static_cast<double>(d.size());
  };
  EXPECT_LT(mean_r(gen_pointmass_dataset(spec, 100, BehaviorQuality::random, 2)),
            mean_r(gen_pointmass_dataset(spec, 100, BehaviorQuality::medium, 2)));
}

TEST(PointMassDataset, MixedActionsAreBimodalAroundGreedy) {
  const PointMassSpec spec;
  const auto d = gen_pointmass_dataset(spec, 200, BehaviorQuality::mixed, 3);
  // Distance from the greedy action: medium episodes sit near 0, random ones
  // spread out to ~1 and beyond.
  std::size_t near = 0;
  std::size_t far = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto g = pointmass_greedy_action(spec, d.s.row(i));
    const double dist = std::hypot(d.a(i, 0) - g[0], d.a(i, 1) - g[1]);
    near += dist < 0.5;
    far += dist > 1.0;
  }
  const double n = static_cast<double>(d.size());
  EXPECT_GT(near / n, 0.3);
  EXPECT_GT(far / n, 0.2);
}

TEST(PointMassDataset, Errors) {
  EXPECT_THROW(gen_pointmass_dataset(PointMassSpec{}, 0, BehaviorQuality::mixed, 1), InputError);
  PointMassSpec bad;
  bad.horizon = 0;
  EXPECT_THROW(gen_pointmass_dataset(bad, 1, BehaviorQuality::mixed, 1), ConfigError);
  EXPECT_THROW(behavior_quality_from_string("expert"), ConfigError);
}

TEST(DatasetIo, RoundTripIsBitIdentical) {
  const auto dir = scratch("roundtrip");
  for (const auto& d : {gen_gmm_dataset(GmmSpec::three_cluster(), 300, 1),
                        gen_bandit_dataset(BanditSpec::bimodal_2d(), 300, 2),
                        gen_pointmass_dataset(PointMassSpec{}, 5, BehaviorQuality::mixed, 3)}) {
    std::filesystem::remove_all(dir);
    save_dataset(d, dir);
    EXPECT_EQ(load_dataset(dir), d);
  }
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, TruncatedPayloadIsCorruption) {
  const auto dir = scratch("truncated");
  save_dataset(gen_gmm_dataset(GmmSpec::three_cluster(), 100, 1), dir);
  std::filesystem::resize_file(dir / "data.bin", std::filesystem::file_size(dir / "data.bin") - 4);
  EXPECT_THROW(load_dataset(dir), CorruptionError);
  EXPECT_THROW(load_dataset(dir / "missing"), InputError);
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, StandardizeRewards) {
  auto d = gen_bandit_dataset(BanditSpec::gaussian_1d(), 1000, 4);
  standardize_rewards(d);
  double m = 0.0;
  double v = 0.0;
  for (float r : d.r) m += r;
  m /= static_cast<double>(d.size());
  for (float r : d.r) v += (r - m) * (r - m);
  v /= static_cast<double>(d.size());
  EXPECT_NEAR(m, 0.0, 1e-5);
  EXPECT_NEAR(v, 1.0, 1e-3);
}

TEST(Specs, JsonRoundTripAndHash) {
  const BanditSpec b = BanditSpec::gaussian_1d();
  EXPECT_EQ(to_json(bandit_spec_from_json(to_json(b))), to_json(b));
  const GmmSpec g = GmmSpec::three_cluster();
  EXPECT_EQ(to_json(gmm_spec_from_json(to_json(g))), to_json(g));
  const PointMassSpec p;
  EXPECT_EQ(to_json(pointmass_spec_from_json(to_json(p))), to_json(p));
  EXPECT_EQ(spec_hash(to_json(g)), spec_hash(to_json(g)));
  EXPECT_NE(spec_hash(to_json(g)), spec_hash(to_json(b)));
  EXPECT_NE(pointmass_dataset_hash(p, 10, BehaviorQuality::mixed), pointmass_dataset_hash(p, 11, BehaviorQuality::mixed));
}
