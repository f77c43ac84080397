#include <gtest/gtest.h>

#include <cmath>

#include "egflow/errors.hpp"
#include "egflow/flow.hpp"

using namespace egflow;

TEST(LinearPath, Examples) {
  const Tensor x1 = Tensor::from_rows({{1.0f}});
  const Tensor zero = Tensor::from_rows({{0.0f}});
  EXPECT_EQ(linear_path_sample(x1, zero, 0.5f)[0], 0.5f);
  const Tensor a = Tensor::from_rows({{0.3f, -1.2f}});
  const Tensor e = Tensor::from_rows({{-0.7f, 2.5f}});
  EXPECT_EQ(linear_path_sample(a, e, 0.0f), e);
  EXPECT_EQ(linear_path_sample(a, e, 1.0f), a);
  EXPECT_THROW(linear_path_sample(a, e, 1.5f), DomainError);
  EXPECT_THROW(linear_path_sample(a, e, -0.1f), DomainError);
}

TEST(LinearVelocity, Examples) {
  EXPECT_EQ(linear_cond_velocity(Tensor::from_rows({{0.5f}}), Tensor::from_rows({{1.0f}}), 0.5f)[0], 1.0f);
  const Tensor u = linear_cond_velocity(Tensor::from_rows({{1.0f, 1.0f}}), Tensor::from_rows({{2.0f, 0.0f}}), 0.5f);
  EXPECT_EQ(u, Tensor::from_rows({{2.0f, -2.0f}}));
  EXPECT_THROW(linear_cond_velocity(u, u, 1.0f), DomainError);
}

TEST(LinearVelocity, RecoversDisplacementAlongPath) {
  Rng rng(3);
  Tensor x1 = Tensor::matrix(64, 3);
  Tensor eps = Tensor::matrix(64, 3);
  for (float& v : x1.data()) v = rng.normalf();
  for (float& v : eps.data()) v = rng.normalf();
  for (int k = 0; k <= 100; ++k) {
    const float t = static_cast<float>(k) / 100.0f * (1.0f - 1e-3f);
    const Tensor u = linear_cond_velocity(linear_path_sample(x1, eps, t), x1, t);
    for (std::size_t i = 0; i < u.size(); ++i) {
      const float want = x1[i] - eps[i];
      // Round-off in x_t is amplified by 1/(1-t).
      const float tol = 4e-7f * (std::fabs(x1[i]) + std::fabs(eps[i]) + 1.0f) / (1.0f - t);
      EXPECT_NEAR(u[i], want, tol) << "t=" << t;
    }
  }
}

TEST(GaussianVelocity, Specialisations) {
  const Tensor x1 = Tensor::from_rows({{1.5f, -0.5f}});
  const Tensor x_t = Tensor::from_rows({{0.2f, 0.9f}});
  const float t = 0.3f;
  Tensor alpha(x1.shape());
  for (std::size_t i = 0; i < x1.size(); ++i) alpha[i] = t * x1[i];
  const Tensor general = gaussian_cond_velocity(x_t, alpha, x1, 1.0f - t, -1.0f);
  const Tensor linear = linear_cond_velocity(x_t, x1, t);
  for (std::size_t i = 0; i < x1.size(); ++i) EXPECT_NEAR(general[i], linear[i], 1e-6);
  EXPECT_EQ(gaussian_cond_velocity(alpha, alpha, x1, 0.7f, 3.0f), x1);
  EXPECT_EQ(gaussian_cond_velocity(x_t, alpha, x1, 0.7f, 0.0f), x1);
  EXPECT_THROW(gaussian_cond_velocity(x_t, alpha, x1, 0.0f, 1.0f), DomainError);
}

TEST(Cfm, LossIsNonNegativeAndZeroForExactTarget) {
  Rng rng(5);
  FlowModel m = FlowModel::create(2, 0, {16}, Activation::mish, rng);
  Tensor x1 = Tensor::matrix(32, 2);
  for (float& v : x1.data()) v = rng.normalf();
  EXPECT_GE(cfm_loss(m, x1, rng), 0.0f);
  const FlowDraws d = FlowDraws::sample(32, 2, rng);
  const Tensor target = linear_cond_velocity(linear_path_sample(x1, d.eps, d.t), x1, d.t);
  EXPECT_EQ(regression_loss(target, target), 0.0f);
  EXPECT_THROW(cfm_loss(m, Tensor::matrix(0, 2), rng), InputError);
}

TEST(Cfm, DrawsStayBelowOne) {
  Rng rng(6);
  const FlowDraws d = FlowDraws::sample(10000, 1, rng);
  for (float t : d.t) {
    EXPECT_GE(t, 0.0f);
    EXPECT_LE(t, kMaxTrainTime);
  }
}

TEST(Cfm, DeltaAtZeroIsLearned) {
  Rng init(1);
  Rng train(2);
  FlowModel m = FlowModel::create(1, 0, {64, 64}, Activation::mish, init);
  AdamState opt = AdamState::for_mlp(m.net, {.lr = 1e-3f});
  const Tensor x1 = Tensor::matrix(128, 1);
  float first = 0.0f;
  float last = 0.0f;
  for (int step = 0; step < 2000; ++step) {
    const FlowDraws d = FlowDraws::sample(128, 1, train);
    last = cfm_train_step(m, opt, x1, d);
    if (step == 0) first = last;
  }
  EXPECT_LT(last, first);
  Rng sample(3);
  const Tensor x = sample_flow(m, 4000, 20, sample);
  double mean_abs = 0.0;
  for (float v : x.data()) mean_abs += std::fabs(v);
  mean_abs /= static_cast<double>(x.size());
  EXPECT_LT(mean_abs, 0.1);
}

TEST(Euler, ConstantAndZeroFields) {
  const Tensor c = Tensor::from_rows({{0.75f, -2.0f}});
  for (int steps : {1, 3, 20}) {
    const Tensor x = euler_integrate([&](const Tensor&, float) { return c; }, Tensor::matrix(1, 2), steps);
    EXPECT_NEAR(x[0], 0.75f, 1e-6);
    EXPECT_NEAR(x[1], -2.0f, 1e-6);
  }
  const Tensor x0 = Tensor::from_rows({{1.0f, 2.0f}});
  EXPECT_EQ(euler_integrate([](const Tensor& x, float) { return Tensor(x.shape(), 0.0f); }, x0, 7), x0);
  EXPECT_THROW(euler_integrate([](const Tensor& x, float) { return x; }, x0, 0), DomainError);
}

TEST(Euler, ExponentialGrowth) {
  const Tensor x = euler_integrate([](const Tensor& x, float) { return x; }, Tensor::scalar(1.0f), 1000);
  EXPECT_NEAR(x[0], std::exp(1.0), 1e-2);
}

TEST(Euler, NonFiniteReportsStep) {
  try {
    euler_integrate(
        [](const Tensor& x, float t) {
          Tensor u(x.shape(), 1.0f);
          if (t >= 0.5f) u[0] = INFINITY;
          return u;
        },
        Tensor::scalar(0.0f), 4);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(Euler, ConditionalFieldLandsNearTarget) {
  const Tensor x1 = Tensor::scalar(1.3f);
  for (int steps : {5, 20, 100}) {
    const Tensor x = euler_integrate([&](const Tensor& x, float t) { return linear_cond_velocity(x, x1, t); },
                                     Tensor::scalar(-0.4f), steps);
    EXPECT_LT(std::fabs(x[0] - 1.3f), 5.0f / static_cast<float>(steps));
  }
}

TEST(FlowModel, ConditioningChecked) {
  Rng rng(9);
  FlowModel m = FlowModel::create(2, 3, {8}, Activation::mish, rng);
  const Tensor x = Tensor::matrix(4, 2);
  const Tensor s = Tensor::matrix(4, 3);
  EXPECT_EQ(m.velocity(x, 0.5f, &s).cols(), 2u);
  EXPECT_THROW(m.velocity(x, 0.5f), DimensionError);
  const Tensor bad = Tensor::matrix(4, 2);
  EXPECT_THROW(m.velocity(x, 0.5f, &bad), DimensionError);
}
