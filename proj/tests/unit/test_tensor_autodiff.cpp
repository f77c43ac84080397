#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "egflow/adam.hpp"
#include "egflow/autodiff.hpp"
#include "egflow/errors.hpp"
#include "egflow/finite_diff.hpp"
#include "egflow/mlp.hpp"

using namespace egflow;

namespace {

using Flat = std::vector<double>;

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (float& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

Flat to_double(const Tensor& t) { return Flat(t.data().begin(), t.data().end()); }

// Double-precision reference of one op: inputs as flat row-major buffers.
using RefFn = std::function<Flat(const std::vector<Flat>&)>;
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares the tape gradient of <seed, op(inputs)> with central differences of
// the double reference, input by input.
void check_op(const char* name, const TapeFn& tape_fn, const RefFn& ref, const std::vector<Tensor>& inputs,
              Rng& rng) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var out = tape_fn(tape, vars);
  const Tensor seed = random_tensor(out.value().rows(), out.value().cols(), rng);
  tape.backward(out, seed);

  std::vector<Flat> base;
  for (const auto& t : inputs) base.push_back(to_double(t));
  const Flat seed_d = to_double(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    ScalarFn f = [&](std::span<const double> x) {
      auto probe = base;
      probe[k].assign(x.begin(), x.end());
      const Flat y = ref(probe);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += seed_d[i] * y[i];
      return acc;
    };
    const Flat fd = finite_diff_grad(f, base[k], 1e-3);
    const Flat ad = to_double(tape.grad(vars[k]));
    ASSERT_EQ(fd.size(), ad.size()) << name;
    EXPECT_LT(relative_error(ad, fd, 1e-6), 1e-3) << name << " input " << k;
  }
}

double ref_mish(double x) { return x * std::tanh(std::log1p(std::exp(x))); }
double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Flat map(const Flat& a, double (*f)(double)) {
  Flat out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Reference MLP in double, parameters laid out like MlpParams::flatten().
Flat ref_mlp(const std::vector<std::size_t>& sizes, Activation act, const Flat& params, const Flat& x,
             std::size_t n) {
  Flat a = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l];
    const std::size_t out = sizes[l + 1];
    Flat z(n * out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < out; ++j) {
        double acc = params[off + in * out + j];
        for (std::size_t i = 0; i < in; ++i) acc += a[r * in + i] * params[off + i * out + j];
        if (l + 2 < sizes.size()) {
          if (act == Activation::tanh) acc = std::tanh(acc);
          if (act == Activation::mish) acc = ref_mish(acc);
          if (act == Activation::gelu) acc = ref_gelu(acc);
        }
        z[r * out + j] = acc;
      }
    }
    off += in * out + out;
    a = std::move(z);
  }
  return a;
}

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0f);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_EQ(repeat_rows(t, 2)(1, 0), 1.0f);
  EXPECT_EQ(repeat_rows(t, 2)(2, 0), 4.0f);
  const std::vector<std::size_t> idx{1, 0};
  EXPECT_EQ(gather_rows(t, idx)(0, 0), 4.0f);
}

TEST(Tensor, NonFiniteIsAnError) {
  Tensor t = Tensor::from_rows({{1.0f, NAN}});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.check_finite("t"), NumericError);
}

TEST(Activations, MishAndGelu) {
  EXPECT_EQ(mish(0.0f), 0.0f);
  EXPECT_NEAR(mish(1.0f), ref_mish(1.0), 1e-6);
  EXPECT_TRUE(std::isfinite(mish(100.0f)));
  EXPECT_NEAR(mish(100.0f), 100.0f, 1e-4);
  EXPECT_NEAR(mish(-100.0f), 0.0f, 1e-6);
  EXPECT_NEAR(gelu(1.0f), ref_gelu(1.0), 1e-6);
}

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  MlpParams p = MlpParams::zeros({3, 8, 2}, Activation::mish);
  Rng rng(1);
  const Tensor y = mlp_forward(p, random_tensor(5, 3, rng));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Mlp, MishAtZeroInput) {
  // One hidden unit with unit weight: hidden = mish(0) = 0, output = 0.
  MlpParams p = MlpParams::zeros({1, 1, 1}, Activation::mish);
  p.weights[0][0] = 1.0f;
  p.weights[1][0] = 1.0f;
  EXPECT_EQ(mlp_forward(p, Tensor::from_rows({{0.0f}}))[0], 0.0f);
}

TEST(Mlp, IdentityNetEchoesInput) {
  MlpParams p = MlpParams::zeros({3, 3}, Activation::identity);
  for (std::size_t i = 0; i < 3; ++i) p.weights[0](i, i) = 1.0f;
  Rng rng(2);
  const Tensor x = random_tensor(4, 3, rng);
  EXPECT_EQ(mlp_forward(p, x), x);
}

TEST(Mlp, DimensionMismatch) {
  Rng rng(3);
  MlpParams p = MlpParams::init({3, 4, 1}, Activation::tanh, rng);
  EXPECT_THROW(mlp_forward(p, Tensor::matrix(2, 2)), DimensionError);
}

TEST(Mlp, TapedAndInferencePathsAgreeBitwise) {
  Rng rng(4);
  for (Activation act : {Activation::mish, Activation::tanh, Activation::gelu}) {
    MlpParams p = MlpParams::init({5, 16, 16, 3}, act, rng);
    const Tensor x = random_tensor(7, 5, rng);
    Tape tape;
    MlpBinding b;
    Var y = mlp_forward(p, tape.constant(x), tape, &b);
    EXPECT_EQ(y.value(), mlp_forward(p, x));
    EXPECT_EQ(mlp_forward(p, x), mlp_forward(p, x));
  }
}

TEST(Mlp, SaveLoadRoundTrip) {
  Rng rng(5);
  MlpParams p = MlpParams::init({2, 6, 1}, Activation::gelu, rng);
  const auto dir = std::filesystem::temp_directory_path() / "egflow_mlp_roundtrip";
  std::filesystem::remove_all(dir);
  save_mlp(p, dir);
  const MlpParams q = load_mlp(dir);
  EXPECT_TRUE(p.same_architecture(q));
  EXPECT_EQ(p.flatten(), q.flatten());
  std::filesystem::remove_all(dir);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0f));
  Var y = square(x);
  tape.backward(y);
  EXPECT_FLOAT_EQ(tape.grad(x)[0], 6.0f);
}

TEST(Backward, ConstantHasZeroGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0f));
  Var c = tape.constant(Tensor::scalar(2.0f));
  Var y = add(scale(x, 0.0f), c);
  tape.backward(y);
  EXPECT_EQ(tape.grad(x)[0], 0.0f);
}

TEST(Backward, StateErrors) {
  {
    Tape tape;
    EXPECT_THROW(tape.backward(Var{&tape, 0}), StateError);
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(1.0f));
    Var y = square(x);
    EXPECT_THROW(tape.grad(x), StateError);
    EXPECT_THROW(tape.backward(y, Tensor::matrix(2, 1)), DimensionError);
    tape.backward(y);
    EXPECT_THROW(tape.backward(y), StateError);
    EXPECT_THROW(square(x), StateError);
  }
}

TEST(Backward, EveryOpMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(4);
    const std::size_t d = 1 + rng.below(4);
    const std::size_t m = 1 + rng.below(4);
    const Tensor a = random_tensor(n, d, rng);
    const Tensor b = random_tensor(n, d, rng);

    check_op(
        "matmul", [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
        [=](const std::vector<Flat>& x) {
          Flat out(n * m, 0.0);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < m; ++j)
              for (std::size_t i = 0; i < d; ++i) out[r * m + j] += x[0][r * d + i] * x[1][i * m + j];
          return out;
        },
        {a, random_tensor(d, m, rng)}, rng);

    auto binary = [&](const char* name, const TapeFn& f, double (*op)(double, double)) {
      check_op(
          name, f,
          [=](const std::vector<Flat>& x) {
            Flat out(x[0].size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(x[0][i], x[1][i]);
            return out;
          },
          {a, b}, rng);
    };
    binary("add", [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); },
           [](double x, double y) { return x + y; });
    binary("sub", [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); },
           [](double x, double y) { return x - y; });
    binary("mul", [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); },
           [](double x, double y) { return x * y; });

    check_op(
        "add_row", [](Tape&, const std::vector<Var>& v) { return add_row(v[0], v[1]); },
        [=](const std::vector<Flat>& x) {
          Flat out(n * d);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[0][r * d + j] + x[1][j];
          return out;
        },
        {a, random_tensor(1, d, rng)}, rng);

    check_op(
        "mul_col", [](Tape&, const std::vector<Var>& v) { return mul_col(v[0], v[1]); },
        [=](const std::vector<Flat>& x) {
          Flat out(n * d);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[0][r] * x[1][r * d + j];
          return out;
        },
        {random_tensor(n, 1, rng), a}, rng);

    auto unary = [&](const char* name, const TapeFn& f, const std::function<double(double)>& op,
                     const Tensor& in) {
      check_op(
          name, f,
          [=](const std::vector<Flat>& x) {
            Flat out(x[0].size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(x[0][i]);
            return out;
          },
          {in}, rng);
    };
    unary("scale", [](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.7f); },
          [](double x) { return -1.7f * x; }, a);
    unary("add_scalar", [](Tape&, const std::vector<Var>& v) { return add_scalar(v[0], 0.3f); },
          [](double x) { return x + 0.3f; }, a);
    unary("tanh", [](Tape&, const std::vector<Var>& v) { return tanh(v[0]); },
          [](double x) { return std::tanh(x); }, a);
    unary("mish", [](Tape&, const std::vector<Var>& v) { return mish(v[0]); }, ref_mish, a);
    unary("gelu", [](Tape&, const std::vector<Var>& v) { return gelu(v[0]); }, ref_gelu, a);
    unary("square", [](Tape&, const std::vector<Var>& v) { return square(v[0]); },
          [](double x) { return x * x; }, a);

    const std::size_t lo = rng.below(d);
    const std::size_t hi = lo + 1 + rng.below(d - lo);
    check_op(
        "slice_cols", [=](Tape&, const std::vector<Var>& v) { return slice_cols(v[0], lo, hi); },
        [=](const std::vector<Flat>& x) {
          Flat out;
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = lo; j < hi; ++j) out.push_back(x[0][r * d + j]);
          return out;
        },
        {a}, rng);

    check_op(
        "concat_cols",
        [](Tape&, const std::vector<Var>& v) {
          const std::vector<Var> parts{v[0], v[1]};
          return concat_cols(parts);
        },
        [=](const std::vector<Flat>& x) {
          Flat out;
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t j = 0; j < d; ++j) out.push_back(x[0][r * d + j]);
            for (std::size_t j = 0; j < m; ++j) out.push_back(x[1][r * m + j]);
          }
          return out;
        },
        {a, random_tensor(n, m, rng)}, rng);

    check_op(
        "sum", [](Tape&, const std::vector<Var>& v) { return sum(v[0]); },
        [](const std::vector<Flat>& x) {
          double s = 0.0;
          for (double v : x[0]) s += v;
          return Flat{s};
        },
        {a}, rng);
    check_op(
        "mean", [](Tape&, const std::vector<Var>& v) { return mean(v[0]); },
        [](const std::vector<Flat>& x) {
          double s = 0.0;
          for (double v : x[0]) s += v;
          return Flat{s / static_cast<double>(x[0].size())};
        },
        {a}, rng);
    check_op(
        "row_sum", [](Tape&, const std::vector<Var>& v) { return row_sum(v[0]); },
        [=](const std::vector<Flat>& x) {
          Flat out(n, 0.0);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) out[r] += x[0][r * d + j];
          return out;
        },
        {a}, rng);
    if (HasFailure()) return;
  }
}

TEST(Backward, RandomMlpMatchesFiniteDifferences) {
  Rng rng(12);
  for (Activation act : {Activation::mish, Activation::tanh, Activation::gelu}) {
    const std::vector<std::size_t> sizes{3, 8, 2};
    MlpParams p = MlpParams::init(sizes, act, rng);
    const std::size_t n = 4;
    const Tensor x = random_tensor(n, 3, rng);
    Tape tape;
    MlpBinding bind;
    Var xin = tape.leaf(x);
    Var y = mlp_forward(p, xin, tape, &bind);
    const Tensor seed = random_tensor(n, 2, rng);
    tape.backward(y, seed);

    const auto packed = p.flatten();
    Flat flat(packed.begin(), packed.end());
    const Flat xd = to_double(x);
    const Flat sd = to_double(seed);
    auto dot = [&](const Flat& out) {
      double acc = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) acc += sd[i] * out[i];
      return acc;
    };
    const Flat fd_params =
        finite_diff_grad([&](std::span<const double> q) { return dot(ref_mlp(sizes, act, Flat(q.begin(), q.end()), xd, n)); },
                         flat, 1e-3);
    Flat ad_params;
    for (const Tensor& g : bind.grads(tape)) ad_params.insert(ad_params.end(), g.data().begin(), g.data().end());
    EXPECT_LT(relative_error(ad_params, fd_params), 1e-3) << to_string(act);

    const Flat fd_x = finite_diff_grad(
        [&](std::span<const double> q) { return dot(ref_mlp(sizes, act, flat, Flat(q.begin(), q.end()), n)); }, xd,
        1e-3);
    EXPECT_LT(relative_error(to_double(tape.grad(xin)), fd_x), 1e-3) << to_string(act);
  }
}

TEST(FiniteDiff, Examples) {
  const Flat x2{2.0};
  EXPECT_NEAR(finite_diff_grad([](std::span<const double> x) { return x[0] * x[0] * x[0]; }, x2, 1e-4)[0], 12.0,
              1e-5);
  const Flat x12{1.0, 2.0};
  const auto c = finite_diff_grad([](std::span<const double>) { return 4.0; }, x12, 1e-3);
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);
  const auto q = finite_diff_grad(
      [](std::span<const double> x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]); }, x12, 1e-3);
  EXPECT_NEAR(q[0], 1.0, 1e-6);
  EXPECT_NEAR(q[1], 2.0, 1e-6);
  EXPECT_THROW(finite_diff_grad([](std::span<const double>) { return 0.0; }, x12, 0.0), DomainError);
  EXPECT_THROW(finite_diff_grad([](std::span<const double>) { return NAN; }, x12, 1e-3), NumericError);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p = Tensor::from_rows({{1.0f, -2.0f}});
  std::vector<Tensor*> ps{&p};
  AdamState s = AdamState::for_params(ps);
  const std::vector<Tensor> g{Tensor::matrix(1, 2)};
  for (int i = 0; i < 10; ++i) adam_step(ps, g, s);
  EXPECT_EQ(p, Tensor::from_rows({{1.0f, -2.0f}}));
  EXPECT_EQ(s.step, 10);
}

TEST(Adam, FirstStepIsSignTimesLr) {
  Tensor p = Tensor::from_rows({{0.0f, 0.0f, 0.0f}});
  std::vector<Tensor*> ps{&p};
  AdamState s = AdamState::for_params(ps, {.lr = 0.01f});
  const std::vector<Tensor> g{Tensor::from_rows({{3.0f, -0.5f, 1e-3f}})};
  adam_step(ps, g, s);
  EXPECT_NEAR(p[0], -0.01f, 1e-6);
  EXPECT_NEAR(p[1], 0.01f, 1e-6);
  EXPECT_NEAR(p[2], -0.01f, 1e-4);
}

TEST(Adam, MinimisesQuadratic) {
  Tensor p = Tensor::scalar(1.0f);
  std::vector<Tensor*> ps{&p};
  AdamState s = AdamState::for_params(ps, {.lr = 0.1f});
  for (int i = 0; i < 100; ++i) {
    const std::vector<Tensor> g{Tensor::scalar(p[0])};
    adam_step(ps, g, s);
  }
  EXPECT_LT(std::fabs(p[0]), 0.05f);
}

TEST(Adam, ShapeMismatch) {
  Tensor p = Tensor::matrix(1, 2);
  std::vector<Tensor*> ps{&p};
  AdamState s = AdamState::for_params(ps);
  const std::vector<Tensor> g{Tensor::matrix(1, 3)};
  EXPECT_THROW(adam_step(ps, g, s), DimensionError);
}

TEST(Rng, StreamsAreIndependentAndReproducible) {
  Rng a = Rng::stream(7, "data");
  Rng b = Rng::stream(7, "data");
  Rng c = Rng::stream(7, "eval");
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  EXPECT_NE(Rng(1).fork(0).next_u64(), Rng(2).fork(0).next_u64());
  EXPECT_NE(Rng(1).fork(0).next_u64(), Rng(1).fork(1).next_u64());
}
