#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pflow/adam.hpp"
#include "pflow/autodiff.hpp"
#include "pflow/mlp.hpp"

using namespace pflow;

using fixture::mixed_loss;
using fixture::random_mlp;

TEST(MlpForward, ZeroWeightsGiveZeroOutput) {
  Rng rng(1);
  Mlp net({3, 5, 2}, Activation::relu, rng);
  for (auto& w : net.weights()) w.value = Tensor(w.value.shape());
  Tensor out = net(Tensor::matrix({{1.0, -2.0, 3.0}, {0.5, 0.5, 0.5}}));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(MlpForward, IdentityLinearLayer) {
  Mlp net({2, 2}, Activation::softplus, {Tensor::matrix({{1, 0}, {0, 1}})}, {Tensor({1, 2})});
  Tensor out = net(Tensor::row({0.25, -7.5}));
  EXPECT_EQ(out.to_vector(), (std::vector<double>{0.25, -7.5}));
}

TEST(MlpForward, MatchesHandCodedForwardPass) {
  for (auto act : {Activation::softplus, Activation::tanh, Activation::relu}) {
    Rng rng(7);
    Mlp net({2, 8, 1}, act, rng);
    for (auto& b : net.biases()) b.value.values()[0] = 0.3;
    const double got = net(Tensor::row({0.3, -0.7}))[0];
    const double want = oracle::mlp_forward(net, {0.3, -0.7})[0];
    EXPECT_NEAR(got, want, 1e-14) << to_string(act);
  }
}

TEST(MlpForward, ShapeMismatchIsDimensionError) {
  Rng rng(0);
  Mlp net({3, 4, 1}, Activation::tanh, rng);
  EXPECT_THROW(net(Tensor::row({1.0, 2.0})), DimensionError);
}

TEST(MlpForward, NonFiniteInputIsNumericError) {
  Rng rng(0);
  Mlp net({2, 4, 1}, Activation::tanh, rng);
  EXPECT_THROW(net(Tensor::row({1.0, std::nan("")})), NumericError);
}

TEST(MlpForward, ParameterCountMatchesLayerFormula) {
  Rng rng(0);
  Mlp net({3, 7, 5, 2}, Activation::softplus, rng);
  EXPECT_EQ(net.parameter_count(), 3u * 7 + 7 + 7 * 5 + 5 + 5 * 2 + 2);
  std::vector<Parameter*> ps;
  net.collect(ps);
  std::size_t n = 0;
  for (auto* p : ps) n += p->value.size();
  EXPECT_EQ(n, net.parameter_count());
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Parameter w("w", Tensor::row({1.0, -2.0, 3.5}));
  tape.backward(sum(tape.param(w)));
  for (double g : w.grad.values()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNorm) {
  Tape tape;
  Parameter w("w", Tensor::row({3.0, -4.0}));
  tape.backward(scale(sum(square(tape.param(w))), 0.5));
  EXPECT_EQ(w.grad.to_vector(), (std::vector<double>{3.0, -4.0}));
}

TEST(Backward, NonScalarOutputIsUsageError) {
  Tape tape;
  Parameter w("w", Tensor::row({1.0, 2.0}));
  EXPECT_THROW(tape.backward(tape.param(w)), UsageError);
}

TEST(Backward, UnreachableParameterGetsZeroGradient) {
  Tape tape;
  Parameter used("used", Tensor::row({2.0})), unused("unused", Tensor::row({5.0}));
  unused.grad = Tensor::row({9.0});
  unused.zero_grad();
  Var u = tape.param(unused);
  (void)u;
  tape.backward(square(tape.param(used)));
  EXPECT_EQ(used.grad[0], 4.0);
  EXPECT_EQ(unused.grad[0], 0.0);
}

TEST(Backward, EveryMlpParameterReceivesAGradient) {
  Rng rng(3);
  Mlp net({2, 6, 6, 3}, Activation::softplus, rng);
  std::vector<Parameter*> ps;
  net.collect(ps);
  for (auto* p : ps) p->grad = Tensor(p->value.shape(), std::nan(""));
  zero_grads(ps);
  Tape tape;
  tape.backward(mixed_loss(tape, net, rng.normal(4, 2)));
  for (auto* p : ps) {
    ASSERT_TRUE(p->grad.same_shape(p->value)) << p->name;
    EXPECT_TRUE(p->grad.all_finite()) << p->name;
  }
}

TEST(Backward, BroadcastingOpsMatchFiniteDifferences) {
  Rng rng(11);
  Parameter a("a", rng.normal(3, 4)), b("b", rng.normal(1, 4)), c("c", rng.normal(3, 1)), s("s", rng.normal(1, 1));
  std::vector<Parameter*> ps{&a, &b, &c, &s};
  auto f = [&](Tape& t) {
    Var va = t.param(a), vb = t.param(b), vc = t.param(c), vs = t.param(s);
    Var u = (va + vb) * vc - va / add_scalar(square(vb), 1.0);
    Var v = concat_cols({slice_cols(u, 1, 3), tanh(vs * slice_cols(u, 0, 1))});
    Var w = permute_cols(v, {2, 0, 1});
    return sum(softplus(w)) + mean(exp(scale(va, 0.1))) + sum(sqrt(add_scalar(square(vc), 1.0))) +
           sum(row_sum(w * w));
  };
  zero_grads(ps);
  {
    Tape t;
    t.backward(f(t));
  }
  const double worst = oracle::worst_fd_error(ps, [&] {
    Tape t;
    return f(t).value()[0];
  });
  EXPECT_LT(worst, 1e-6);
}

TEST(Backward, MatmulAffineAndBceMatchFiniteDifferences) {
  Rng rng(12);
  Parameter x("x", rng.normal(5, 3)), w("w", rng.normal(3, 2)), b("b", rng.normal(1, 2));
  const Tensor targets = rng.uniform(5, 2, 0.0, 1.0);
  std::vector<Parameter*> ps{&x, &w, &b};
  auto f = [&](Tape& t) {
    Var px = t.param(x), pw = t.param(w), pb = t.param(b);
    return sum(bce_with_logits(affine(px, pw, pb), targets)) + sum(square(matmul(px, pw)));
  };
  zero_grads(ps);
  {
    Tape t;
    t.backward(f(t));
  }
  EXPECT_LT(oracle::worst_fd_error(ps, [&] {
              Tape t;
              return f(t).value()[0];
            }),
            1e-6);
}

TEST(Softplus, StableAtExtremes) {
  Tape tape;
  Var x = tape.variable(Tensor::row({-800.0, -40.0, 0.0, 40.0, 800.0}));
  Var y = softplus(x);
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_EQ(y.value()[1], 0.0);
  EXPECT_NEAR(y.value()[2], std::log(2.0), 1e-15);
  EXPECT_EQ(y.value()[3], 40.0);
  EXPECT_EQ(y.value()[4], 800.0);
  tape.backward(sum(y));
  const Tensor g = tape.grad(x);
  EXPECT_NEAR(g[2], 0.5, 1e-15);
  EXPECT_NEAR(g[4], 1.0, 1e-15);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[3], 1.0);
}

TEST(Softplus, MatchesLog1pExpOnAGrid) {
  for (double v = -35.0; v <= 35.0; v += 0.37) {
    Tape tape;
    const double got = softplus(tape.constant(Tensor::scalar(v))).value()[0];
    const double want = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    // beyond |x| = 30 the asymptote is off by at most e^-30
    EXPECT_NEAR(got, want, 1e-13 + 1e-15 * std::abs(want)) << v;
  }
}

TEST(Autodiff, NonFiniteResultIsRejected) {
  Tape tape;
  Var x = tape.variable(Tensor::row({-1.0}));
  EXPECT_THROW(log(x), NumericError);
}

// 50 random MLP losses, analytic vs central differences.
TEST(GradientProperty, FiftyRandomMlpsMatchFiniteDifferences) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(1000 + trial);
    Mlp net = random_mlp(rng, trial % 2 ? Activation::tanh : Activation::softplus);
    const Tensor x = rng.normal(3, net.in_width());
    std::vector<Parameter*> ps;
    net.collect(ps);
    zero_grads(ps);
    {
      Tape t;
      t.backward(mixed_loss(t, net, x));
    }
    worst = std::max(worst, oracle::worst_fd_error(ps, [&] {
                       Tape t;
                       return mixed_loss(t, net, x).value()[0];
                     }));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(worst, 1e-4);
  EXPECT_LT(secs, 10.0);
}

TEST(GradientProperty, SameSeedSameTrajectory) {
  auto run = [] {
    Rng rng(5);
    Mlp net({2, 8, 1}, Activation::softplus, rng);
    std::vector<Parameter*> ps;
    net.collect(ps);
    AdamState st;
    for (int i = 0; i < 20; ++i) {
      zero_grads(ps);
      Tape t;
      t.backward(mean(square(net.forward(t, t.constant(rng.normal(16, 2))))));
      adam_step(st, ps);
    }
    std::vector<double> out;
    for (auto* p : ps) {
      auto v = p->value.to_vector();
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter p("p", Tensor::row({1.0, -2.0}));
  std::vector<Parameter*> ps{&p};
  AdamState st;
  for (int i = 0; i < 3; ++i) adam_step(st, ps);
  EXPECT_EQ(p.value.to_vector(), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.step, 3);
}

TEST(Adam, FirstStepWithUnitGradient) {
  Parameter p("p", Tensor::row({0.0}));
  p.grad = Tensor::row({1.0});
  std::vector<Parameter*> ps{&p};
  AdamState st;
  adam_step(st, ps);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.value[0], -1e-3 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, TwoStepsMatchUnrolledRecurrence) {
  Parameter p("p", Tensor::row({0.5}));
  std::vector<Parameter*> ps{&p};
  AdamState st;
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    p.grad = Tensor::row({1.0});
    adam_step(st, ps);
    m = 0.9 * m + 0.1;
    v = 0.999 * v + 0.001;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p.value[0], x, 1e-16);
}

TEST(Adam, ShapeMismatchIsDimensionError) {
  Parameter p("p", Tensor::row({1.0, 2.0}));
  std::vector<Parameter*> ps{&p};
  AdamState st;
  adam_step(st, ps);
  p.grad = Tensor::row({1.0});
  EXPECT_THROW(adam_step(st, ps), DimensionError);
}
