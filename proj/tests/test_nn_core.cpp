#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "drex/nn/ops.hpp"
#include "drex/nn/optim.hpp"
#include "drex/nn/primitives.hpp"
#include "drex/nn/tape.hpp"
#include "gradient_check.hpp"

using namespace drex;
using drex::testing::check_gradients;
using drex::testing::random_matrix;

namespace {

// erf by its Maclaurin series; independent of std::erf.
double erf_series(double x) {
  double term = x, sum = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    sum += term / (2 * n + 1);
  }
  return 2.0 / std::sqrt(std::numbers::pi) * sum;
}

double normal_cdf_oracle(double x) { return 0.5 * (1.0 + erf_series(x / std::sqrt(2.0))); }

}  // namespace

TEST(Gelu, KnownValues) {
  EXPECT_EQ(nn::gelu(0.0), 0.0);
  EXPECT_NEAR(nn::gelu(10.0), 10.0, 1e-6);
  EXPECT_NEAR(nn::gelu(1.0), 1.0 * normal_cdf_oracle(1.0), 1e-12);
  EXPECT_NEAR(nn::gelu(1.0), 0.841345, 1e-6);
  EXPECT_NEAR(nn::gelu(-1.5), -1.5 * normal_cdf_oracle(-1.5), 1e-12);
}

TEST(Gelu, VectorForm) {
  const std::vector<double> x = {-2, -0.5, 0, 0.5, 2};
  const auto y = nn::gelu(std::span<const double>(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], nn::gelu(x[i]));
}

TEST(LayerNorm, ConstantVectorMapsToZero) {
  const std::vector<double> x(6, 3.25), g(6, 1.0), b(6, 0.0);
  for (double v : nn::layer_norm<double>(x, g, b)) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, UnitMoments) {
  Rng rng(3);
  std::vector<double> x(50), g(50, 1.0), b(50, 0.0);
  for (auto& v : x) v = rng.normal() * 4 + 2;
  const auto y = nn::layer_norm<double>(x, g, b, 1e-5);
  double mean = 0, var = 0;
  for (double v : y) mean += v;
  mean /= 50;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= 50;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-5);
}

TEST(LayerNorm, TwoPointExample) {
  const std::vector<double> x = {1, 3}, g = {1, 1}, b = {0, 0};
  const auto y = nn::layer_norm<double>(x, g, b, 0.0);
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(LayerNorm, RejectsMismatchedGain) {
  const std::vector<double> x = {1, 2, 3}, g = {1, 1}, b = {0, 0, 0};
  EXPECT_THROW(nn::layer_norm<double>(x, g, b), nn::ShapeError);
}

TEST(SoftmaxTemperature, Examples) {
  const std::vector<double> equal = {0.3, 0.3, 0.3};
  for (double w : nn::softmax_temperature<double>(equal, 0.7)) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);

  const std::vector<double> spread = {5.0, -3.0};
  for (double w : nn::softmax_temperature<double>(spread, 1e6)) EXPECT_NEAR(w, 0.5, 1e-5);

  const std::vector<double> l = {std::log(4.0), 0.0};
  const auto w = nn::softmax_temperature<double>(l, 1.0);
  EXPECT_NEAR(w[0], 0.8, 1e-15);
  EXPECT_NEAR(w[1], 0.2, 1e-15);
}

TEST(SoftmaxTemperature, NonPositiveTauIsDomainError) {
  const std::vector<double> l = {1, 2};
  EXPECT_THROW(nn::softmax_temperature<double>(l, 0.0), nn::DomainError);
  EXPECT_THROW(nn::softmax_temperature<double>(l, -1.0), nn::DomainError);
}

TEST(SoftmaxTemperature, SumsToOneAndKeepsArgmax) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<float> l(2 + rng.below(6));
    for (auto& v : l) v = static_cast<float>(rng.uniform(-20, 20));
    const float tau = static_cast<float>(std::exp(rng.uniform(-4, 4)));
    const auto w = nn::softmax_temperature<float>(l, tau);
    double total = 0;
    for (float v : w) total += v;
    EXPECT_NEAR(total, 1.0, 1e-6);
    const auto arg_l = std::max_element(l.begin(), l.end()) - l.begin();
    const auto arg_w = std::max_element(w.begin(), w.end()) - w.begin();
    EXPECT_EQ(arg_l, arg_w);
  }
}

TEST(Dropout, IdentityCases) {
  const std::vector<double> x = {1, -2, 3, 4};
  Rng rng(1);
  EXPECT_EQ(nn::dropout<double>(x, 0.0, true, &rng), x);
  EXPECT_EQ(nn::dropout<double>(x, 0.5, false, &rng), x);
  EXPECT_THROW(nn::dropout<double>(x, 1.0, true, &rng), nn::DomainError);
}

TEST(Dropout, ZeroFractionConcentrates) {
  Rng rng(2024);
  const std::vector<float> x(1'000'000, 1.0f);
  const auto y = nn::dropout<float>(x, 0.1, true, &rng);
  std::size_t zeros = 0;
  for (float v : y) {
    if (v == 0.0f) ++zeros;
    else EXPECT_FLOAT_EQ(v, 1.0f / 0.9f);
  }
  const double frac = static_cast<double>(zeros) / 1e6;
  EXPECT_GE(frac, 0.097);
  EXPECT_LE(frac, 0.103);
}

TEST(Huber, Examples) {
  const std::vector<double> a = {0.2, 0.7}, same = {0.2, 0.7};
  EXPECT_EQ(nn::huber_loss<double>(a, same), 0.0);
  const std::vector<double> p1 = {1.5}, t1 = {1.0};
  EXPECT_DOUBLE_EQ(nn::huber_loss<double>(p1, t1, 1.0), 0.125);
  const std::vector<double> p2 = {3.0}, t2 = {1.0};
  EXPECT_DOUBLE_EQ(nn::huber_loss<double>(p2, t2, 1.0), 1.5);
  const std::vector<double> short_t = {1.0, 2.0};
  EXPECT_THROW(nn::huber_loss<double>(p1, short_t), nn::ShapeError);
}

TEST(Huber, SmoothAtDelta) {
  const double d = 1.0, e = 1e-8;
  EXPECT_NEAR(nn::huber(d - e, d), nn::huber(d + e, d), 1e-7);
  EXPECT_NEAR(nn::huber_grad(d - e, d), nn::huber_grad(d + e, d), 1e-7);
  EXPECT_NEAR(nn::huber(-d - e, d), nn::huber(-d + e, d), 1e-7);
  EXPECT_NEAR(nn::huber_grad(-d - e, d), nn::huber_grad(-d + e, d), 1e-7);
}

TEST(Backward, LinearSumGradientIsInput) {
  nn::Tape<double> tape;
  Rng rng(5);
  nn::ParamStore<double> ps;
  auto& w = ps.add("w", 1, 6);
  w.value = random_matrix(rng, 1, 6);
  const auto x = random_matrix(rng, 1, 6);
  const auto loss = nn::sum(tape, nn::multiply(tape, tape.param(w), tape.input(x)));
  tape.backward(loss);
  EXPECT_EQ(w.grad, x);
}

TEST(Backward, HuberGradientZeroAtMinimum) {
  nn::Tape<double> tape;
  Matrix<double> p(3, 1, 0.25);
  const auto pv = tape.input(p, true);
  tape.backward(nn::huber_loss(tape, pv, tape.input(p)));
  for (double g : tape.grad(pv).flat()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ErrorsBeforeForward) {
  nn::Tape<double> tape;
  EXPECT_THROW(tape.backward(nn::Var{}), std::logic_error);
  const auto x = tape.input(Matrix<double>(2, 2, 1.0), true);
  EXPECT_THROW(tape.backward(x), std::logic_error);  // not a scalar
  EXPECT_THROW(tape.grad(x), std::logic_error);
}

TEST(Backward, PrimitivesMatchFiniteDifferences) {
  Rng rng(17);
  nn::ParamStore<double> ps;
  auto& g = ps.add("gain", 1, 5);
  auto& b = ps.add("offset", 1, 5);
  auto& lt = ps.add("log_tau", 1, 1);
  auto& al = ps.add("alpha", 1, 1);
  g.value = random_matrix(rng, 1, 5);
  b.value = random_matrix(rng, 1, 5);
  lt.value(0, 0) = 0.3;
  al.value(0, 0) = 0.2;
  std::vector<Matrix<double>> inputs = {random_matrix(rng, 3, 5), random_matrix(rng, 3, 5), random_matrix(rng, 3, 2),
                                        random_matrix(rng, 3, 1)};
  auto loss = [&](nn::Tape<double>& t, const std::vector<nn::Var>& in) {
    auto a = nn::gelu(t, nn::layer_norm(t, in[0], t.param(g), t.param(b)));
    auto w = nn::softmax_temperature(t, in[2], t.param(lt));
    auto f = nn::weighted_fusion(t, a, in[1], w, t.param(al));
    auto c = nn::concat_cols(t, f, in[3]);
    Rng drop(9);
    auto d = nn::dropout(t, c, 0.3, true, &drop);
    return nn::sum(t, nn::multiply(t, d, d));
  };
  const auto res = check_gradients(ps, inputs, loss);
  EXPECT_GT(res.checked, 40u);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Backward, ThreeLayerNetMatchesFiniteDifferences) {
  Rng rng(23);
  nn::ParamStore<double> ps;
  const std::size_t widths[] = {7, 6, 5, 1};
  for (int l = 0; l < 3; ++l) {
    ps.add("w" + std::to_string(l), widths[l], widths[l + 1]).value = random_matrix(rng, widths[l], widths[l + 1]);
    ps.add("b" + std::to_string(l), 1, widths[l + 1]).value = random_matrix(rng, 1, widths[l + 1]);
  }
  std::vector<Matrix<double>> inputs = {random_matrix(rng, 4, 7), random_matrix(rng, 4, 1)};
  auto loss = [&](nn::Tape<double>& t, const std::vector<nn::Var>& in) {
    auto x = in[0];
    for (int l = 0; l < 3; ++l) {
      x = nn::linear(t, x, t.param(ps[2 * l]), t.param(ps[2 * l + 1]));
      if (l < 2) x = nn::gelu(t, x);
    }
    return nn::huber_loss(t, x, in[1], 0.5);
  };
  const auto res = check_gradients(ps, inputs, loss);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(AdamW, ZeroGradientNoDecayIsNoOp) {
  nn::ParamStore<double> ps;
  ps.add("p", 2, 2).value = Matrix<double>(2, 2, {1, -2, 3, 0.5});
  const auto before = ps[0].value;
  nn::AdamW<double> opt(ps, {0.9, 0.999, 1e-8, 0.0});
  opt.step(ps, 1e-3);
  EXPECT_EQ(ps[0].value, before);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(AdamW, DecoupledDecayScalesParameters) {
  nn::ParamStore<double> ps;
  ps.add("p", 1, 3).value = Matrix<double>(1, 3, {1, -2, 4});
  nn::AdamW<double> opt(ps, {0.9, 0.999, 1e-8, 0.01});
  const double lr = 0.05;
  opt.step(ps, lr);
  EXPECT_DOUBLE_EQ(ps[0].value(0, 0), 1 * (1 - lr * 0.01));
  EXPECT_DOUBLE_EQ(ps[0].value(0, 1), -2 * (1 - lr * 0.01));
  EXPECT_DOUBLE_EQ(ps[0].value(0, 2), 4 * (1 - lr * 0.01));
}

TEST(AdamW, SingleStepArithmetic) {
  nn::ParamStore<double> ps;
  auto& p = ps.add("p", 1, 1);
  p.value(0, 0) = 1.0;
  p.grad(0, 0) = 0.5;
  nn::AdamW<double> opt(ps);
  opt.step(ps, 0.001);
  // m = 0.05, v = 0.00025; m_hat = 0.5, v_hat = 0.25.
  const double m_hat = (0.1 * 0.5) / (1 - 0.9);
  const double v_hat = (0.001 * 0.25) / (1 - 0.999);
  const double expected = 1.0 * (1 - 0.001 * 0.01) - 0.001 * m_hat / (std::sqrt(v_hat) + 1e-8);
  EXPECT_NEAR(p.value(0, 0), expected, 1e-15);
  EXPECT_NEAR(p.value(0, 0), 0.99899000002, 1e-12);
}

TEST(OneCycle, Landmarks) {
  nn::OneCycleSchedule s;
  s.max_lr = 1e-3;
  s.total_steps = 1000;
  EXPECT_DOUBLE_EQ(nn::onecycle_lr(s, 0), 1e-3 / 25);
  EXPECT_DOUBLE_EQ(nn::onecycle_lr(s, 300), 1e-3);
  EXPECT_DOUBLE_EQ(nn::onecycle_lr(s, 1000), 1e-3 / 1e4);
  EXPECT_THROW(nn::onecycle_lr(s, 1001), std::out_of_range);
}

TEST(OneCycle, PositiveAndPeaksOnce) {
  nn::OneCycleSchedule s;
  s.total_steps = 1250;
  double prev = 0;
  bool falling = false;
  for (std::uint64_t t = 0; t <= s.total_steps; ++t) {
    const double lr = nn::onecycle_lr(s, t);
    EXPECT_GT(lr, 0.0);
    EXPECT_LE(lr, s.max_lr);
    if (t > 0) {
      if (lr < prev) falling = true;
      if (falling) EXPECT_LE(lr, prev);
    }
    prev = lr;
  }
}

TEST(Ema, Examples) {
  nn::ParamStore<double> params;
  params.add("p", 1, 2).value = Matrix<double>(1, 2, {1.0, 1.0});
  nn::Ema<double> fixed(params, 0.999);
  fixed.update(params);
  EXPECT_EQ(fixed.shadow()[0].value, params[0].value);

  nn::ParamStore<double> zeros;
  zeros.add("p", 1, 2);
  auto ema = nn::Ema<double>::with_shadow(zeros, 0.999);
  nn::ema_update(ema, params);
  EXPECT_NEAR(ema.shadow()[0].value(0, 0), 0.001, 1e-15);

  for (int k = 2; k <= 2000; ++k) {
    nn::ema_update(ema, params);
    if (k % 250 == 0) EXPECT_NEAR(ema.shadow()[0].value(0, 1), 1.0 - std::pow(0.999, k), 1e-12);
  }
}

TEST(Ema, DebiasedAverageIgnoresZeroInit) {
  nn::ParamStore<double> params;
  params.add("w", 1, 2).value.fill(3.0);
  auto ema = nn::Ema<double>::zero_debiased(params, 0.999);
  EXPECT_EQ(ema.shadow()[0].value(0, 0), 0.0);
  for (int k = 1; k <= 10; ++k) {
    ema.update(params);
    EXPECT_NEAR(ema.shadow()[0].value(0, 0), 3.0 * (1.0 - std::pow(0.999, k)), 1e-12);
    EXPECT_NEAR(ema.average()[0].value(0, 1), 3.0, 1e-12);
  }
  // Two values: weights (1 - d) d and (1 - d), renormalized.
  auto two = nn::Ema<double>::zero_debiased(params, 0.5);
  two.update(params);
  params[0].value.fill(1.0);
  two.update(params);
  EXPECT_NEAR(two.average()[0].value(0, 0), (0.25 * 3.0 + 0.5 * 1.0) / 0.75, 1e-15);
}

TEST(Ema, ShapeMismatchThrows) {
  nn::ParamStore<double> a, b;
  a.add("p", 1, 2);
  b.add("p", 2, 1);
  nn::Ema<double> ema(a, 0.5);
  EXPECT_THROW(ema.update(b), std::invalid_argument);
}

TEST(Ema, ShadowStaysWithinHistoricalRange) {
  Rng rng(8);
  nn::ParamStore<double> params;
  params.add("p", 1, 4).value = random_matrix(rng, 1, 4);
  nn::Ema<double> ema(params, 0.9);
  std::vector<double> lo(4), hi(4);
  for (int i = 0; i < 4; ++i) lo[i] = hi[i] = params[0].value(0, i);
  for (int step = 0; step < 300; ++step) {
    params[0].value = random_matrix(rng, 1, 4, 3.0);
    for (int i = 0; i < 4; ++i) {
      lo[i] = std::min(lo[i], params[0].value(0, i));
      hi[i] = std::max(hi[i], params[0].value(0, i));
    }
    ema.update(params);
    for (int i = 0; i < 4; ++i) {
      EXPECT_GE(ema.shadow()[0].value(0, i), lo[i] - 1e-12);
      EXPECT_LE(ema.shadow()[0].value(0, i), hi[i] + 1e-12);
    }
  }
}
