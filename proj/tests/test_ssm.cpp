#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

#include "hemb/errors.hpp"
#include "hemb/gradcheck.hpp"
#include "hemb/ssm.hpp"
#include "reference/reference.hpp"
#include "test_util.hpp"

using namespace hemb;
using big = boost::multiprecision::cpp_bin_float_50;

namespace {

// 50-digit evaluation of the exact discretization.
ZohStep exact_zoh(double a, double b, double delta) {
  const big z = big(delta) * big(a);
  const big e = boost::multiprecision::exp(z);
  return {static_cast<double>(e), static_cast<double>((e - 1) / big(a) * big(b))};
}

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

DiscreteLti random_discrete(std::size_t channels, std::size_t states, Rng& rng) {
  ContinuousLti s;
  s.channels = channels;
  s.states = states;
  for (std::size_t i = 0; i < channels * states; ++i) {
    s.a.push_back(-std::exp(rng.uniform(-2.0, 1.5)));
    s.b.push_back(rng.normal());
    s.c.push_back(rng.normal());
  }
  for (std::size_t i = 0; i < channels; ++i) {
    s.delta.push_back(std::exp(rng.uniform(-4.0, 0.0)));
    s.d.push_back(rng.normal());
  }
  return discretize(s);
}

SsmParams random_ssm(std::size_t channels, std::size_t states, Rng& rng) {
  SsmParams p = SsmParams::init(channels, states, rng);
  for (Tensor* t : {&p.w_b, &p.w_c, &p.w_delta, &p.delta_bias, &p.d})
    for (double& v : t->leaf_data()) v += 0.3 * rng.normal();
  return p;
}

}  // namespace

TEST(Zoh, MatchesExtendedPrecisionAcrossStepSizes) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const double delta = std::pow(10.0, rng.uniform(-10.0, 1.0));
    const double a = -std::pow(10.0, rng.uniform(-3.0, 1.0));
    const double b = rng.normal();
    const ZohStep got = zoh_discretize(a, b, delta);
    const ZohStep want = exact_zoh(a, b, delta);
    EXPECT_LT(std::abs(got.a_bar - want.a_bar), 1e-12) << a << " " << delta;
    EXPECT_LT(std::abs(got.b_bar - want.b_bar), 1e-12) << a << " " << delta;
    EXPECT_LT(rel_err(got.b_bar, want.b_bar), 1e-12) << a << " " << delta;
  }
}

TEST(Zoh, SeriesBranchIsContinuousAtTheSwitch) {
  for (double a : {-1.0, -0.01, -3.7}) {
    const double delta = kZohSeriesThreshold / -a;
    const double below = std::nextafter(delta, 0.0);
    const double above = std::nextafter(delta, 1.0);
    const ZohStep lo = zoh_discretize(a, 1.0, below);
    const ZohStep hi = zoh_discretize(a, 1.0, above);
    EXPECT_LT(std::abs(lo.b_bar - hi.b_bar), 1e-9);
    EXPECT_LT(std::abs(lo.b_bar - hi.b_bar) / hi.b_bar, 1e-9);
    EXPECT_LT(rel_err(lo.b_bar, exact_zoh(a, 1.0, below).b_bar), 1e-14);
  }
}

TEST(Zoh, RejectsUnstableOrNonPositiveSteps) {
  EXPECT_THROW(zoh_discretize(0.0, 1.0, 0.1), ContractError);
  EXPECT_THROW(zoh_discretize(0.5, 1.0, 0.1), ContractError);
  EXPECT_THROW(zoh_discretize(-1.0, 1.0, 0.0), ContractError);
  EXPECT_THROW(zoh_discretize(-1.0, 1.0, NAN), ContractError);
}

TEST(LtiSystem, RecurrenceAgreesWithConvolution) {
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng.below(8), n = 1 + rng.below(16), l = 1 + rng.below(64);
    const DiscreteLti sys = random_discrete(c, n, rng);
    const Tensor x = testutil::random_tensor({c, l}, rng);
    const Tensor kernel = lti_conv_kernel(sys, l);
    worst = std::max(worst, testutil::max_abs_diff(recurrent_scan(x, sys), lti_conv_apply(x, kernel, sys.d)));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(LtiSystem, KernelIsTheImpulseResponse) {
  Rng rng(3);
  DiscreteLti sys = random_discrete(3, 5, rng);
  std::fill(sys.d.begin(), sys.d.end(), 0.0);
  std::vector<double> impulse(3 * 12, 0.0);
  for (std::size_t ch = 0; ch < 3; ++ch) impulse[ch * 12] = 1.0;
  const Tensor response = recurrent_scan(Tensor({3, 12}, impulse), sys);
  EXPECT_LT(testutil::max_abs_diff(response, lti_conv_kernel(sys, 12)), 1e-14);
}

TEST(LtiSystem, ShapeMismatchesThrow) {
  Rng rng(4);
  const DiscreteLti sys = random_discrete(2, 3, rng);
  EXPECT_THROW(recurrent_scan(Tensor::zeros({3, 4}), sys), ShapeError);
  EXPECT_THROW(lti_conv_kernel(sys, 0), ShapeError);
  EXPECT_THROW(lti_conv_apply(Tensor::zeros({2, 4}), Tensor::zeros({2, 5}), sys.d), ShapeError);
}

TEST(SelectiveSsm, HasNoGlobalKernel) {
  Rng rng(5);
  const SsmParams p = SsmParams::init(4, 3, rng);
  EXPECT_THROW(lti_conv_kernel(p, 8), ContractError);
}

TEST(SelectiveSsm, StateMatrixStaysNegative) {
  Rng rng(6);
  SsmParams p = SsmParams::init(4, 6, rng);
  for (double& v : p.a_log.leaf_data()) v = rng.uniform(-30.0, 5.0);
  const Tensor a = p.a();
  for (double v : a.data()) EXPECT_LT(v, 0.0);
}

TEST(SelectiveSsm, MatchesLoopReference) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 1 + rng.below(8), n = 1 + rng.below(8), l = 1 + rng.below(20);
    const SsmParams p = random_ssm(c, n, rng);
    const Tensor x = testutil::random_tensor({l, c}, rng);
    EXPECT_LT(ref::max_abs_diff(ssm_tokens(x, p), ref::selective_ssm(ref::from_tensor(x), p)), 1e-12);
  }
}

TEST(SelectiveSsm, ChannelMajorFormIsTheTranspose) {
  Rng rng(8);
  const SsmParams p = random_ssm(5, 4, rng);
  const Tensor x = testutil::random_tensor({9, 5}, rng);
  EXPECT_EQ(testutil::values(recurrent_scan(transpose(x), p)), testutil::values(transpose(ssm_tokens(x, p))));
}

TEST(SelectiveSsm, IsCausal) {
  Rng rng(9);
  const SsmParams p = random_ssm(4, 4, rng);
  const Tensor x = testutil::random_tensor({10, 4}, rng);
  std::vector<double> changed = testutil::values(x);
  for (std::size_t ch = 0; ch < 4; ++ch) changed[6 * 4 + ch] += 1.0;
  const Tensor a = ssm_tokens(x, p);
  const Tensor b = ssm_tokens(Tensor({10, 4}, changed), p);
  for (std::size_t i = 0; i < 6 * 4; ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  EXPECT_GT(testutil::max_abs_diff(a, b), 1e-6);
}

TEST(SelectiveSsm, ScanGradientsMatchFiniteDifferences) {
  Rng rng(10);
  const std::size_t l = 7, c = 3, n = 4;
  const Tensor u = testutil::random_tensor({l, c}, rng, true);
  std::vector<double> deltas(l * c);
  for (double& v : deltas) v = std::exp(rng.uniform(-3.0, 0.5));
  const Tensor delta({l, c}, deltas, true);
  std::vector<double> as(c * n);
  for (double& v : as) v = -std::exp(rng.uniform(-1.0, 1.0));
  const Tensor a({c, n}, as, true);
  const Tensor b = testutil::random_tensor({l, n}, rng, true);
  const Tensor cm = testutil::random_tensor({l, n}, rng, true);
  const Tensor d = testutil::random_tensor({c}, rng, true);
  const Tensor probe = testutil::random_tensor({l, c}, rng);
  const ParamList leaves{{"u", u}, {"delta", delta}, {"a", a}, {"b", b}, {"c", cm}, {"d", d}};
  Rng pick(11);
  const double err =
      gradient_error([&] { return sum_all(selective_scan(u, delta, a, b, cm, d) * probe); }, leaves, pick);
  EXPECT_LT(err, 1e-7);
}

TEST(SelectiveSsm, ScanGradientsAreContinuousAcrossTheSeriesSwitch) {
  Rng rng(12);
  const Tensor u = testutil::random_tensor({5, 2}, rng);
  const Tensor b = testutil::random_tensor({5, 3}, rng);
  const Tensor cm = testutil::random_tensor({5, 3}, rng);
  const Tensor d = testutil::random_tensor({2}, rng);
  const Tensor probe = testutil::random_tensor({5, 2}, rng);
  auto grads = [&](double step) {
    const Tensor delta = Tensor::full({5, 2}, step, true);
    const Tensor a = Tensor::full({2, 3}, -1.0, true);
    sum_all(selective_scan(u, delta, a, b, cm, d) * probe).backward();
    std::vector<double> g(delta.grad().begin(), delta.grad().end());
    g.insert(g.end(), a.grad().begin(), a.grad().end());
    return g;
  };
  const auto lo = grads(kZohSeriesThreshold * (1.0 - 1e-9));
  const auto hi = grads(kZohSeriesThreshold * (1.0 + 1e-9));
  double scale = 0.0;
  for (double g : hi) scale = std::max(scale, std::abs(g));
  ASSERT_GT(scale, 0.0);
  for (std::size_t i = 0; i < lo.size(); ++i) EXPECT_LT(std::abs(lo[i] - hi[i]), 1e-9 * scale);
}

TEST(LtiSystem, StatesStayWithinTheGeometricBound) {
  // One state per channel with C = 1 and D = 0 makes the output the state itself.
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    ContinuousLti s;
    s.channels = 3;
    s.states = 1;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      s.a.push_back(-std::exp(rng.uniform(-3.0, 1.0)));
      s.b.push_back(rng.normal());
      s.c.push_back(1.0);
      s.delta.push_back(std::exp(rng.uniform(-3.0, 0.0)));
      s.d.push_back(0.0);
    }
    const DiscreteLti sys = discretize(s);
    const Tensor x = testutil::random_tensor({3, 1000}, rng);
    const Tensor h = recurrent_scan(x, sys);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double drive = 0.0, peak = 0.0;
      for (std::size_t k = 0; k < 1000; ++k) {
        drive = std::max(drive, std::abs(sys.b_bar[ch] * x.at({ch, k})));
        peak = std::max(peak, std::abs(h.at({ch, k})));
      }
      EXPECT_LE(peak, drive / (1.0 - sys.a_bar[ch]) * (1.0 + 1e-12));
    }
  }
}
