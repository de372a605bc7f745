#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hemb/errors.hpp"
#include "hemb/gradcheck.hpp"
#include "hemb/tensor.hpp"
#include "test_util.hpp"

using namespace hemb;
using testutil::random_tensor;

namespace {

// Independent dense product used as the oracle for matmul/linear.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * n + j] += a.data()[i * k + t] * b.data()[t * n + j];
  return out;
}

double fd_error(std::function<Tensor()> loss, std::initializer_list<Tensor> leaves, std::uint64_t seed = 1) {
  ParamList list;
  for (const auto& t : leaves) list.push_back({"x", t});
  Rng rng(seed);
  return gradient_error(loss, list, rng);
}

Tensor weighted(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum_all(out * random_tensor(out.shape(), rng));
}

}  // namespace

TEST(TensorConstruction, RejectsZeroExtentAndRankZero) {
  EXPECT_THROW(Tensor({2, 0}, {}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}, {1.0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(TensorConstruction, CheckedModeRejectsNonFinite) {
  EXPECT_THROW(Tensor({1}, {NAN}), NumericError);
  EXPECT_THROW(Tensor({2}, {1.0, INFINITY}), NumericError);
  set_checked_mode(false);
  EXPECT_NO_THROW(Tensor({1}, {NAN}));
  set_checked_mode(true);
}

TEST(TensorConstruction, AccessorsAndIndexing) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.shape(), (Shape{2, 3}));
  EXPECT_EQ(m.at({1, 2}), 6.0);
  EXPECT_THROW(m.at({2, 0}), ShapeError);
  EXPECT_THROW(m.item(), ShapeError);
  EXPECT_THROW(Tensor().shape(), ContractError);
}

TEST(TensorElementwise, AddWithRowBroadcast) {
  const Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor b = Tensor::vector({10, 20, 30});
  EXPECT_EQ(testutil::values(a + b), (std::vector<double>{11, 22, 33, 14, 25, 36}));
}

TEST(TensorElementwise, OuterBroadcastMatchesLoops) {
  Rng rng(3);
  const Tensor a = random_tensor({4, 1}, rng);
  const Tensor b = random_tensor({1, 5}, rng);
  const Tensor c = a * b;
  ASSERT_EQ(c.shape(), (Shape{4, 5}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(c.at({i, j}), a.data()[i] * b.data()[j]);
}

TEST(TensorElementwise, BroadcastIsCommutativeForAddAndMul) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({3, 1, 4}, rng);
    const Tensor b = random_tensor({2, 1}, rng);
    EXPECT_EQ(testutil::values(a + b), testutil::values(b + a));
    EXPECT_EQ(testutil::values(a * b), testutil::values(b * a));
  }
}

TEST(TensorElementwise, IncompatibleShapesThrow) {
  EXPECT_THROW(Tensor::zeros({2, 3}) + Tensor::zeros({2}), ShapeError);
}

TEST(TensorElementwise, DivisionByExactZeroIsRejectedInCheckedMode) {
  EXPECT_THROW(Tensor::ones({2}) / Tensor::vector({1.0, 0.0}), NumericError);
}

TEST(TensorElementwise, StableSigmoidAndSoftplusAtExtremes) {
  const Tensor x = Tensor::vector({-800.0, 0.0, 800.0});
  EXPECT_EQ(testutil::values(sigmoid(x)), (std::vector<double>{0.0, 0.5, 1.0}));
  const Tensor sp = softplus(x);
  EXPECT_EQ(sp.data()[0], 0.0);
  EXPECT_NEAR(sp.data()[1], std::log(2.0), 1e-15);
  EXPECT_EQ(sp.data()[2], 800.0);
}

TEST(TensorReduce, BiasedVarianceAndMax) {
  const Tensor x = Tensor::matrix({{1, 2, 3, 4}, {-1, 7, 0, 2}});
  EXPECT_DOUBLE_EQ(variance(x, 1).data()[0], 1.25);
  EXPECT_EQ(testutil::values(max(x, 1)), (std::vector<double>{4, 7}));
  EXPECT_EQ(testutil::values(sum(x, 0)), (std::vector<double>{0, 9, 3, 6}));
  EXPECT_EQ(mean(x, 1, true).shape(), (Shape{2, 1}));
  EXPECT_EQ(sum(Tensor::vector({1, 2}), 0).shape(), (Shape{1}));
}

TEST(TensorSoftmax, RowsSumToOneAndSurviveLargeLogits) {
  const Tensor x = Tensor::matrix({{1000.0, 0.0, -1000.0}, {1, 2, 3}});
  const Tensor s = softmax(x, 1);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR(s.at({r, 0}) + s.at({r, 1}) + s.at({r, 2}), 1.0, 1e-15);
  }
  EXPECT_EQ(s.at({0, 0}), 1.0);
}

TEST(TensorLoss, UniformLogitsGiveLogClassCount) {
  const std::vector<std::size_t> label{3};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({1, 8}), label).item(), std::log(8.0), 1e-15);
  const std::vector<std::size_t> bad{8};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 8}), bad), ShapeError);
}

TEST(TensorLinearAlgebra, MatmulMatchesNaiveProduct) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(9), n = 1 + rng.below(6);
    const Tensor a = random_tensor({m, k}, rng);
    const Tensor b = random_tensor({k, n}, rng);
    const auto expected = naive_matmul(a, b);
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(c.data()[i], expected[i], 1e-13);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(TensorLinearAlgebra, LinearIsTransposedProductPlusBias) {
  Rng rng(6);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor w = random_tensor({5, 3}, rng);
  const Tensor b = random_tensor({5}, rng);
  const Tensor y = linear(x, w, b);
  const auto expected = naive_matmul(x, transpose(w));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < 5; ++o) EXPECT_NEAR(y.at({i, o}), expected[i * 5 + o] + b.data()[o], 1e-13);
}

TEST(TensorConv, MatchesScalarLoopWithZeroPadding) {
  Rng rng(7);
  const Tensor x = random_tensor({2, 3, 6}, rng);
  const Tensor w = random_tensor({4, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor y = conv1d(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 6}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t l = 0; l < 6; ++l) {
        double acc = b.data()[o];
        for (std::size_t i = 0; i < 3; ++i)
          for (int t = -1; t <= 1; ++t) {
            const int src = static_cast<int>(l) + t;
            if (src >= 0 && src < 6) acc += w.at({o, i, std::size_t(t + 1)}) * x.at({n, i, std::size_t(src)});
          }
        EXPECT_NEAR(y.at({n, o, l}), acc, 1e-13);
      }
  EXPECT_THROW(conv1d(x, Tensor::zeros({4, 3, 2})), ShapeError);
}

TEST(TensorShapeOps, FlipIsAnInvolutionAndConcatSliceRoundTrip) {
  Rng rng(8);
  const Tensor x = random_tensor({3, 4, 2}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    EXPECT_EQ(testutil::values(flip(flip(x, axis), axis)), testutil::values(x));
  }
  EXPECT_EQ(testutil::values(flip(Tensor::vector({1, 2, 3}), 0)), (std::vector<double>{3, 2, 1}));
  const Tensor joined = concat({slice(x, 1, 0, 1), slice(x, 1, 1, 3)}, 1);
  EXPECT_EQ(testutil::values(joined), testutil::values(x));
  EXPECT_THROW(slice(x, 1, 2, 3), ShapeError);
  EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
}

TEST(TensorShapeOps, TransposeSwapsAxes) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  const Tensor t = transpose(m);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(testutil::values(t), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(TensorLayerNorm, NormalizesEachRow) {
  Rng rng(9);
  const Tensor x = random_tensor({5, 16}, rng, false, 3.0);
  const Tensor y = layer_norm(x, Tensor::ones({16}), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mu += y.at({r, c});
    mu /= 16.0;
    for (std::size_t c = 0; c < 16; ++c) sq += (y.at({r, c}) - mu) * (y.at({r, c}) - mu);
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(sq / 16.0, 1.0, 1e-4);
  }
}

TEST(TensorAutodiff, SquareHasGradientTwoX) {
  const Tensor x = Tensor::vector({1.5, -2.0, 0.25}, true);
  sum_all(x * x).backward();
  EXPECT_EQ(testutil::values(Tensor({3}, {x.grad().begin(), x.grad().end()})),
            (std::vector<double>{3.0, -4.0, 0.5}));
}

TEST(TensorAutodiff, SharedSubexpressionsAccumulate) {
  const Tensor x = Tensor::vector({2.0}, true);
  const Tensor y = x * 3.0;
  (y * y + y).backward();  // d/dx (9x^2 + 3x) = 18x + 3
  EXPECT_DOUBLE_EQ(x.grad()[0], 39.0);
}

TEST(TensorAutodiff, RepeatedBackwardIsRejected) {
  const Tensor x = Tensor::vector({1.0}, true);
  const Tensor loss = sum_all(x * x);
  loss.backward();
  EXPECT_THROW(loss.backward(), ContractError);
  EXPECT_NO_THROW(sum_all(x).backward());
}

TEST(TensorAutodiff, NonScalarAndDetachedRootsAreRejected) {
  const Tensor x = Tensor::vector({1.0, 2.0}, true);
  EXPECT_THROW((x * x).backward(), ContractError);
  EXPECT_THROW(sum_all(x.detach()).backward(), ContractError);
}

TEST(TensorAutodiff, NoGradGuardRecordsNothing) {
  const Tensor x = Tensor::vector({1.0}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE((x * x).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE((x * x).requires_grad());
}

TEST(TensorAutodiff, IndexSelectScattersRepeatedRows) {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 4}}, true);
  const std::vector<std::size_t> idx{1, 1, 0};
  sum_all(index_select(x, idx)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 2, 2}));
}

TEST(TensorGradients, ElementwiseOpsMatchFiniteDifferences) {
  Rng rng(10);
  const Tensor a = random_tensor({3, 4}, rng, true);
  const Tensor b = random_tensor({4}, rng, true);
  const Tensor pos = Tensor(a.shape(), [&] {
    std::vector<double> v(12);
    for (double& x : v) x = rng.uniform(0.5, 2.0);
    return v;
  }(), true);
  EXPECT_LT(fd_error([&] { return weighted(a + b, 1) + weighted(a - b, 2) + weighted(a * b, 3); }, {a, b}), 1e-7);
  EXPECT_LT(fd_error([&] { return weighted(a / pos, 4); }, {a, pos}), 1e-7);
  EXPECT_LT(fd_error([&] { return weighted(exp(a) + sigmoid(a) + softplus(a) + silu(a) - a, 5); }, {a}), 1e-7);
  EXPECT_LT(fd_error([&] { return weighted(log(pos) + sqrt(pos), 6); }, {pos}), 1e-7);
  EXPECT_LT(fd_error([&] { return weighted(relu(a), 7); }, {a}), 1e-7);
}

TEST(TensorGradients, ReductionsAndStructuralOpsMatchFiniteDifferences) {
  Rng rng(11);
  const Tensor a = random_tensor({3, 5}, rng, true);
  EXPECT_LT(fd_error([&] { return weighted(sum(a, 0), 1) + weighted(mean(a, 1), 2) + weighted(max(a, 1), 3); }, {a}),
            1e-7);
  EXPECT_LT(fd_error([&] { return weighted(variance(a, 0, true), 4) + weighted(softmax(a, 1), 5); }, {a}), 1e-7);
  const std::vector<std::size_t> idx{2, 0, 2};
  EXPECT_LT(fd_error([&] {
              return weighted(flip(index_select(a, idx), 1), 6) + weighted(transpose(a), 7) +
                     weighted(concat({slice(a, 0, 1, 2), reshape(a, {3, 5})}, 0), 8);
            },
            {a}),
            1e-7);
}

TEST(TensorProperties, AdditionIsAssociativeWithinRounding) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor({4, 5}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({4, 5}, rng);
    EXPECT_LT(testutil::max_abs_diff((a + b) + c, a + (b + c)), 1e-12);
  }
}

TEST(TensorProperties, SoftmaxSumsToOneForAnyFiniteInput) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
    const Tensor x = random_tensor({3, 4, 6}, rng, false, scale);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor totals = sum(softmax(x, axis), axis);
      for (double s : totals.data()) EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(TensorProperties, TapeIsBitDeterministic) {
  auto run = [] {
    Rng rng(14);
    const Tensor x = random_tensor({6, 4}, rng, true);
    const Tensor w = random_tensor({3, 4}, rng, true);
    const Tensor y = softmax(linear(silu(x), w), 1);
    const Tensor loss = sum_all(y * log(y + 1.0)) + sum_all(layer_norm(x, Tensor::ones({4}), Tensor::zeros({4})));
    loss.backward();
    std::vector<double> out = testutil::values(loss);
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(TensorGradients, FaultInjectionIsDetected) {
  Rng rng(15);
  const Tensor a = random_tensor({3, 3}, rng, true);
  hemb::testing::inject_fault(hemb::testing::Fault::sigmoid_backward);
  const double err = fd_error([&] { return weighted(sigmoid(a), 1); }, {a});
  hemb::testing::inject_fault(hemb::testing::Fault::none);
  EXPECT_GT(err, 1e-3);
  EXPECT_LT(fd_error([&] { return weighted(sigmoid(a), 1); }, {a}), 1e-7);
}
