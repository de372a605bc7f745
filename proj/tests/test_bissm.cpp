#include <gtest/gtest.h>

#include "hemb/bissm.hpp"
#include "hemb/errors.hpp"
#include "hemb/gradcheck.hpp"
#include "reference/reference.hpp"
#include "test_util.hpp"

using namespace hemb;

namespace {

BissmParams random_bissm(std::size_t c, std::size_t n, std::size_t g, const BissmOptions& options, Rng& rng) {
  BissmParams p = BissmParams::init(c, n, g, options, rng);
  ParamList list;
  p.collect("b", list);
  for (auto& [name, t] : list)
    if (name.find(".a_log") == std::string::npos)
      for (double& v : t.leaf_data()) v += 0.2 * rng.normal();
  return p;
}

// Reverses every channel axis of a tensor whose axes are listed in `channel_axes`.
Tensor reverse_axes(const Tensor& t, std::initializer_list<std::size_t> channel_axes) {
  Tensor out = t;
  for (std::size_t axis : channel_axes) out = flip(out, axis);
  return Tensor(out.shape(), testutil::values(out), true);
}

// The branch that acts on channel-reversed input exactly as `b` acts on the original.
SsmBranch mirrored(const SsmBranch& b) {
  SsmBranch m;
  m.ssm.a_log = reverse_axes(b.ssm.a_log, {0});
  m.ssm.w_b = reverse_axes(b.ssm.w_b, {1});
  m.ssm.w_c = reverse_axes(b.ssm.w_c, {1});
  m.ssm.w_delta = reverse_axes(b.ssm.w_delta, {0, 1});
  m.ssm.delta_bias = reverse_axes(b.ssm.delta_bias, {0});
  m.ssm.d = reverse_axes(b.ssm.d, {0});
  if (b.gate.w.defined()) {
    m.gate.w = reverse_axes(b.gate.w, {0, 1});
    m.gate.b = reverse_axes(b.gate.b, {0});
  }
  return m;
}

std::size_t count(const BissmParams& p) {
  ParamList list;
  p.collect("b", list);
  std::size_t total = 0;
  for (const auto& t : list) total += t.tensor.numel();
  return total;
}

}  // namespace

TEST(Bissm, MatchesLoopReference) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    BissmOptions opt;
    opt.gated = trial % 2 == 0;
    opt.cofe = trial % 3 != 2;
    opt.share_reverse = trial % 4 == 3;
    const std::size_t g = 1 + rng.below(3), c = g * (1 + rng.below(4)), l = 2 + rng.below(16);
    const BissmParams p = random_bissm(c, 1 + rng.below(8), g, opt, rng);
    const Tensor x = testutil::random_tensor({l, c}, rng);
    EXPECT_LT(ref::max_abs_diff(bissm_tokens(x, p), ref::bissm(ref::from_tensor(x), p)), 1e-12);
  }
}

TEST(Bissm, BatchFormMatchesLoopReference) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t b = 1 + rng.below(3), c = 4, l = 3 + rng.below(10);
    const BissmParams p = random_bissm(c, 5, 2, {}, rng);
    const Tensor x = testutil::random_tensor({b, c, l}, rng);
    EXPECT_LT(ref::max_abs_diff(bissm_forward(x, p), ref::bissm_batch(testutil::values(x), b, c, l, p)), 1e-12);
  }
}

TEST(Bissm, ChannelFlipReversesChannelsOnly) {
  const Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(testutil::values(channel_flip(x)), (std::vector<double>{4, 5, 6, 1, 2, 3}));
  EXPECT_EQ(testutil::values(channel_flip(channel_flip(x))), testutil::values(x));
}

TEST(Bissm, ReverseBranchIsTheChannelConjugateOfAMirroredBranch) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 2 + rng.below(7), l = 2 + rng.below(12);
    const SsmBranch fwd = random_bissm(c, 1 + rng.below(6), 1, {}, rng).fwd;
    const Tensor x = testutil::random_tensor({l, c}, rng);
    const Tensor conjugated = flip(ssm_branch(flip(x, 1), mirrored(fwd)), 1);
    EXPECT_LT(testutil::max_abs_diff(conjugated, ssm_branch(x, fwd)), 1e-12);
  }
}

TEST(Bissm, SharedReverseDropsTheSecondBranch) {
  Rng rng(4);
  BissmOptions shared;
  shared.share_reverse = true;
  const BissmParams a = BissmParams::init(8, 4, 2, {}, rng);
  const BissmParams b = BissmParams::init(8, 4, 2, shared, rng);
  EXPECT_FALSE(b.rev.ssm.a_log.defined());
  EXPECT_TRUE(b.reverse().ssm.a_log.same_node(b.fwd.ssm.a_log));
  ParamList branch;
  a.rev.collect("r", branch);
  std::size_t rev_size = 0;
  for (const auto& t : branch) rev_size += t.tensor.numel();
  EXPECT_EQ(count(a) - count(b), rev_size);
}

TEST(Bissm, ReverseBranchSeesTheWholeChannelOrder) {
  // Without the reverse branch, changing only the last channel cannot move
  // earlier outputs of a diagonal-in-time scan; with it, it does.
  Rng rng(5);
  const BissmParams p = random_bissm(4, 3, 1, {}, rng);
  const Tensor x = testutil::random_tensor({6, 4}, rng);
  std::vector<double> changed = testutil::values(x);
  changed[3] += 1.0;
  EXPECT_GT(testutil::max_abs_diff(bissm_tokens(x, p), bissm_tokens(Tensor({6, 4}, changed), p)), 1e-6);
}

TEST(Bissm, RejectsWrongRanks) {
  Rng rng(6);
  const BissmParams p = BissmParams::init(4, 2, 1, {}, rng);
  EXPECT_THROW(bissm_tokens(Tensor::zeros({2, 2, 4}), p), ShapeError);
  EXPECT_THROW(bissm_forward(Tensor::zeros({4, 5}), p), ShapeError);
}

TEST(Bissm, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  const BissmParams p = random_bissm(4, 3, 2, {}, rng);
  const Tensor x = testutil::random_tensor({5, 4}, rng, true);
  const Tensor probe = testutil::random_tensor({5, 4}, rng);
  ParamList leaves{{"x", x}};
  p.collect("bissm", leaves);
  Rng pick(8);
  EXPECT_LT(gradient_error([&] { return sum_all(bissm_tokens(x, p) * probe); }, leaves, pick), 1e-6);
}

TEST(Bissm, CausalWithoutTheGlobalGate) {
  // Channel flipping keeps the token direction, so only CoFE's sequence-wide
  // statistics let later tokens reach earlier outputs.
  Rng rng(9);
  BissmOptions plain;
  plain.cofe = false;
  const BissmParams causal = random_bissm(4, 3, 2, plain, rng);
  const BissmParams gated = random_bissm(4, 3, 2, {}, rng);
  const Tensor x = testutil::random_tensor({8, 4}, rng);
  std::vector<double> changed = testutil::values(x);
  for (std::size_t ch = 0; ch < 4; ++ch) changed[5 * 4 + ch] += 1.0;
  const Tensor x2({8, 4}, changed);
  const Tensor a = bissm_tokens(x, causal), b = bissm_tokens(x2, causal);
  for (std::size_t i = 0; i < 5 * 4; ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  EXPECT_GT(testutil::max_abs_diff(slice(bissm_tokens(x, gated), 0, 0, 5), slice(bissm_tokens(x2, gated), 0, 0, 5)),
            1e-9);
}
