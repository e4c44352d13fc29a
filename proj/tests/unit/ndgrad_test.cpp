#include <gtest/gtest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "phcp/common/error.hpp"
#include "phcp/ndgrad/ops.hpp"

using namespace phcp;
using namespace phcp::nd;
using phcp::testing::check_gradients;
using phcp::testing::random_param;
using phcp::testing::random_tensor;

namespace {

// Direct six-loop cross-correlation used as the conv2d oracle.
std::vector<double> conv_reference(const Tensor& x, const Tensor& k, const Tensor& b, int pad) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cout = k.dim(0), ks = k.dim(2);
  const int ho = h + 2 * pad - ks + 1, wo = w + 2 * pad - ks + 1;
  std::vector<double> out(cout * ho * wo);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b.data()[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < ks; ++ky)
            for (int kx = 0; kx < ks; ++kx) {
              const int iy = oy + ky - pad, ix = ox + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += k.data()[((co * cin + ci) * ks + ky) * ks + kx] * x.data()[(ci * h + iy) * w + ix];
            }
        out[(co * ho + oy) * wo + ox] = acc;
      }
  return out;
}

}  // namespace

TEST(Conv2d, IdentityKernelReturnsInput) {
  Rng rng(1);
  auto x = random_tensor(rng, {3, 5, 4});
  Tensor k({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) k.mutable_data()[c * 3 + c] = 1.0;
  Tape tape;
  auto y = conv2d(tape, x, k, Tensor({3}), 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  Rng rng(2);
  auto x = random_tensor(rng, {2, 6, 6});
  Tensor b({4}, std::vector<double>{0.5, -1.0, 2.0, 0.0});
  Tape tape;
  auto y = conv2d(tape, x, Tensor({4, 2, 3, 3}), b, 1);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(y.data()[c * 36 + i], b.data()[c]);
}

TEST(Conv2d, MatchesLoopReference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t cin = 1 + seed % 3, cout = 1 + seed % 4, ks = seed % 2 ? 3 : 5;
    auto x = random_tensor(rng, {cin, 7, 6});
    auto k = random_tensor(rng, {cout, cin, ks, ks});
    auto b = random_tensor(rng, {cout});
    Tape tape;
    auto y = conv2d(tape, x, k, b, ks / 2);
    const auto ref = conv_reference(x, k, b, ks / 2);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ShapeErrorNamesDimension) {
  Tape tape;
  try {
    conv2d(tape, Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("input-channel"), std::string::npos);
  }
}

TEST(Reduce, ConstantTensorReducesToConstant) {
  Tensor x({3, 4, 5}, 2.5);
  for (auto axis : {ReduceAxis::Spatial, ReduceAxis::Channel})
    for (auto mode : {ReduceMode::Mean, ReduceMode::Max}) {
      Tape tape;
      auto y = reduce(tape, x, axis, mode);
      for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.5);
    }
}

TEST(Reduce, ChannelMaxOfTwoPlanes) {
  Tensor x({2, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    x.mutable_data()[i] = 1.0;
    x.mutable_data()[9 + i] = 3.0;
  }
  Tape tape;
  auto y = reduce(tape, x, ReduceAxis::Channel, ReduceMode::Max);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 3.0);
}

TEST(Reduce, SpatialMeanMatchesSummation) {
  Rng rng(3);
  auto x = random_tensor(rng, {4, 6, 7});
  Tape tape;
  auto y = reduce(tape, x, ReduceAxis::Spatial, ReduceMode::Mean);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 42; ++i) s += x.data()[c * 42 + i];
    EXPECT_NEAR(y.data()[c], s / 42.0, 1e-12);
  }
}

TEST(Reduce, MaxTieRoutesGradientToFirstIndex) {
  Tensor x({1, 1, 4}, std::vector<double>{1.0, 5.0, 5.0, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  auto y = reduce(tape, x, ReduceAxis::Spatial, ReduceMode::Max);
  tape.backward(sum(tape, y));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{0.0, 1.0, 0.0, 0.0}));
}

TEST(Pointwise, SigmoidOfZero) {
  Tape tape;
  EXPECT_EQ(sigmoid(tape, Tensor::scalar(0.0)).item(), 0.5);
}

TEST(Pointwise, SoftmaxSingleCandidateIsOne) {
  Rng rng(4);
  Tape tape;
  auto w = softmax(tape, random_tensor(rng, {1, 3, 3}, -50, 50));
  for (double v : w.data()) EXPECT_EQ(v, 1.0);
}

TEST(Pointwise, BroadcastMulMatchesLoop) {
  Rng rng(5);
  auto x = random_tensor(rng, {3, 4, 5});
  auto gc = random_tensor(rng, {3, 1, 1});
  auto gs = random_tensor(rng, {1, 4, 5});
  Tape tape;
  auto yc = mul(tape, x, gc);
  auto ys = mul(tape, gs, x);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 20; ++i) {
      EXPECT_EQ(yc.data()[c * 20 + i], x.data()[c * 20 + i] * gc.data()[c]);
      EXPECT_EQ(ys.data()[c * 20 + i], x.data()[c * 20 + i] * gs.data()[i]);
    }
}

TEST(Pointwise, IllegalBroadcastThrows) {
  Tape tape;
  EXPECT_THROW(add(tape, Tensor({3, 4, 5}), Tensor({3, 4, 1})), ShapeError);
  EXPECT_THROW(mul(tape, Tensor({3, 4, 5}), Tensor({2, 1, 1})), ShapeError);
  EXPECT_THROW(add(tape, Tensor({3, 1, 1}), Tensor({1, 4, 5})), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(6);
  auto x = random_param(rng, {2, 3, 3});
  Tape tape;
  tape.backward(sum(tape, x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
  Rng rng(7);
  auto x = random_param(rng, {2, 3, 3});
  Tape tape;
  tape.backward(sum(tape, mul(tape, x, x)));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Backward, StaleTapeThrows) {
  Rng rng(8);
  auto x = random_param(rng, {3});
  Tape tape;
  auto s = sum(tape, x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), Error);
}

TEST(Backward, NoTrackedLeavesProducesNoBuffers) {
  Rng rng(9);
  auto x = random_tensor(rng, {2, 4, 4});
  auto k = random_tensor(rng, {1, 2, 3, 3});
  auto b = random_tensor(rng, {1});
  Tape tape;
  auto y = sum(tape, conv2d(tape, x, k, b, 1));
  tape.backward(y);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(x.has_grad());
  EXPECT_FALSE(k.has_grad());
  EXPECT_FALSE(b.has_grad());
}

TEST(Backward, FrozenParameterTransmitsGradientWithoutBuffer) {
  Rng rng(10);
  auto x = random_param(rng, {2, 4, 4});
  auto k = random_tensor(rng, {3, 2, 3, 3});
  auto b = random_tensor(rng, {3});
  Tape tape;
  tape.backward(sum(tape, conv2d(tape, x, k, b, 1)));
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(k.has_grad());
  EXPECT_FALSE(b.has_grad());
}

// Every primitive, 100 seeds each, against central differences.
TEST(GradCheck, PrimitivesMatchFiniteDifferences) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    auto x = random_param(rng, {3, 4, 5});
    auto k = random_param(rng, {2, 3, 3, 3});
    auto b = random_param(rng, {2});
    auto gc = random_param(rng, {2, 1, 1});
    auto gs = random_param(rng, {1, 4, 5});
    auto m1 = random_param(rng, {3, 4});
    auto m2 = random_param(rng, {4, 2});
    std::vector<double> targets(20);
    for (auto& t : targets) t = rng.uniform();
    std::vector<double> reg_t(x.numel());
    std::vector<unsigned char> mask(x.numel());
    for (std::size_t i = 0; i < reg_t.size(); ++i) {
      reg_t[i] = rng.uniform(-1, 1);
      mask[i] = rng.uniform() < 0.5;
    }
    const std::vector<std::size_t> perm{2, 0, 1};
    const std::vector<double> sc{1.5, -0.5, 2.0}, sh{0.1, 0.2, -0.3};

    const std::vector<std::pair<const char*, phcp::testing::ScalarFn>> cases = {
        {"conv", [&](Tape& t) { return sum(t, mul(t, conv2d(t, x, k, b, 1), conv2d(t, x, k, b, 1))); }},
        {"reduce", [&](Tape& t) {
           auto a = reduce(t, x, ReduceAxis::Spatial, ReduceMode::Max);
           auto c = reduce(t, x, ReduceAxis::Channel, ReduceMode::Mean);
           auto d = reduce(t, x, ReduceAxis::Channel, ReduceMode::Max);
           auto e = reduce(t, x, ReduceAxis::Spatial, ReduceMode::Mean);
           return add(t, add(t, sum(t, mul(t, a, a)), sum(t, mul(t, c, d))), sum(t, mul(t, e, e)));
         }},
        {"unary", [&](Tape& t) {
           auto y = add(t, unary(t, x, Unary::Sigmoid), unary(t, x, Unary::ExpLin));
           y = add(t, y, unary(t, x, Unary::Tanh));
           return sum(t, mul(t, y, unary(t, x, Unary::Relu)));
         }},
        {"broadcast", [&](Tape& t) {
           auto y = conv2d(t, x, k, b, 1);
           auto z = sub(t, mul(t, y, gc), mul(t, gs, y));
           return sum(t, mul(t, add(t, z, gs), z));
         }},
        {"matmul", [&](Tape& t) {
           auto y = matmul(t, m1, m2);
           auto r = reshape(t, y, {6});
           return sum(t, mul(t, r, r));
         }},
        {"softmax", [&](Tape& t) {
           auto s = softmax(t, x);
           return sum(t, mul(t, s, x));
         }},
        {"concat_slice", [&](Tape& t) {
           auto c = concat(t, {x, slice_channels(t, x, 1, 2), resize_channels(t, x, 5)});
           auto a = channel_affine(t, slice_channels(t, c, 2, 3), perm, sc, sh);
           return sum(t, mul(t, a, c.rank() == 3 ? slice_channels(t, c, 0, 3) : a));
         }},
        {"losses", [&](Tape& t) {
           auto logits = slice_channels(t, x, 0, 1);
           auto l1 = sum(t, focal_bce_with_logits(t, scale(t, logits, 3.0), targets, 2.0));
           auto l2 = mean(t, smooth_l1(t, x, reg_t, mask, 0.5));
           return add(t, l1, l2);
         }},
    };
    for (const auto& [name, fn] : cases) {
      const auto r = check_gradients(fn, {x, k, b, gc, gs, m1, m2});
      worst = std::max(worst, r.max_rel_error);
      ASSERT_LE(r.max_rel_error, 1e-4) << name << " seed " << seed;
    }
  }
  RecordProperty("worst_rel_error", std::to_string(worst));
}

TEST(Backward, Linearity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(2000 + seed);
    auto x = random_param(rng, {2, 3, 3});
    auto k = random_tensor(rng, {2, 2, 3, 3});
    auto b = random_tensor(rng, {2});
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    auto f = [&](Tape& t) { return sum(t, unary(t, conv2d(t, x, k, b, 1), Unary::Tanh)); };
    auto g = [&](Tape& t) { return sum(t, mul(t, x, x)); };

    auto grad_of = [&](auto fn) {
      x.clear_grad();
      Tape t;
      t.backward(fn(t));
      return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    const auto gf = grad_of(f);
    const auto gg = grad_of(g);
    const auto gcomb = grad_of([&](Tape& t) { return add(t, scale(t, f(t), alpha), scale(t, g(t), beta)); });
    for (std::size_t i = 0; i < gf.size(); ++i)
      EXPECT_NEAR(gcomb[i], alpha * gf[i] + beta * gg[i], 1e-12);
  }
}

TEST(Backward, DeterministicBitwise) {
  auto run = [] {
    Rng rng(77);
    auto x = random_param(rng, {3, 5, 5});
    auto k = random_param(rng, {4, 3, 3, 3});
    auto b = random_param(rng, {4});
    Tape t;
    auto y = conv2d(t, x, k, b, 1);
    auto s = softmax(t, y);
    t.backward(sum(t, mul(t, s, y)));
    std::vector<double> out(y.data().begin(), y.data().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}
