#include <gtest/gtest.h>

#include <unordered_map>

#include "padl/gradcheck.hpp"
#include "padl/ops.hpp"
#include "support/op_gradcheck.hpp"

using namespace padl;

namespace {

// Independent triple-loop reference for matmul.
std::vector<float> matmul_oracle(const std::vector<float>& a, const std::vector<float>& b,
                                 int m, int k, int n) {
  std::vector<float> c(static_cast<std::size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (int r = 0; r < k; ++r) acc += a[i * k + r] * b[r * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

// Independent six-loop reference for conv2d.
std::vector<float> conv_oracle(const Tensor& x, const Tensor& w, int stride, int pad) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  std::vector<float> out(static_cast<std::size_t>(B) * F * oh * ow, 0.0f);
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          float acc = 0.0f;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int sy = y * stride + ky - pad;
                const int sx = xo * stride + kx - pad;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += x.data()[((b * C + c) * H + sy) * W + sx] *
                       w.data()[((f * C + c) * kh + ky) * kw + kx];
              }
          out[((b * F + f) * oh + y) * ow + xo] = acc;
        }
  return out;
}

}  // namespace

TEST(Matmul, IdentityTimesMatrix) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {2, 3, 4, 5});
  Tensor c = matmul(eye, m);
  EXPECT_EQ(c.vec(), (std::vector<float>{2, 3, 4, 5}));
}

TEST(Matmul, HandDotProduct) {
  Tensor a({1, 2}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  EXPECT_FLOAT_EQ(matmul(a, b).item(), 11.0f);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(11);
  Tensor a = rng.normal_tensor({5, 7});
  Tensor b = rng.normal_tensor({7, 3});
  Tensor c = matmul(a, b);
  std::vector<float> expected = matmul_oracle(a.vec(), b.vec(), 5, 7, 3);
  for (std::size_t i = 0; i < expected.size(); ++i)
    EXPECT_NEAR(c.vec()[i], expected[i], 1e-5f);
}

TEST(Matmul, BatchedMatchesPerSliceOracle) {
  Rng rng(12);
  Tensor a = rng.normal_tensor({3, 4, 6});
  Tensor b = rng.normal_tensor({3, 6, 2});
  Tensor c = matmul(a, b);
  for (int s = 0; s < 3; ++s) {
    std::vector<float> as(a.data() + s * 24, a.data() + (s + 1) * 24);
    std::vector<float> bs(b.data() + s * 12, b.data() + (s + 1) * 12);
    std::vector<float> expected = matmul_oracle(as, bs, 4, 6, 2);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(c.data()[s * 8 + i], expected[i], 1e-5f);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected dimension error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SymmetricPairIsHalfHalf) {
  Tensor x({2}, {0, 0});
  Tensor y = softmax(x, 0);
  EXPECT_FLOAT_EQ(y.at(0), 0.5f);
  EXPECT_FLOAT_EQ(y.at(1), 0.5f);
}

TEST(Softmax, StableAtExtremeLogits) {
  Tensor x({2}, {1000, 0});
  Tensor y = softmax(x, 0);
  EXPECT_TRUE(std::isfinite(y.at(0)));
  EXPECT_NEAR(y.at(0), 1.0f, 1e-6f);
  EXPECT_NEAR(y.at(1), 0.0f, 1e-6f);
}

TEST(Softmax, SlicesSumToOne) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = rng.normal_tensor({6}, 0.0f, 3.0f);
    Tensor y = softmax(x, 0);
    double sum = 0.0;
    for (int i = 0; i < 6; ++i) {
      sum += y.at(i);
      EXPECT_GE(y.at(i), 0.0f);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, PermutationEquivariant) {
  Rng rng(6);
  Tensor x = rng.normal_tensor({8});
  Tensor y = softmax(x, 0);
  std::vector<int> perm(8);
  for (int i = 0; i < 8; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  Tensor xp({8});
  for (int i = 0; i < 8; ++i) xp.data()[i] = x.at(perm[i]);
  Tensor yp = softmax(xp, 0);
  for (int i = 0; i < 8; ++i) EXPECT_FLOAT_EQ(yp.at(i), y.at(perm[i]));
}

TEST(Softmax, AxisOutOfRangeThrows) {
  Tensor x({2, 2});
  EXPECT_THROW(softmax(x, 2), std::invalid_argument);
  EXPECT_THROW(softmax(x, -3), std::invalid_argument);
}

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(7);
  Tensor x = rng.normal_tensor({1, 1, 4, 4});
  Tensor k({1, 1, 1, 1}, {1.0f});
  Tensor y = conv2d(x, k);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_FLOAT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, AllOnesCountsNeighbors) {
  Tensor x({1, 1, 5, 5}, 1.0f);
  Tensor k({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(x, k, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_FLOAT_EQ(y.data()[i], 9.0f);
}

TEST(Conv2d, MatchesSixLoopOracle) {
  Rng rng(8);
  Tensor x = rng.normal_tensor({2, 3, 6, 5});
  Tensor k = rng.normal_tensor({4, 3, 3, 3});
  for (const auto& [stride, pad] : std::vector<std::pair<int, int>>{{1, 1}, {2, 1}, {1, 0}}) {
    Tensor y = conv2d(x, k, stride, pad);
    std::vector<float> expected = conv_oracle(x, k, stride, pad);
    ASSERT_EQ(y.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
      EXPECT_NEAR(y.data()[i], expected[i], 1e-5f);
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  Tensor x({1, 2, 4, 4});
  Tensor k({1, 3, 3, 3});
  EXPECT_THROW(conv2d(x, k), std::invalid_argument);
}

TEST(Conv2d, OutputSpatialSizeFormula) {
  Tensor x({1, 1, 7, 9});
  Tensor k({2, 1, 3, 3});
  Tensor y = conv2d(x, k, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4, 5}));  // floor((7+2-3)/2)+1, floor((9+2-3)/2)+1
}

TEST(Backward, SquareAtThree) {
  Tensor x = Tensor::scalar(3.0f, true);
  Tensor y = mul(x, x);
  backward(y);
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(Backward, TanhPrimeAtZero) {
  Tensor x = Tensor::scalar(0.0f, true);
  backward(tanh_t(x));
  EXPECT_FLOAT_EQ(x.grad()[0], 1.0f);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x({2}, {1, 2}, true);
  EXPECT_THROW(backward(add_scalar(x, 1.0f)), std::logic_error);
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tensor x = Tensor::scalar(2.0f, true);
  Tensor y = mul(x, x);
  backward(y);
  backward(y);
  EXPECT_FLOAT_EQ(x.grad()[0], 8.0f);  // two accumulated passes of 4
}

TEST(Backward, DoubleUseSumsContributions) {
  // f(x) = x*x via two uses of the same tensor must match d/dx x^2 = 2x.
  Rng rng(9);
  Tensor x = rng.normal_tensor({4});
  x.set_requires_grad(true);
  Tensor y = sum_all(mul(x, x));
  backward(y);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], 2.0f * x.at(i), 1e-5f);
}

TEST(Backward, CompositeMatchesFiniteDifference) {
  Rng rng(10);
  Tensor w = rng.normal_tensor({4, 4});
  Tensor x = rng.normal_tensor({4, 4});
  Rng wrng(99);
  const double err = grad_check(
      [&](Tensor& t) {
        return padl_tests::weighted_sum(matmul(softmax(t, -1), w), wrng);
      },
      x);
  EXPECT_LE(err, 1e-3);
}

TEST(GradCheck, ConstantGradientIsExact) {
  Rng rng(13);
  Tensor x = rng.normal_tensor({3, 3});
  const double err = grad_check([](Tensor& t) { return sum_all(t); }, x);
  EXPECT_LE(err, 1e-4);
}

TEST(GradCheck, ReportsNaNAsFailure) {
  Tensor x({1}, {0.5f});
  const double err = grad_check(
      [](Tensor& t) {
        Tensor y = add_scalar(t, std::numeric_limits<float>::quiet_NaN());
        return sum_all(y);
      },
      x);
  EXPECT_TRUE(std::isinf(err));
}

TEST(GradCheck, AllOpsPassOverManySeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& c : padl_tests::run_op_gradchecks(seed))
      EXPECT_LE(c.max_rel_error, 1e-3) << c.name << " at seed " << seed;
  }
}

TEST(Tape, TopologicalOrderParentsFirst) {
  Tensor x = Tensor::scalar(1.5f, true);
  Tensor y = mul(x, x);
  Tensor z = sum_all(add_scalar(y, 2.0f));
  Tape tape = Tape::from(z);
  // every node's parents appear earlier in the tape
  std::unordered_map<const TensorImpl*, std::size_t> position;
  for (std::size_t i = 0; i < tape.nodes.size(); ++i) position[tape.nodes[i]] = i;
  for (std::size_t i = 0; i < tape.nodes.size(); ++i)
    for (const auto& parent : tape.nodes[i]->parents)
      if (position.count(parent.get()))
        EXPECT_LT(position[parent.get()], i);
}

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(shape_numel(t.shape()), t.numel());
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, DetachCutsTheGraph) {
  Tensor x = Tensor::scalar(2.0f, true);
  Tensor y = mul(x, x).detach();
  EXPECT_FALSE(y.requires_grad());
  Tensor z = mul_scalar(y, 3.0f);
  backward(z);
  EXPECT_TRUE(x.grad().empty());
}

TEST(NoGrad, SuppressesRecording) {
  Tensor x = Tensor::scalar(2.0f, true);
  const std::uint64_t before = op_count();
  {
    NoGradGuard off;
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(op_count(), before);
}
