#include <gtest/gtest.h>

#include <cmath>

#include "premixer/adam.hpp"
#include "premixer/error.hpp"
#include "premixer/gradcheck.hpp"
#include "premixer/ops.hpp"
#include "premixer/parallel.hpp"
#include "premixer/rng.hpp"

using namespace premixer;

namespace {

Tensor randn(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

TEST(Matmul, IdentityLeavesOperand) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE(bit_equal(matmul(eye, a), a));
}

TEST(Matmul, HandExample) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 1 * 5 + 2 * 6);
  EXPECT_EQ(c[1], 3 * 5 + 4 * 6);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a({2, 3}), b({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 3)"), std::string::npos) << e.what();
  }
}

TEST(Matmul, AgreesWithNaiveTripleLoop) {
  Rng rng(3);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 5, 9}, {13, 17, 11}, {64, 33, 70}}) {
    Tensor a = randn({std::size_t(m), std::size_t(k)}, rng), b = randn({std::size_t(k), std::size_t(n)}, rng);
    Tensor c = matmul(a, b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0;
        for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
        EXPECT_NEAR(c.at(i, j), acc, 1e-12);
      }
    EXPECT_LT(max_abs_diff(matmul_tn(transpose(a), b), c), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_nt(a, transpose(b)), c), 1e-12);
  }
}

TEST(Matmul, IdentityChainIsBitExact) {
  Rng rng(11);
  Tensor a = randn({9, 6}, rng);
  Tensor eye({6, 6});
  for (std::size_t i = 0; i < 6; ++i) eye.at(i, i) = 1.0;
  EXPECT_TRUE(bit_equal(matmul(matmul(a, eye), eye), a));
}

TEST(Matmul, ThreadCountDoesNotChangeBits) {
  Rng rng(5);
  Tensor a = randn({150, 97}, rng), b = randn({97, 130}, rng);
  const std::size_t before = thread_count();
  set_thread_count(1);
  Tensor one = matmul(a, b);
  set_thread_count(4);
  Tensor four = matmul(a, b);
  set_thread_count(before);
  EXPECT_TRUE(bit_equal(one, four));
}

TEST(LayerNorm, ConstantRowCollapsesToBeta) {
  Tensor x({1, 3}, {5, 5, 5});
  Tensor y = layer_norm(x, Tensor({3}, 1.0), Tensor({3}, 0.0), 1e-5);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoValueRow) {
  Tensor y = layer_norm(Tensor({1, 2}, {1, 3}), Tensor({2}, 1.0), Tensor({2}, 0.0), 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  Tensor y = layer_norm(Tensor({1, 2}, {-4, 19}), Tensor({2}, 0.0), Tensor({2}, 7.0), 1e-5);
  EXPECT_EQ(y[0], 7.0);
  EXPECT_EQ(y[1], 7.0);
}

TEST(LayerNorm, SingleFeatureRejected) {
  EXPECT_THROW(layer_norm(Tensor({2, 1}), Tensor({1}, 1.0), Tensor({1}), 1e-5), ShapeError);
}

TEST(Activations, GeluValues) {
  EXPECT_EQ(gelu(0.0), 0.0);
  const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  EXPECT_NEAR(gelu(1.0), phi1, 1e-12);
  EXPECT_NEAR(gelu(1.0), 0.841345, 1e-5);
}

TEST(Activations, Relu) {
  Tensor y = relu(Tensor({2}, {-3, 3}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 3.0);
}

TEST(Dropout, EvalAndZeroRateAreIdentity) {
  Rng rng(1);
  Tensor x({4, 4}, 2.5);
  EXPECT_TRUE(bit_equal(dropout(x, 0.7, rng, false), x));
  EXPECT_TRUE(bit_equal(dropout(x, 0.0, rng, true), x));
}

TEST(Dropout, InvertedScalingKeepsMean) {
  Rng rng(2);
  Tensor x({1000, 1000}, 1.0);
  const double mean = sum(dropout(x, 0.5, rng, true)) / 1e6;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
}

TEST(Dropout, RateOutOfRange) {
  Rng rng(1);
  Tensor x({2}, 1.0);
  EXPECT_THROW(dropout(x, 1.0, rng, true), ParameterError);
  EXPECT_THROW(dropout(x, -0.1, rng, true), ParameterError);
}

TEST(Softmax, Examples) {
  Tensor a = softmax_rows(Tensor({1, 2}, {0, 0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  Tensor b = softmax_rows(Tensor({1, 2}, {1000, 0}));
  EXPECT_NEAR(b[0], 1.0, 1e-15);
  EXPECT_TRUE(b.all_finite());
  Tensor c = softmax_rows(Tensor({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(c[i], (i + 1) / 6.0, 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  Parameter p("w", Tensor({3}, 0.25));
  AdamState s(p.value.shape(), AdamConfig{});
  adam_step(p, s);
  for (double v : p.value.data()) EXPECT_EQ(v, 0.25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {1.0, -1.0}) {
    Parameter p("w", Tensor({2}, 1.0));
    p.grad.fill(g);
    AdamState s(p.value.shape(), AdamConfig{0.005});
    adam_step(p, s);
    // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
    for (double v : p.value.data()) EXPECT_NEAR(v, 1.0 - 0.005 * g, 1e-7);
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Parameter p("layer.weight", Tensor({2}, 1.0));
  p.grad[1] = NAN;
  AdamState s(p.value.shape(), AdamConfig{});
  try {
    adam_step(p, s);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

TEST(GradCheck, SumHasUnitGradient) {
  Rng rng(4);
  Tensor x = randn({3, 5}, rng);
  std::vector<Tensor*> in{&x};
  std::vector<Tensor> an{Tensor({3, 5}, 1.0)};
  auto r = grad_check([&] { return sum(x); }, in, an);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, MatmulSum) {
  Rng rng(6);
  Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng);
  Tensor ones({3, 2}, 1.0);
  std::vector<Tensor*> in{&a, &b};
  std::vector<Tensor> an{matmul_nt(ones, b), matmul_tn(a, ones)};
  auto r = grad_check([&] { return sum(matmul(a, b)); }, in, an);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, RestoresInputsExactly) {
  Rng rng(8);
  Tensor x = randn({4, 4}, rng);
  const Tensor copy = x;
  std::vector<Tensor*> in{&x};
  std::vector<Tensor> an{gelu_backward(x, Tensor({4, 4}, 1.0))};
  grad_check([&] { return sum(gelu(x)); }, in, an);
  EXPECT_TRUE(bit_equal(x, copy));
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  Rng a(42, 1), b(42, 1), c(42, 2);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng d(42, 1);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += d.next_u64() == c.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, NormalMoments) {
  Rng rng(9);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
