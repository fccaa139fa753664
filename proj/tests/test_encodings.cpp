#include <gtest/gtest.h>

#include <cmath>

#include "premixer/encodings.hpp"
#include "premixer/error.hpp"
#include "premixer/gradcheck.hpp"

using namespace premixer;

namespace {

// L∞ distance between two slices of width `w` starting at `off` within the
// d_pe vectors of (t1, n1) and (t2, n2).
double gap(const Tensor& u, std::size_t a, std::size_t b, std::size_t off, std::size_t w) {
  const std::size_t d = u.dim(2);
  double g = 0;
  for (std::size_t k = off; k < off + w; ++k) g = std::max(g, std::abs(u[a * d + k] - u[b * d + k]));
  return g;
}

}  // namespace

TEST(Stpe, OriginHasZeroSinesUnitCosines) {
  Tensor u = build_stpe(4, 3, 16);
  ASSERT_EQ(u.shape(), (Shape{4, 3, 16}));
  for (std::size_t k = 0; k < 16; k += 2) {
    EXPECT_EQ(u.at(0, 0, k), 0.0);
    EXPECT_EQ(u.at(0, 0, k + 1), 1.0);
  }
}

TEST(Stpe, FirstFrequencyIsUnity) {
  Tensor u = build_stpe(4, 3, 16);
  EXPECT_NEAR(u.at(1, 0, 0), 0.841471, 1e-6);
  EXPECT_DOUBLE_EQ(u.at(1, 0, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(u.at(0, 2, 8), std::sin(2.0));
}

TEST(Stpe, FrequencyLadder) {
  const std::size_t d = 16;
  Tensor u = build_stpe(50, 1, d);
  for (std::size_t i = 0; i < d / 4; ++i) {
    const double w = std::pow(10000.0, -4.0 * static_cast<double>(i) / static_cast<double>(d));
    EXPECT_NEAR(u.at(37, 0, 2 * i), std::sin(37.0 * w), 1e-12);
    EXPECT_NEAR(u.at(37, 0, 2 * i + 1), std::cos(37.0 * w), 1e-12);
  }
}

TEST(Stpe, PairIdentity) {
  Tensor u = build_stpe(96, 64, 16);
  for (std::size_t r = 0; r < 96 * 64; ++r)
    for (std::size_t k = 0; k < 16; k += 2) {
      const double s = u[r * 16 + k], c = u[r * 16 + k + 1];
      EXPECT_NEAR(s * s + c * c, 1.0, 1e-9);
    }
}

TEST(Stpe, HalvesSeparate) {
  Tensor u = build_stpe(20, 7, 16);
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t n = 0; n < 7; ++n) {
      EXPECT_EQ(gap(u, t * 7 + n, t * 7, 0, 8), 0.0);
      EXPECT_EQ(gap(u, t * 7 + n, n, 8, 8), 0.0);
    }
}

TEST(Stpe, PairwiseDistinctBruteForce) {
  const std::size_t T = 24, N = 40;
  Tensor u = build_stpe(T, N, 16);
  double best = INFINITY;
  for (std::size_t a = 0; a < T * N; ++a)
    for (std::size_t b = a + 1; b < T * N; ++b) best = std::min(best, gap(u, a, b, 0, 16));
  EXPECT_GT(best, 1e-6);
}

TEST(Stpe, PureFunction) { EXPECT_TRUE(bit_equal(build_stpe(12, 9, 16), build_stpe(12, 9, 16))); }

TEST(Stpe, WidthMustBeMultipleOfFour) {
  EXPECT_THROW(build_stpe(4, 4, 6), ParameterError);
  EXPECT_THROW(build_stpe(4, 4, 0), ParameterError);
}

TEST(Stpe, SpatialHalfExtraction) {
  Tensor u = build_stpe(5, 6, 16);
  Tensor s = stpe_spatial_half(u);
  ASSERT_EQ(s.shape(), (Shape{6, 8}));
  for (std::size_t n = 0; n < 6; ++n)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(s.at(n, k), u.at(3, n, 8 + k));
}

TEST(TemporalPe, IgnoresNode) {
  Tensor u = build_temporal_pe(12, 5, 16);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t n = 1; n < 5; ++n) EXPECT_EQ(gap(u, t * 5 + n, t * 5, 0, 16), 0.0);
  EXPECT_DOUBLE_EQ(u.at(1, 0, 0), std::sin(1.0));
  EXPECT_NEAR(u.at(3, 0, 2), std::sin(3.0 * std::pow(10000.0, -2.0 / 16.0)), 1e-12);
}

TEST(NodeEmbedding, UniformRange) {
  Rng rng(1);
  NodeEmbedding e(10, 16, rng);
  ASSERT_EQ(e.table.value.shape(), (Shape{10, 16}));
  for (double v : e.table.value.data()) EXPECT_LE(std::abs(v), 0.25);
}

TEST(Fusion, EqualEmbeddingsDistinctPositions) {
  Rng rng(2);
  Tensor spatial = stpe_spatial_half(build_stpe(1, 4, 16));
  Tensor e({4, 6}, 0.3);
  ContextFusion f(8, 6, 5, rng);
  Tensor c = f.forward(spatial, e);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) {
      double g = 0;
      for (std::size_t k = 0; k < 5; ++k) g = std::max(g, std::abs(c.at(a, k) - c.at(b, k)));
      EXPECT_GT(g, 0.0);
    }
}

TEST(Fusion, ZeroWeightsGiveActivatedBias) {
  Rng rng(3);
  ContextFusion f(8, 4, 3, rng);
  f.proj.weight.value.fill(0.0);
  f.proj.bias.value = Tensor({3}, {0.5, -1.0, 2.0});
  Rng r2(4);
  NodeEmbedding e(5, 4, r2);
  Tensor c = f.forward(stpe_spatial_half(build_stpe(1, 5, 16)), e.table.value);
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(c.at(n, k), gelu(f.proj.bias.value[k]));
}

TEST(Fusion, GradientReachesEmbedding) {
  Rng rng(5);
  NodeEmbedding e(4, 3, rng);
  ContextFusion f(8, 3, 6, rng);
  Tensor spatial = stpe_spatial_half(build_stpe(1, 4, 16));
  ContextFusion::Cache cache;
  f.forward(spatial, e.table.value, &cache);
  Tensor de = f.backward(cache, Tensor({4, 6}, 1.0));
  std::vector<Tensor*> in{&e.table.value};
  std::vector<Tensor> an{de};
  auto r = grad_check([&] { return sum(f.forward(spatial, e.table.value)); }, in, an);
  EXPECT_LT(r.max_rel_error, 1e-5);
}
