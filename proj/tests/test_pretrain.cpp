#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "premixer/datapipe.hpp"
#include "premixer/error.hpp"
#include "premixer/piencoder.hpp"

using namespace premixer;
namespace fs = std::filesystem;

namespace {

Tensor randn(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// -mean log p(partner) evaluated straight from the definition, one anchor at a
// time, with no shared code path.
double brute_contrastive(const Tensor& v1, const Tensor& v2) {
  const std::size_t tp = v1.dim(0), nodes = v1.dim(1), d = v1.dim(2), m = 2 * tp;
  auto emb = [&](std::size_t k, std::size_t n, std::size_t j) {
    return k < tp ? v1.at(k, n, j) : v2.at(k - tp, n, j);
  };
  auto dot = [&](std::size_t a, std::size_t b, std::size_t n) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += emb(a, n, j) * emb(b, n, j);
    return s;
  };
  double total = 0;
  for (std::size_t n = 0; n < nodes; ++n)
    for (std::size_t i = 0; i < m; ++i) {
      double denom = 0;
      for (std::size_t s = 0; s < m; ++s)
        if (s != i) denom += std::exp(dot(i, s, n));
      total += -std::log(std::exp(dot(i, (i + tp) % m, n)) / denom);
    }
  return total / static_cast<double>(m * nodes);
}

std::vector<Tensor> synthetic_windows(std::size_t count, std::size_t t_long) {
  SyntheticSpec spec{3, 14, 5};
  RawSeries raw = generate_synthetic(spec);
  Tensor norm = Normalizer::fit(raw.values).normalize(raw.values);
  WindowSampler s(norm, 12, 0, t_long, 24);
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < count && k < s.size(); ++k) out.push_back(s.at(k).x_long);
  return out;
}

}  // namespace

TEST(Encoder, ZeroPatchDependsOnlyOnBias) {
  Rng rng(1);
  PIEncoder enc(PIEncoderConfig{12, 1, 8, 0.0}, rng);
  PatchSet zeros = patchify(Tensor({36, 2, 1}), 12);
  PatchEmbeddings e = enc.embed(zeros);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(e.z1[r * 8 + j], std::max(0.0, enc.enc1.bias.value[j]));
}

TEST(Encoder, PatchAndNodeIndependence) {
  Rng rng(2);
  PIEncoder enc(PIEncoderConfig{12, 1, 16, 0.0}, rng);
  Tensor x = randn({72, 6, 1}, rng);
  PatchEmbeddings base = enc.embed(patchify(x, 12));
  Tensor y = x;
  for (std::size_t t = 36; t < 48; ++t) y.at(t, 2, 0) += 1.5;  // patch 3 of node 2
  PatchEmbeddings pert = enc.embed(patchify(y, 12));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t n = 0; n < 6; ++n) {
      bool same = true;
      for (std::size_t j = 0; j < 16; ++j) same &= base.z2.at(i, n, j) == pert.z2.at(i, n, j);
      if (i == 3 && n == 2) continue;
      EXPECT_TRUE(same) << "patch " << i << " node " << n;
    }
}

TEST(Encoder, ReconstructShapeAndZero) {
  Rng rng(3);
  PIEncoder enc(PIEncoderConfig{12, 1, 96, 0.0}, rng);
  Tensor z({56, 4, 96});
  Tensor xhat = enc.reconstruct(z);
  EXPECT_EQ(xhat.shape(), (Shape{56, 4, 12}));
  for (double v : xhat.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, IdentityHead) {
  Rng rng(4);
  PIEncoder enc(PIEncoderConfig{4, 1, 4, 0.0}, rng);
  enc.head.weight.value.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) enc.head.weight.value.at(i, i) = 1.0;
  Tensor z = randn({3, 2, 4}, rng);
  EXPECT_TRUE(bit_equal(enc.reconstruct(z), z));
}

TEST(Encoder, WrongPatchDim) {
  Rng rng(5);
  PIEncoder enc(PIEncoderConfig{12, 1, 8, 0.0}, rng);
  EXPECT_THROW(enc.embed(patchify(Tensor({24, 2, 1}), 6)), ShapeError);
}

TEST(Recon, PerfectReconstructionIsZero) {
  Rng rng(6);
  PatchSet x = patchify(randn({48, 3, 1}, rng), 12);
  MaskPair m = complementary_masks(4, 3, 0.5, rng);
  EXPECT_EQ(recon_loss(x, x.patches, x.patches, m), 0.0);
}

TEST(Recon, SinglePatchArithmetic) {
  PatchSet x;
  x.patches = Tensor({1, 1, 2}, {1, 0});
  x.patch_len = 2;
  x.channels = 1;
  Tensor zero({1, 1, 2});
  Tensor junk({1, 1, 2}, {5, 5});
  EXPECT_EQ(recon_loss(x, zero, junk, Tensor({1, 1}, 1.0), Tensor({1, 1}, 0.0)), 1.0);
}

TEST(Recon, CollapsesToSelectedReconstruction) {
  Rng rng(7);
  for (int draw = 0; draw < 100; ++draw) {
    PatchSet x = patchify(randn({60, 3, 1}, rng), 12);
    Tensor a = randn(x.patches.shape(), rng), b = randn(x.patches.shape(), rng);
    MaskPair m = complementary_masks(5, 3, 0.5, rng);
    double expect = 0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t k = 0; k < 12; ++k) {
          const double sel = m.m.at(i, n) == 1.0 ? a.at(i, n, k) : b.at(i, n, k);
          expect += (x.patches.at(i, n, k) - sel) * (x.patches.at(i, n, k) - sel);
        }
    const double got = recon_loss(x, a, b, m);
    EXPECT_LT(std::abs(got - expect) / expect, 1e-9);
  }
}

TEST(Recon, NonComplementaryMasksRejected) {
  PatchSet x = patchify(Tensor({24, 1, 1}), 12);
  Tensor ones({2, 1}, 1.0);
  EXPECT_THROW(recon_loss(x, x.patches, x.patches, ones, ones), ParameterError);
}

TEST(Contrastive, SinglePatchIsZero) {
  Rng rng(8);
  Tensor a = randn({1, 3, 5}, rng), b = randn({1, 3, 5}, rng);
  EXPECT_EQ(contrastive_loss(a, b), 0.0);
}

TEST(Contrastive, HandBuiltTwoPatchCase) {
  // Partner pairs share a unit vector, distractors are orthogonal.
  Tensor v1({2, 1, 2}, {1, 0, 0, 1});
  Tensor v2 = v1;
  const double e = std::exp(1.0);
  EXPECT_NEAR(contrastive_loss(v1, v2), -std::log(e / (e + 2.0)), 1e-12);
  EXPECT_NEAR(contrastive_loss(v1, v2), brute_contrastive(v1, v2), 1e-9);
}

TEST(Contrastive, MatchesEnumerationOnRandomInput) {
  Rng rng(9);
  for (int draw = 0; draw < 20; ++draw) {
    Tensor a = randn({2, 3, 4}, rng, 0.7), b = randn({2, 3, 4}, rng, 0.7);
    EXPECT_NEAR(contrastive_loss(a, b), brute_contrastive(a, b), 1e-9);
  }
  Tensor a = randn({6, 2, 5}, rng, 0.5), b = randn({6, 2, 5}, rng, 0.5);
  EXPECT_NEAR(contrastive_loss(a, b), brute_contrastive(a, b), 1e-9);
}

TEST(Contrastive, ProbabilitiesNormalise) {
  Rng rng(10);
  Tensor a = randn({5, 3, 4}, rng), b = randn({5, 3, 4}, rng);
  Tensor p = contrastive_probabilities(a, b);
  ASSERT_EQ(p.shape(), (Shape{3, 10, 10}));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 10; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < 10; ++k) s += p[(n * 10 + i) * 10 + k];
      EXPECT_NEAR(s, 1.0, 1e-9);
      EXPECT_EQ(p[(n * 10 + i) * 10 + i], 0.0);
    }
}

TEST(Pretrain, TotalIsSumOfTerms) {
  Rng rng(11);
  PIEncoder enc(PIEncoderConfig{12, 1, 8, 0.0}, rng);
  auto windows = synthetic_windows(2, 96);
  Rng mask(12);
  PretrainLosses l = pretrain_losses(windows, enc, mask);
  EXPECT_NEAR(l.total, l.recon + l.contrastive, 1e-9);
  EXPECT_GT(l.contrastive, 0.0);
  Rng mask2(12);
  PretrainLosses off = pretrain_losses(windows, enc, mask2, PretrainOptions{0.5, false});
  EXPECT_EQ(off.contrastive, 0.0);
  EXPECT_EQ(off.total, off.recon);
}

TEST(Pretrain, LossFallsOverFiftySteps) {
  auto windows = synthetic_windows(16, 96);
  Rng init(13);
  PIEncoder enc(PIEncoderConfig{12, 1, 16, 0.0}, init);
  Adam optim(enc.parameters(), AdamConfig{1e-3});
  Rng rng(14);
  std::vector<double> totals;
  for (int step = 0; step < 50; ++step) {
    std::vector<Tensor> batch(windows.begin() + (step % 4) * 4, windows.begin() + (step % 4) * 4 + 4);
    totals.push_back(pretrain_step(batch, enc, optim, rng).total);
  }
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += totals[i];
    tail += totals[45 + i];
  }
  EXPECT_LT(tail, head);
  EXPECT_EQ(optim.step_count(), 50);
}

TEST(Pretrain, SameSeedSameLosses) {
  auto windows = synthetic_windows(4, 96);
  auto run = [&] {
    Rng init(15);
    PIEncoder enc(PIEncoderConfig{12, 1, 8, 0.0}, init);
    Adam optim(enc.parameters(), AdamConfig{1e-3});
    Rng rng(16);
    std::vector<double> out;
    for (int s = 0; s < 5; ++s) out.push_back(pretrain_step(windows, enc, optim, rng).total);
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripPreservesForward) {
  Rng rng(17);
  PIEncoder enc(PIEncoderConfig{12, 1, 8, 0.0}, rng);
  const fs::path dir = fs::temp_directory_path() / "premixer_test_pienc";
  fs::remove_all(dir);
  save_piencoder(dir, enc, PIEncoderCheckpointInfo{17, 3, 1, true});
  PIEncoderCheckpointInfo info;
  PIEncoder back = load_piencoder(dir, nullptr, &info);
  EXPECT_EQ(info.step, 3);
  EXPECT_EQ(info.seed, 17u);
  PatchSet x = patchify(randn({24, 3, 1}, rng), 12);
  Tensor a = enc.embed(x).z2, b = back.embed(x).z2;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-6 * std::max(1.0, std::abs(a[i])));
}

TEST(Checkpoint, PatchDimMismatchRejected) {
  Rng rng(18);
  PIEncoder enc(PIEncoderConfig{12, 1, 8, 0.0}, rng);
  const fs::path dir = fs::temp_directory_path() / "premixer_test_pienc_p";
  fs::remove_all(dir);
  save_piencoder(dir, enc, PIEncoderCheckpointInfo{});
  PIEncoderConfig want{24, 1, 8, 0.0};
  EXPECT_THROW(load_piencoder(dir, &want), CheckpointError);
}
