#pragma once

#include "premixer/rng.hpp"
#include "premixer/tensor.hpp"

namespace premixer {

/// Non-overlapping patches of a long history: patches[i, n, :] is the
/// flattened slice x_long[i·L:(i+1)·L, n, :] (time-major, then channel).
struct PatchSet {
  Tensor patches;  // [T_p × N × P], P = L·C
  std::size_t patch_len = 0;
  std::size_t channels = 0;

  std::size_t count() const { return patches.dim(0); }
  std::size_t nodes() const { return patches.dim(1); }
  std::size_t patch_dim() const { return patches.dim(2); }
};

PatchSet patchify(const Tensor& x_long, std::size_t patch_len);
Tensor unpatchify(const PatchSet& p);

/// View-1 visibility mask m over [T_p × N]; view 2 sees exactly the
/// complement 1 - m.
struct MaskPair {
  Tensor m;
  double mask_ratio = 0.5;

  Tensor complement() const;
};

/// For every node a seeded permutation of the patch indices marks exactly
/// round(ratio·T_p) patches visible in view 1.
MaskPair complementary_masks(std::size_t num_patches, std::size_t nodes, double ratio, Rng& rng);

/// Zeroes patch (i, n) wherever mask(i, n) == 0; visible patches are copied.
PatchSet apply_mask(const PatchSet& p, const Tensor& mask);

}  // namespace premixer
