#include "premixer/patchmask.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "premixer/error.hpp"

namespace premixer {

PatchSet patchify(const Tensor& x_long, std::size_t patch_len) {
  require_rank(x_long, 3, "patchify");
  const std::size_t t_long = x_long.dim(0), nodes = x_long.dim(1), chans = x_long.dim(2);
  if (patch_len == 0 || t_long % patch_len != 0)
    throw ShapeError("patchify: patch length " + std::to_string(patch_len) + " does not divide T_long = " +
                     std::to_string(t_long));
  const std::size_t tp = t_long / patch_len, p = patch_len * chans;
  PatchSet out{Tensor({tp, nodes, p}), patch_len, chans};
  for (std::size_t i = 0; i < tp; ++i)
    for (std::size_t n = 0; n < nodes; ++n)
      for (std::size_t l = 0; l < patch_len; ++l)
        for (std::size_t c = 0; c < chans; ++c) out.patches.at(i, n, l * chans + c) = x_long.at(i * patch_len + l, n, c);
  return out;
}

Tensor unpatchify(const PatchSet& p) {
  const std::size_t tp = p.count(), nodes = p.nodes(), len = p.patch_len, chans = p.channels;
  if (len * chans != p.patch_dim()) throw ShapeError("unpatchify: patch dim does not equal L·C");
  Tensor x({tp * len, nodes, chans});
  for (std::size_t i = 0; i < tp; ++i)
    for (std::size_t n = 0; n < nodes; ++n)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t c = 0; c < chans; ++c) x.at(i * len + l, n, c) = p.patches.at(i, n, l * chans + c);
  return x;
}

Tensor MaskPair::complement() const {
  Tensor c = m;
  for (double& v : c.data()) v = 1.0 - v;
  return c;
}

MaskPair complementary_masks(std::size_t num_patches, std::size_t nodes, double ratio, Rng& rng) {
  if (num_patches < 2) throw ParameterError("complementary_masks: need at least 2 patches");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ParameterError("complementary_masks: ratio must be in (0, 1)");
  const auto visible = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_patches)));
  MaskPair pair{Tensor({num_patches, nodes}), ratio};
  std::vector<std::size_t> perm(num_patches);
  for (std::size_t n = 0; n < nodes; ++n) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    for (std::size_t k = 0; k < visible; ++k) pair.m.at(perm[k], n) = 1.0;
  }
  return pair;
}

PatchSet apply_mask(const PatchSet& p, const Tensor& mask) {
  if (mask.rank() != 2 || mask.dim(0) != p.count() || mask.dim(1) != p.nodes())
    throw ShapeError("apply_mask: mask " + shape_str(mask.shape()) + " does not match patches " +
                     shape_str(p.patches.shape()));
  PatchSet out{Tensor(p.patches.shape()), p.patch_len, p.channels};
  const std::size_t dim = p.patch_dim();
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k] == 0.0) continue;
    const double* src = p.patches.ptr() + k * dim;
    std::copy(src, src + dim, out.patches.ptr() + k * dim);
  }
  return out;
}

}  // namespace premixer
