#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "premixer/adam.hpp"
#include "premixer/ops.hpp"
#include "premixer/patchmask.hpp"
#include "premixer/rng.hpp"

namespace premixer {

struct PIEncoderConfig {
  std::size_t patch_len = 12;  // L
  std::size_t channels = 1;    // C
  std::size_t latent = 96;     // D
  double dropout = 0.0;

  std::size_t patch_dim() const { return patch_len * channels; }
};

/// First- and second-layer patch representations, [T_p × N × D] (or
/// [rows × D] for the row-level API).
struct PatchEmbeddings {
  Tensor z1;
  Tensor z2;
};

/// Patch-independent encoder: two ReLU layers P→D→D and a bias-free linear
/// reconstruction head D→P. The same weights are applied to every patch of
/// every node; rows never interact.
class PIEncoder {
 public:
  struct Trace {
    Tensor x;      // [R × P]
    Tensor pre1;   // enc1(x)
    Tensor mask1;  // dropout multipliers (empty when inactive)
    Tensor z1;     // [R × D]
    Tensor pre2;
    Tensor mask2;
    Tensor z2;     // [R × D]
    Tensor xhat;   // [R × P]
  };

  PIEncoder() = default;
  PIEncoder(const PIEncoderConfig& config, Rng& rng);

  const PIEncoderConfig& config() const { return config_; }

  /// Row-level forward over any number of flattened patches.
  Trace forward_rows(const Tensor& x, bool training, Rng* rng) const;
  /// Accumulates parameter gradients given dL/dz1 (may be empty) and dL/dx̂.
  void backward_rows(const Trace& trace, const Tensor& d_z1, const Tensor& d_xhat);

  PatchEmbeddings embed(const PatchSet& view, bool training = false, Rng* rng = nullptr) const;
  /// x̂ = W z for every row of z (last axis D); output keeps the leading axes.
  Tensor reconstruct(const Tensor& z2) const;

  std::vector<Parameter*> parameters();

  Linear enc1;
  Linear enc2;
  Linear head;

 private:
  PIEncoderConfig config_;
};

/// Two-term masked reconstruction error: patches visible in view 1 are
/// scored against x̂ from view 1, patches visible in view 2 against x̂ from
/// view 2. Masks must be binary and sum to one everywhere. Optional outputs
/// receive dL/dx̂ for each view.
double recon_loss(const PatchSet& x, const Tensor& xhat_v1, const Tensor& xhat_v2, const Tensor& mask_v1,
                  const Tensor& mask_v2, Tensor* d_v1 = nullptr, Tensor* d_v2 = nullptr);
double recon_loss(const PatchSet& x, const Tensor& xhat_v1, const Tensor& xhat_v2, const MaskPair& mask,
                  Tensor* d_v1 = nullptr, Tensor* d_v2 = nullptr);

/// p((i, s), n) for the 2T_p stacked first-layer embeddings of each node:
/// [N × 2T_p × 2T_p], rows are anchors, the diagonal is zero.
Tensor contrastive_probabilities(const Tensor& z1_v1, const Tensor& z1_v2);

/// Mean over anchors i ∈ [0, 2T_p) and nodes of -log p((i, (i+T_p) mod 2T_p), n)
/// with dot-product similarity. Optional outputs receive dL/dz1 per view.
double contrastive_loss(const Tensor& z1_v1, const Tensor& z1_v2, Tensor* d_v1 = nullptr, Tensor* d_v2 = nullptr);

struct PretrainLosses {
  double recon = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

struct PretrainOptions {
  double mask_ratio = 0.5;
  bool use_contrastive = true;
};

/// One optimisation step on a batch of normalised long histories
/// ([T_long × N × C] each): patchify, draw complementary masks, encode both
/// views, backpropagate recon + contrastive (batch means) and apply Adam.
/// Returns the losses measured before the update.
PretrainLosses pretrain_step(const std::vector<Tensor>& batch, PIEncoder& model, Adam& optim, Rng& rng,
                             const PretrainOptions& options = {});

/// Zeroes the model gradients, then accumulates the gradient of the batch
/// objective without updating anything.
PretrainLosses pretrain_gradients(const std::vector<Tensor>& batch, PIEncoder& model, Rng& rng,
                                  const PretrainOptions& options = {});

/// Same objective without any parameter update, masks drawn from `rng`.
PretrainLosses pretrain_losses(const std::vector<Tensor>& batch, const PIEncoder& model, Rng& rng,
                               const PretrainOptions& options = {});

/// Per-element mean squared reconstruction error of every patch from the
/// view in which it is visible (evaluation mode).
double reconstruction_mse(const std::vector<Tensor>& windows, const PIEncoder& model);

struct PIEncoderCheckpointInfo {
  std::uint64_t seed = 0;
  long step = 0;
  long epoch = 0;
  bool use_contrastive = true;
};

void save_piencoder(const std::filesystem::path& dir, PIEncoder& model, const PIEncoderCheckpointInfo& info,
                    const Adam* optim = nullptr);

/// Loads a PIEncoder; when `expect` is given its L, C and D must match the
/// stored manifest. Restores Adam moments into `optim` when requested.
PIEncoder load_piencoder(const std::filesystem::path& dir, const PIEncoderConfig* expect = nullptr,
                         PIEncoderCheckpointInfo* info = nullptr, std::vector<AdamState>* adam = nullptr);

}  // namespace premixer
