#pragma once

#include "premixer/ops.hpp"
#include "premixer/tensor.hpp"

namespace premixer {

/// Spatio-temporal positional encoding, [T × N × d_pe]. Dims [0, d_pe/2)
/// hold sin/cos pairs of t at frequencies 10000^(-4i/d_pe); dims
/// [d_pe/2, d_pe) hold the same construction over the node index n.
Tensor build_stpe(std::size_t steps, std::size_t nodes, std::size_t d_pe);

/// Standard sinusoidal encoding of t only, [T × N × d_pe], frequencies
/// 10000^(-2i/d_pe). Used when the spatial half is switched off.
Tensor build_temporal_pe(std::size_t steps, std::size_t nodes, std::size_t d_pe);

/// Spatial half of an STPE table at t = 0, [N × d_pe/2].
Tensor stpe_spatial_half(const Tensor& stpe);

/// Learnable per-node embedding, uniform in ±1/sqrt(d_emb).
class NodeEmbedding {
 public:
  NodeEmbedding() = default;
  NodeEmbedding(std::size_t nodes, std::size_t d_emb, Rng& rng);
  std::size_t nodes() const { return table.value.dim(0); }
  std::size_t width() const { return table.value.dim(1); }
  void collect(std::vector<Parameter*>& out) { out.push_back(&table); }

  Parameter table;  // E, [N × d_emb]
};

/// c = GELU([spatial ‖ E] · W_f + b_f). `spatial` may be empty, in which case
/// only E is fused.
class ContextFusion {
 public:
  struct Cache {
    Tensor input;  // [N × (d_s + d_emb)]
    Tensor pre;    // [N × d_ctx]
  };

  ContextFusion() = default;
  ContextFusion(std::size_t spatial_width, std::size_t d_emb, std::size_t d_ctx, Rng& rng);

  Tensor forward(const Tensor& spatial, const Tensor& embedding, Cache* cache = nullptr) const;
  /// Accumulates fusion gradients and returns dL/dE.
  Tensor backward(const Cache& cache, const Tensor& d_ctx);
  void collect(std::vector<Parameter*>& out) { proj.collect(out); }

  std::size_t spatial_width() const { return spatial_width_; }

  Linear proj;

 private:
  std::size_t spatial_width_ = 0;
};

}  // namespace premixer
