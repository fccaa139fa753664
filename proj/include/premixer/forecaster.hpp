#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "premixer/datapipe.hpp"
#include "premixer/encodings.hpp"
#include "premixer/ops.hpp"
#include "premixer/piencoder.hpp"

namespace premixer {

enum class SpatialMode { structured, basic };
enum class Aggregation { mean, sum };

struct Ablations {
  bool no_pretrain = false;
  bool no_cl = false;  // pre-training only
  bool no_context = false;
  bool no_stpe = false;
};

struct ForecasterConfig {
  std::size_t steps = 12;    // T
  std::size_t horizon = 12;
  std::size_t channels = 1;  // C
  std::size_t nodes = 0;     // N
  std::size_t patch_len = 12;
  std::size_t latent = 96;   // D
  std::size_t d_pe = 16;
  std::size_t d_model = 32;
  std::size_t d_emb = 32;
  std::size_t d_ctx = 64;
  std::size_t ff_mult = 2;
  std::size_t spatial_layers = 2;
  SpatialMode mode = SpatialMode::structured;
  Aggregation aggregation = Aggregation::mean;
  double dropout = 0.1;
  Ablations ablations;

  std::size_t hidden() const { return d_model * steps; }  // H
  void validate() const;
};

nlohmann::json to_json(const Ablations& a);
Ablations ablations_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ForecasterConfig& c);
ForecasterConfig forecaster_config_from_json(const nlohmann::json& j);
std::string to_string(SpatialMode m);
std::string to_string(Aggregation a);
SpatialMode parse_spatial_mode(const std::string& s);
Aggregation parse_aggregation(const std::string& s);

// ---------------------------------------------------------------------------
// Building blocks. Activations are [R × H] with R = B·N, rows ordered
// (sample, node).

class TemporalMixer {
 public:
  struct Cache {
    Tensor h;
    LayerNormCache ln;
    Tensor normed;  // LN(h) after the affine
    Tensor pre;   // LN(h)·W1 + b1
    Tensor act;   // GELU(pre) after dropout
    Tensor mask;
  };

  TemporalMixer() = default;
  TemporalMixer(std::size_t width, std::size_t ff_width, Rng& rng);

  Tensor forward(const Tensor& h, double p, bool training, Rng* rng, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  void collect(std::vector<Parameter*>& out);

  LayerNorm norm;
  Linear fc1;
  Linear fc2;
};

/// Gated pairwise message passing: g_ij = sigmoid(ψ([c_i ‖ c_j])),
/// m_i = κ Σ_j g_ij W_m [h_i ‖ h_j], h_i' = GELU(Θ h_i + m_i).
class StructuredSpatialLayer {
 public:
  struct Cache {
    Tensor h;      // [R × H]
    Tensor ctx;    // [N × d_ctx] (empty when ungated)
    Tensor gates;  // [N × N]
    Tensor rowsum; // s_i = Σ_j g_ij
    Tensor ab;     // [R × 2H]: h·W_top | h·W_bot
    Tensor pre;
    Tensor mask;
  };

  StructuredSpatialLayer() = default;
  StructuredSpatialLayer(const std::string& name, std::size_t width, std::size_t d_ctx, bool gated, Rng& rng);

  bool gated() const { return gated_; }

  /// Gate matrix for a context table (all ones when ungated).
  Tensor gates(const Tensor& ctx, std::size_t nodes) const;

  Tensor forward(const Tensor& h, std::size_t nodes, const Tensor& ctx, Aggregation agg, double p, bool training,
                 Rng* rng, Cache* cache = nullptr) const;
  /// Returns dL/dh; adds dL/dctx into `d_ctx` when gated and non-null.
  Tensor backward(const Cache& cache, std::size_t nodes, Aggregation agg, const Tensor& dy, Tensor* d_ctx);
  void collect(std::vector<Parameter*>& out);

  Linear theta;  // H→H, bias-free
  Linear msg;    // 2H→H, bias-free
  Linear gate;   // 2·d_ctx→1

 private:
  bool gated_ = false;
};

/// h' = GELU(W_channel · H + b), mixing along the node axis. W is N×N.
class BasicSpatialLayer {
 public:
  struct Cache {
    Tensor h;
    Tensor pre;
    Tensor mask;
  };

  BasicSpatialLayer() = default;
  BasicSpatialLayer(const std::string& name, std::size_t nodes, Rng& rng);

  Tensor forward(const Tensor& h, std::size_t nodes, double p, bool training, Rng* rng, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, std::size_t nodes, const Tensor& dy);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;  // [N × N]
  Parameter bias;    // [N]
};

// ---------------------------------------------------------------------------

class PreMixer {
 public:
  struct Trace {
    std::size_t batch = 0;
    Tensor embed_in;   // [B·N·T × (C + d_pe)]
    Tensor embed_pre;
    Tensor z2;         // [B·N × D] (empty without pre-training)
    Tensor ctx;        // [N × d_ctx] (empty without context)
    ContextFusion::Cache fusion;
    TemporalMixer::Cache temporal;
    std::vector<StructuredSpatialLayer::Cache> structured;
    std::vector<BasicSpatialLayer::Cache> basic;
    Tensor last;       // input of the output head
  };

  PreMixer() = default;
  /// `encoder` is required unless ablations.no_pretrain is set; it is kept
  /// frozen.
  PreMixer(const ForecasterConfig& config, Rng& rng, std::optional<PIEncoder> encoder = std::nullopt);

  const ForecasterConfig& config() const { return config_; }
  const PIEncoder* encoder() const { return encoder_ ? &*encoder_ : nullptr; }
  PIEncoder* encoder() { return encoder_ ? &*encoder_ : nullptr; }
  const Tensor& positional() const { return pos_; }
  bool has_context() const { return !config_.ablations.no_context && config_.mode == SpatialMode::structured; }
  bool uses_pretrain() const { return !config_.ablations.no_pretrain; }

  /// x: [B × T × N × C] normalised; returns ŷ [B × horizon × N × C].
  Tensor forward(const Tensor& x, bool training, Rng* rng, Trace* trace = nullptr) const;
  /// Accumulates gradients of every trainable parameter given dL/dŷ.
  void backward(const Trace& trace, const Tensor& d_yhat);

  // Stage functions, single sample unless noted.
  Tensor input_embed(const Tensor& x) const;       // [T×N×C] -> [N × H]
  Tensor encode_context(const Tensor& x) const;    // [T×N×C] -> [N × D]
  Tensor fuse_pretrain(const Tensor& z2, const Tensor& hc) const;
  Tensor node_context() const;                     // [N × d_ctx]

  /// Parameters updated by the optimiser (frozen encoder and, without
  /// pre-training, the zeroed projector are excluded).
  std::vector<Parameter*> trainable_parameters();
  /// Every forecaster parameter, in checkpoint order (encoder excluded).
  std::vector<Parameter*> parameters();

  std::size_t trainable_count();
  /// Trainable plus frozen encoder parameters.
  std::size_t total_count();

  /// Relabels nodes so that new node k is old node perm[k]: every
  /// node-indexed table (positional encoding, node embedding, channel-mixing
  /// weights) is reordered accordingly.
  void permute_nodes(std::span<const std::size_t> perm);

  Linear embed;
  Linear projector;
  TemporalMixer temporal;
  std::vector<StructuredSpatialLayer> structured;
  std::vector<BasicSpatialLayer> basic;
  Linear head;
  NodeEmbedding node_embedding;
  ContextFusion fusion;

 private:
  Tensor forward_stage_embed(const Tensor& x, Tensor* in_out, Tensor* pre_out) const;
  Tensor forward_stage_encode(const Tensor& x) const;

  ForecasterConfig config_;
  std::optional<PIEncoder> encoder_;
  Tensor pos_;      // [T × N × d_pe]
  Tensor spatial_;  // [N × d_pe/2] (empty without STPE)
};

/// Mean absolute error over all elements; `grad` receives dL/dŷ.
double regression_loss(const Tensor& yhat, const Tensor& y, Tensor* grad = nullptr);

/// Stacks window inputs and targets into [B × T × N × C] tensors.
struct Batch {
  Tensor x;
  Tensor y;
};
Batch assemble_batch(const WindowSampler& sampler, std::span<const std::size_t> indices);

struct ForecasterCheckpointInfo {
  Normalizer normalizer;
  nlohmann::json extra;
};

void save_forecaster(const std::filesystem::path& dir, PreMixer& model, const Normalizer& normalizer,
                     const nlohmann::json& extra = {});
PreMixer load_forecaster(const std::filesystem::path& dir, ForecasterCheckpointInfo* info = nullptr);

}  // namespace premixer
