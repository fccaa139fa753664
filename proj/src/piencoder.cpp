#include "premixer/piencoder.hpp"

#include <algorithm>
#include <cmath>

#include "premixer/checkpoint.hpp"
#include "premixer/error.hpp"

namespace premixer {
namespace {

Tensor copy_rows(const Tensor& m, std::size_t begin, std::size_t count, Shape shape) {
  const std::size_t c = m.cols();
  std::vector<double> v(m.ptr() + begin * c, m.ptr() + (begin + count) * c);
  return Tensor(std::move(shape), std::move(v));
}

void put_rows(Tensor& dst, std::size_t begin, const Tensor& src) {
  std::copy(src.ptr(), src.ptr() + src.size(), dst.ptr() + begin * dst.cols());
}

// Gathers node n's stacked embeddings [2T_p × D] (view 1 then view 2).
Tensor stack_node(const Tensor& z1_v1, const Tensor& z1_v2, std::size_t n) {
  const std::size_t tp = z1_v1.dim(0), d = z1_v1.dim(2);
  Tensor z({2 * tp, d});
  for (std::size_t i = 0; i < tp; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      z.at(i, k) = z1_v1.at(i, n, k);
      z.at(tp + i, k) = z1_v2.at(i, n, k);
    }
  return z;
}

void check_views(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "contrastive_loss");
  require_same_shape(a, b, "contrastive_loss");
}

// Softmax over s ≠ i of the similarity row; diagonal left at zero.
Tensor masked_row_softmax(const Tensor& sim) {
  const std::size_t m = sim.dim(0);
  Tensor p({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t s = 0; s < m; ++s)
      if (s != i) mx = std::max(mx, sim.at(i, s));
    double z = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
      if (s == i) continue;
      p.at(i, s) = std::exp(sim.at(i, s) - mx);
      z += p.at(i, s);
    }
    for (std::size_t s = 0; s < m; ++s) p.at(i, s) /= z;
  }
  return p;
}

}  // namespace

PIEncoder::PIEncoder(const PIEncoderConfig& config, Rng& rng) : config_(config) {
  if (config.patch_len == 0 || config.channels == 0 || config.latent == 0)
    throw ConfigError("piencoder: L, C and D must be positive");
  const std::size_t p = config.patch_dim(), d = config.latent;
  enc1 = Linear("piencoder.enc1", p, d, true, rng);
  enc2 = Linear("piencoder.enc2", d, d, true, rng);
  head = Linear("piencoder.recon_head", d, p, false, rng);
}

PIEncoder::Trace PIEncoder::forward_rows(const Tensor& x, bool training, Rng* rng) const {
  if (x.cols() != config_.patch_dim())
    throw ShapeError("piencoder: patch dim " + std::to_string(x.cols()) + " does not match model P = " +
                     std::to_string(config_.patch_dim()));
  const bool drop = training && config_.dropout > 0.0;
  if (drop && rng == nullptr) throw ParameterError("piencoder: dropout in training mode needs an Rng");
  Trace t;
  t.x = x.reshaped({x.rows(), x.cols()});
  t.pre1 = enc1.forward(t.x);
  t.z1 = relu(t.pre1);
  if (drop) t.z1 = dropout(t.z1, config_.dropout, *rng, true, &t.mask1);
  t.pre2 = enc2.forward(t.z1);
  t.z2 = relu(t.pre2);
  if (drop) t.z2 = dropout(t.z2, config_.dropout, *rng, true, &t.mask2);
  t.xhat = head.forward(t.z2);
  return t;
}

void PIEncoder::backward_rows(const Trace& t, const Tensor& d_z1, const Tensor& d_xhat) {
  Tensor dz2 = head.backward(t.z2, d_xhat);
  dz2 = dropout_backward(dz2, t.mask2);
  Tensor dpre2 = relu_backward(t.pre2, dz2);
  Tensor dz1 = enc2.backward(t.z1, dpre2);
  if (!d_z1.empty()) add_inplace(dz1, d_z1);
  dz1 = dropout_backward(dz1, t.mask1);
  Tensor dpre1 = relu_backward(t.pre1, dz1);
  enc1.backward_params(t.x, dpre1);
}

PatchEmbeddings PIEncoder::embed(const PatchSet& view, bool training, Rng* rng) const {
  const std::size_t tp = view.count(), n = view.nodes(), d = config_.latent;
  Trace t = forward_rows(view.patches.reshaped({tp * n, view.patch_dim()}), training, rng);
  return {std::move(t.z1).reshaped({tp, n, d}), std::move(t.z2).reshaped({tp, n, d})};
}

Tensor PIEncoder::reconstruct(const Tensor& z2) const {
  Shape out = z2.shape();
  out.back() = config_.patch_dim();
  return head.forward(z2).reshaped(std::move(out));
}

std::vector<Parameter*> PIEncoder::parameters() {
  std::vector<Parameter*> out;
  enc1.collect(out);
  enc2.collect(out);
  head.collect(out);
  return out;
}

// ---------------------------------------------------------------------------

double recon_loss(const PatchSet& x, const Tensor& xhat_v1, const Tensor& xhat_v2, const Tensor& mask_v1,
                  const Tensor& mask_v2, Tensor* d_v1, Tensor* d_v2) {
  const Tensor& xp = x.patches;
  const std::size_t cells = x.count() * x.nodes(), dim = x.patch_dim();
  if (xhat_v1.size() != xp.size() || xhat_v2.size() != xp.size())
    throw ShapeError("recon_loss: reconstruction does not match patches " + shape_str(xp.shape()));
  if (mask_v1.size() != cells || mask_v2.size() != cells)
    throw ShapeError("recon_loss: mask does not match the patch grid");
  for (std::size_t k = 0; k < cells; ++k) {
    const double a = mask_v1[k], b = mask_v2[k];
    if (!((a == 0.0 || a == 1.0) && a + b == 1.0))
      throw ParameterError("recon_loss: masks are not complementary at cell " + std::to_string(k));
  }
  if (d_v1) *d_v1 = Tensor(xhat_v1.shape());
  if (d_v2) *d_v2 = Tensor(xhat_v2.shape());
  double visible1 = 0.0, visible2 = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    const double m1 = mask_v1[k], m2 = mask_v2[k];
    for (std::size_t j = 0; j < dim; ++j) {
      const std::size_t idx = k * dim + j;
      const double r1 = m1 * (xp[idx] - xhat_v1[idx]);
      const double r2 = m2 * (xp[idx] - xhat_v2[idx]);
      visible1 += r1 * r1;
      visible2 += r2 * r2;
      if (d_v1) (*d_v1)[idx] = -2.0 * m1 * r1;
      if (d_v2) (*d_v2)[idx] = -2.0 * m2 * r2;
    }
  }
  return visible1 + visible2;
}

double recon_loss(const PatchSet& x, const Tensor& xhat_v1, const Tensor& xhat_v2, const MaskPair& mask,
                  Tensor* d_v1, Tensor* d_v2) {
  return recon_loss(x, xhat_v1, xhat_v2, mask.m, mask.complement(), d_v1, d_v2);
}

Tensor contrastive_probabilities(const Tensor& z1_v1, const Tensor& z1_v2) {
  check_views(z1_v1, z1_v2);
  const std::size_t tp = z1_v1.dim(0), nodes = z1_v1.dim(1), m = 2 * tp;
  Tensor out({nodes, m, m});
  for (std::size_t n = 0; n < nodes; ++n) {
    Tensor z = stack_node(z1_v1, z1_v2, n);
    Tensor p = masked_row_softmax(matmul_nt(z, z));
    std::copy(p.ptr(), p.ptr() + p.size(), out.ptr() + n * m * m);
  }
  return out;
}

double contrastive_loss(const Tensor& z1_v1, const Tensor& z1_v2, Tensor* d_v1, Tensor* d_v2) {
  check_views(z1_v1, z1_v2);
  const std::size_t tp = z1_v1.dim(0), nodes = z1_v1.dim(1), d = z1_v1.dim(2), m = 2 * tp;
  const double scale = 1.0 / static_cast<double>(m * nodes);
  if (d_v1) *d_v1 = Tensor(z1_v1.shape());
  if (d_v2) *d_v2 = Tensor(z1_v2.shape());
  double loss = 0.0;
  for (std::size_t n = 0; n < nodes; ++n) {
    Tensor z = stack_node(z1_v1, z1_v2, n);
    Tensor p = masked_row_softmax(matmul_nt(z, z));
    for (std::size_t i = 0; i < m; ++i) loss -= std::log(p.at(i, (i + tp) % m));
    if (!d_v1 && !d_v2) continue;
    // dL/dS_is = (p_is - [s = partner(i)]) / (2T_p·N); S = Z Zᵀ so dZ = (dS + dSᵀ) Z.
    Tensor ds({m, m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t s = 0; s < m; ++s)
        if (s != i) ds.at(i, s) = scale * (p.at(i, s) - (s == (i + tp) % m ? 1.0 : 0.0));
    Tensor sym = ds + transpose(ds);
    Tensor dz = matmul(sym, z);
    for (std::size_t i = 0; i < tp; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        if (d_v1) d_v1->at(i, n, k) = dz.at(i, k);
        if (d_v2) d_v2->at(i, n, k) = dz.at(tp + i, k);
      }
  }
  return loss * scale;
}

// ---------------------------------------------------------------------------

namespace {

struct BatchPass {
  PretrainLosses losses;
  PIEncoder::Trace trace;
  Tensor d_z1;
  Tensor d_xhat;
};

BatchPass run_batch(const std::vector<Tensor>& batch, const PIEncoder& model, Rng& rng, const PretrainOptions& opt,
                    bool training, bool want_grad) {
  if (batch.empty()) throw ConfigError("pretrain: empty batch");
  const auto& cfg = model.config();
  std::vector<PatchSet> patches;
  std::vector<MaskPair> masks;
  patches.reserve(batch.size());
  for (const Tensor& w : batch) {
    if (w.rank() != 3 || w.dim(2) != cfg.channels)
      throw ShapeError("pretrain: window " + shape_str(w.shape()) + " does not match C = " + std::to_string(cfg.channels));
    patches.push_back(patchify(w, cfg.patch_len));
    if (patches.back().patches.shape() != patches.front().patches.shape())
      throw ShapeError("pretrain: windows in a batch must share one shape");
  }
  const std::size_t tp = patches[0].count(), nodes = patches[0].nodes(), p = cfg.patch_dim(), d = cfg.latent;
  const std::size_t cells = tp * nodes;
  for (std::size_t b = 0; b < batch.size(); ++b) masks.push_back(complementary_masks(tp, nodes, opt.mask_ratio, rng));

  // Rows: window-major, then view, then the [T_p × N] patch grid.
  Tensor x_all({batch.size() * 2 * cells, p});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    put_rows(x_all, (2 * b) * cells, apply_mask(patches[b], masks[b].m).patches);
    put_rows(x_all, (2 * b + 1) * cells, apply_mask(patches[b], masks[b].complement()).patches);
  }

  BatchPass pass;
  pass.trace = model.forward_rows(x_all, training, &rng);
  if (want_grad) {
    pass.d_z1 = Tensor({x_all.rows(), d});
    pass.d_xhat = Tensor({x_all.rows(), p});
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t r1 = 2 * b * cells, r2 = (2 * b + 1) * cells;
    Tensor xh1 = copy_rows(pass.trace.xhat, r1, cells, {tp, nodes, p});
    Tensor xh2 = copy_rows(pass.trace.xhat, r2, cells, {tp, nodes, p});
    Tensor dx1, dx2;
    const double rec = recon_loss(patches[b], xh1, xh2, masks[b], want_grad ? &dx1 : nullptr, want_grad ? &dx2 : nullptr);
    double cl = 0.0;
    Tensor dz1, dz2;
    if (opt.use_contrastive) {
      Tensor z1a = copy_rows(pass.trace.z1, r1, cells, {tp, nodes, d});
      Tensor z1b = copy_rows(pass.trace.z1, r2, cells, {tp, nodes, d});
      cl = contrastive_loss(z1a, z1b, want_grad ? &dz1 : nullptr, want_grad ? &dz2 : nullptr);
    }
    pass.losses.recon += rec * inv_b;
    pass.losses.contrastive += cl * inv_b;
    if (want_grad) {
      put_rows(pass.d_xhat, r1, dx1 * inv_b);
      put_rows(pass.d_xhat, r2, dx2 * inv_b);
      if (opt.use_contrastive) {
        put_rows(pass.d_z1, r1, dz1 * inv_b);
        put_rows(pass.d_z1, r2, dz2 * inv_b);
      }
    }
  }
  pass.losses.total = pass.losses.recon + pass.losses.contrastive;
  if (!std::isfinite(pass.losses.total))
    throw NumericError("pretrain: non-finite loss (recon " + std::to_string(pass.losses.recon) + ", contrastive " +
                       std::to_string(pass.losses.contrastive) + ")");
  return pass;
}

}  // namespace

PretrainLosses pretrain_gradients(const std::vector<Tensor>& batch, PIEncoder& model, Rng& rng,
                                  const PretrainOptions& options) {
  BatchPass pass = run_batch(batch, model, rng, options, true, true);
  for (Parameter* p : model.parameters()) p->zero_grad();
  model.backward_rows(pass.trace, pass.d_z1, pass.d_xhat);
  return pass.losses;
}

PretrainLosses pretrain_step(const std::vector<Tensor>& batch, PIEncoder& model, Adam& optim, Rng& rng,
                             const PretrainOptions& options) {
  PretrainLosses losses = pretrain_gradients(batch, model, rng, options);
  optim.step();
  return losses;
}

PretrainLosses pretrain_losses(const std::vector<Tensor>& batch, const PIEncoder& model, Rng& rng,
                               const PretrainOptions& options) {
  return run_batch(batch, model, rng, options, false, false).losses;
}

double reconstruction_mse(const std::vector<Tensor>& windows, const PIEncoder& model) {
  // In evaluation mode a visible patch's reconstruction depends only on its
  // own content, so scoring each patch from its visible view is plain
  // autoencoding of the unmasked patch grid.
  double sse = 0.0;
  std::size_t count = 0;
  for (const Tensor& w : windows) {
    PatchSet ps = patchify(w, model.config().patch_len);
    Tensor rows = ps.patches.reshaped({ps.count() * ps.nodes(), ps.patch_dim()});
    auto t = model.forward_rows(rows, false, nullptr);
    for (std::size_t i = 0; i < rows.size(); ++i) sse += (rows[i] - t.xhat[i]) * (rows[i] - t.xhat[i]);
    count += rows.size();
  }
  if (count == 0) throw DataError("reconstruction_mse: no windows");
  return sse / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

void save_piencoder(const std::filesystem::path& dir, PIEncoder& model, const PIEncoderCheckpointInfo& info,
                    const Adam* optim) {
  const auto& c = model.config();
  nlohmann::json m;
  m["kind"] = "piencoder";
  m["P"] = c.patch_dim();
  m["D"] = c.latent;
  m["L"] = c.patch_len;
  m["C"] = c.channels;
  m["dropout"] = c.dropout;
  m["seed"] = info.seed;
  m["step"] = info.step;
  m["epoch"] = info.epoch;
  m["use_contrastive"] = info.use_contrastive;
  checkpoint::save(dir, m, model.parameters(), optim ? &optim->states() : nullptr);
}

PIEncoder load_piencoder(const std::filesystem::path& dir, const PIEncoderConfig* expect, PIEncoderCheckpointInfo* info,
                         std::vector<AdamState>* adam) {
  const auto m = checkpoint::read_manifest(dir);
  if (m.value("kind", std::string()) != "piencoder")
    throw CheckpointError("checkpoint at " + dir.string() + " is not a PIEncoder");
  PIEncoderConfig cfg;
  cfg.patch_len = m.at("L").get<std::size_t>();
  cfg.channels = m.at("C").get<std::size_t>();
  cfg.latent = m.at("D").get<std::size_t>();
  cfg.dropout = m.value("dropout", 0.0);
  if (m.at("P").get<std::size_t>() != cfg.patch_dim()) throw CheckpointError("piencoder manifest: P != L·C");
  if (expect) {
    if (expect->patch_dim() != cfg.patch_dim() || expect->patch_len != cfg.patch_len || expect->channels != cfg.channels)
      throw CheckpointError("piencoder checkpoint has P=" + std::to_string(cfg.patch_dim()) + " (L=" +
                            std::to_string(cfg.patch_len) + ", C=" + std::to_string(cfg.channels) +
                            "), configuration expects P=" + std::to_string(expect->patch_dim()) + " (L=" +
                            std::to_string(expect->patch_len) + ", C=" + std::to_string(expect->channels) + ")");
    if (expect->latent != cfg.latent)
      throw CheckpointError("piencoder checkpoint has D=" + std::to_string(cfg.latent) + ", configuration expects D=" +
                            std::to_string(expect->latent));
  }
  Rng scratch(0);
  PIEncoder model(cfg, scratch);
  checkpoint::load(dir, model.parameters(), adam);
  if (info) {
    info->seed = m.value("seed", std::uint64_t{0});
    info->step = m.value("step", 0L);
    info->epoch = m.value("epoch", 0L);
    info->use_contrastive = m.value("use_contrastive", true);
  }
  return model;
}

}  // namespace premixer
