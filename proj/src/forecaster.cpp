#include "premixer/forecaster.hpp"

#include <cmath>

#include "premixer/checkpoint.hpp"
#include "premixer/error.hpp"

namespace premixer {

// ---------------------------------------------------------------------------
// config

void ForecasterConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(steps > 0 && horizon > 0 && channels > 0, "forecaster: T, horizon and C must be positive");
  need(nodes > 0, "forecaster: node count must be positive");
  need(d_model > 0 && latent > 0 && ff_mult > 0, "forecaster: d_model, D and ff_mult must be positive");
  need(d_pe > 0 && d_pe % 4 == 0, "forecaster: d_pe must be a positive multiple of 4");
  need(spatial_layers > 0, "forecaster: at least one spatial layer is required");
  need(dropout >= 0.0 && dropout < 1.0, "forecaster: dropout must be in [0, 1)");
  if (!ablations.no_pretrain)
    need(steps == patch_len, "forecaster: T = " + std::to_string(steps) + " must equal the patch length L = " +
                                 std::to_string(patch_len) + " so the short input is exactly one patch");
  if (!ablations.no_context && mode == SpatialMode::structured)
    need(d_emb > 0 && d_ctx > 0, "forecaster: d_emb and d_ctx must be positive");
}

std::string to_string(SpatialMode m) { return m == SpatialMode::structured ? "structured" : "basic"; }
std::string to_string(Aggregation a) { return a == Aggregation::mean ? "mean" : "sum"; }

SpatialMode parse_spatial_mode(const std::string& s) {
  if (s == "structured") return SpatialMode::structured;
  if (s == "basic") return SpatialMode::basic;
  throw ConfigError("unknown spatial mode '" + s + "' (expected structured|basic)");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::mean;
  if (s == "sum") return Aggregation::sum;
  throw ConfigError("unknown aggregation '" + s + "' (expected mean|sum)");
}

nlohmann::json to_json(const Ablations& a) {
  return {{"no_pretrain", a.no_pretrain}, {"no_cl", a.no_cl}, {"no_context", a.no_context}, {"no_stpe", a.no_stpe}};
}

Ablations ablations_from_json(const nlohmann::json& j) {
  Ablations a;
  a.no_pretrain = j.value("no_pretrain", false);
  a.no_cl = j.value("no_cl", false);
  a.no_context = j.value("no_context", false);
  a.no_stpe = j.value("no_stpe", false);
  return a;
}

nlohmann::json to_json(const ForecasterConfig& c) {
  return {{"T", c.steps},
          {"horizon", c.horizon},
          {"C", c.channels},
          {"N", c.nodes},
          {"L", c.patch_len},
          {"D", c.latent},
          {"d_pe", c.d_pe},
          {"d_model", c.d_model},
          {"d_emb", c.d_emb},
          {"d_ctx", c.d_ctx},
          {"ff_mult", c.ff_mult},
          {"spatial_layers", c.spatial_layers},
          {"spatial_mode", to_string(c.mode)},
          {"aggregation", to_string(c.aggregation)},
          {"dropout", c.dropout},
          {"ablations", to_json(c.ablations)}};
}

ForecasterConfig forecaster_config_from_json(const nlohmann::json& j) {
  ForecasterConfig c;
  try {
    c.steps = j.value("T", c.steps);
    c.horizon = j.value("horizon", c.horizon);
    c.channels = j.value("C", c.channels);
    c.nodes = j.value("N", c.nodes);
    c.patch_len = j.value("L", c.patch_len);
    c.latent = j.value("D", c.latent);
    c.d_pe = j.value("d_pe", c.d_pe);
    c.d_model = j.value("d_model", c.d_model);
    c.d_emb = j.value("d_emb", c.d_emb);
    c.d_ctx = j.value("d_ctx", c.d_ctx);
    c.ff_mult = j.value("ff_mult", c.ff_mult);
    c.spatial_layers = j.value("spatial_layers", c.spatial_layers);
    c.mode = parse_spatial_mode(j.value("spatial_mode", std::string("structured")));
    c.aggregation = parse_aggregation(j.value("aggregation", std::string("mean")));
    c.dropout = j.value("dropout", c.dropout);
    if (j.contains("ablations")) c.ablations = ablations_from_json(j.at("ablations"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("forecaster config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// temporal mixer

TemporalMixer::TemporalMixer(std::size_t width, std::size_t ff_width, Rng& rng)
    : norm("temporal.norm", width), fc1("temporal.fc1", width, ff_width, true, rng),
      fc2("temporal.fc2", ff_width, width, true, rng) {}

Tensor TemporalMixer::forward(const Tensor& h, double p, bool training, Rng* rng, Cache* cache) const {
  LayerNormCache ln;
  Tensor normed = norm.forward(h, &ln);
  Tensor pre = fc1.forward(normed);
  Tensor act = gelu(pre);
  Tensor mask;
  if (training && p > 0.0) act = dropout(act, p, *rng, true, &mask);
  Tensor out = fc2.forward(act);
  add_inplace(out, h);
  if (cache) {
    cache->h = h;
    cache->ln = std::move(ln);
    cache->normed = std::move(normed);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->mask = std::move(mask);
  }
  return out;
}

Tensor TemporalMixer::backward(const Cache& c, const Tensor& dy) {
  Tensor dact = dropout_backward(fc2.backward(c.act, dy), c.mask);
  Tensor dnormed = fc1.backward(c.normed, gelu_backward(c.pre, dact));
  Tensor dh = norm.backward(c.ln, dnormed);
  add_inplace(dh, dy);
  return dh;
}

void TemporalMixer::collect(std::vector<Parameter*>& out) {
  norm.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

// ---------------------------------------------------------------------------
// structured spatial mixer

namespace {

double kappa(Aggregation agg, std::size_t nodes) {
  return agg == Aggregation::mean ? 1.0 / static_cast<double>(nodes) : 1.0;
}

// [W_top | W_bot] as an H × 2H matrix from the 2H × H message weight.
Tensor split_message_weight(const Tensor& w) {
  const std::size_t hd = w.dim(1);
  Tensor cat({hd, 2 * hd});
  for (std::size_t k = 0; k < hd; ++k) {
    std::copy(w.row(k), w.row(k) + hd, cat.row(k));
    std::copy(w.row(hd + k), w.row(hd + k) + hd, cat.row(k) + hd);
  }
  return cat;
}

Tensor block(const Tensor& m, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols) {
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) std::copy(m.row(row0 + r) + col0, m.row(row0 + r) + col0 + cols, out.row(r));
  return out;
}

std::size_t batch_of(const Tensor& h, std::size_t nodes, const char* what) {
  if (nodes == 0 || h.rank() != 2 || h.rows() % nodes != 0)
    throw ShapeError(std::string(what) + ": activation " + shape_str(h.shape()) + " is not a stack of " +
                     std::to_string(nodes) + "-node blocks");
  return h.rows() / nodes;
}

}  // namespace

StructuredSpatialLayer::StructuredSpatialLayer(const std::string& name, std::size_t width, std::size_t d_ctx,
                                               bool gated, Rng& rng)
    : theta(name + ".theta", width, width, false, rng), msg(name + ".message", 2 * width, width, false, rng),
      gated_(gated) {
  if (gated) gate = Linear(name + ".gate", 2 * d_ctx, 1, true, rng);
}

Tensor StructuredSpatialLayer::gates(const Tensor& ctx, std::size_t nodes) const {
  Tensor g({nodes, nodes}, 1.0);
  if (!gated_) return g;
  const std::size_t dc = gate.in_features() / 2;
  if (ctx.rank() != 2 || ctx.dim(0) != nodes || ctx.dim(1) != dc)
    throw ShapeError("spatial mixer: node context " + shape_str(ctx.shape()) + " does not match N = " +
                     std::to_string(nodes) + ", d_ctx = " + std::to_string(dc));
  const double* w = gate.weight.value.ptr();
  const double beta = gate.bias.value[0];
  std::vector<double> a(nodes, 0.0), b(nodes, 0.0);
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t k = 0; k < dc; ++k) {
      a[i] += ctx.at(i, k) * w[k];
      b[i] += ctx.at(i, k) * w[dc + k];
    }
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = 0; j < nodes; ++j) g.at(i, j) = sigmoid(a[i] + b[j] + beta);
  return g;
}

Tensor StructuredSpatialLayer::forward(const Tensor& h, std::size_t nodes, const Tensor& ctx, Aggregation agg,
                                       double p, bool training, Rng* rng, Cache* cache) const {
  const std::size_t batch = batch_of(h, nodes, "spatial mixer");
  const std::size_t hd = theta.in_features();
  if (h.cols() != hd) throw ShapeError("spatial mixer: width " + std::to_string(h.cols()) + " != " + std::to_string(hd));
  const double k = kappa(agg, nodes);
  Tensor g = gates(ctx, nodes);
  Tensor s({nodes});
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = 0; j < nodes; ++j) s[i] += g.at(i, j);

  Tensor ab = matmul(h, split_message_weight(msg.weight.value));
  Tensor pre = theta.forward(h);
  Tensor gb({nodes, hd});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * nodes;
    gemm(nodes, hd, nodes, g.ptr(), nodes, ab.row(r0) + hd, 2 * hd, gb.ptr(), hd, false);
    for (std::size_t i = 0; i < nodes; ++i) {
      const double* a_row = ab.row(r0 + i);
      const double* gb_row = gb.row(i);
      double* out = pre.row(r0 + i);
      for (std::size_t c = 0; c < hd; ++c) out[c] += k * (s[i] * a_row[c] + gb_row[c]);
    }
  }
  Tensor y = gelu(pre);
  Tensor mask;
  if (training && p > 0.0) y = dropout(y, p, *rng, true, &mask);
  if (cache) {
    cache->h = h;
    cache->ctx = gated_ ? ctx : Tensor();
    cache->gates = std::move(g);
    cache->rowsum = std::move(s);
    cache->ab = std::move(ab);
    cache->pre = std::move(pre);
    cache->mask = std::move(mask);
  }
  return y;
}

Tensor StructuredSpatialLayer::backward(const Cache& c, std::size_t nodes, Aggregation agg, const Tensor& dy,
                                        Tensor* d_ctx) {
  const std::size_t batch = batch_of(c.h, nodes, "spatial mixer");
  const std::size_t hd = theta.in_features();
  const double k = kappa(agg, nodes);
  Tensor dm = gelu_backward(c.pre, dropout_backward(dy, c.mask));
  Tensor dh = theta.backward(c.h, dm);

  // dA = κ diag(s) dm, dB = κ Gᵀ dm, per sample.
  Tensor gt = transpose(c.gates);
  Tensor dab({c.h.rows(), 2 * hd});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * nodes;
    for (std::size_t i = 0; i < nodes; ++i) {
      const double* src = dm.row(r0 + i);
      double* dst = dab.row(r0 + i);
      for (std::size_t q = 0; q < hd; ++q) dst[q] = k * c.rowsum[i] * src[q];
    }
    gemm(nodes, hd, nodes, gt.ptr(), nodes, dm.row(r0), hd, dab.row(r0) + hd, 2 * hd, false);
    for (std::size_t i = 0; i < nodes; ++i) {
      double* dst = dab.row(r0 + i) + hd;
      for (std::size_t q = 0; q < hd; ++q) dst[q] *= k;
    }
  }

  if (gated_) {
    Tensor dg({nodes, nodes});
    std::vector<double> ds(nodes, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t r0 = b * nodes;
      Tensor dm_b = block(dm, r0, nodes, 0, hd);
      add_inplace(dg, matmul_nt(dm_b, block(c.ab, r0, nodes, hd, hd)));
      for (std::size_t i = 0; i < nodes; ++i) {
        const double* a_row = c.ab.row(r0 + i);
        const double* d_row = dm.row(r0 + i);
        double acc = 0.0;
        for (std::size_t q = 0; q < hd; ++q) acc += d_row[q] * a_row[q];
        ds[i] += acc;
      }
    }
    const std::size_t dc = gate.in_features() / 2;
    std::vector<double> da(nodes, 0.0), db(nodes, 0.0);
    double dbeta = 0.0;
    for (std::size_t i = 0; i < nodes; ++i)
      for (std::size_t j = 0; j < nodes; ++j) {
        const double gij = c.gates.at(i, j);
        const double dz = k * (dg.at(i, j) + ds[i]) * gij * (1.0 - gij);
        da[i] += dz;
        db[j] += dz;
        dbeta += dz;
      }
    double* gw = gate.weight.grad.ptr();
    const double* w = gate.weight.value.ptr();
    for (std::size_t i = 0; i < nodes; ++i)
      for (std::size_t q = 0; q < dc; ++q) {
        gw[q] += c.ctx.at(i, q) * da[i];
        gw[dc + q] += c.ctx.at(i, q) * db[i];
      }
    gate.bias.grad[0] += dbeta;
    if (d_ctx) {
      if (d_ctx->empty()) *d_ctx = Tensor({nodes, dc});
      for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t q = 0; q < dc; ++q) d_ctx->at(i, q) += da[i] * w[q] + db[i] * w[dc + q];
    }
  }

  // W_m gradient: [dW_top | dW_bot] = hᵀ [dA | dB].
  Tensor dwcat = matmul_tn(c.h, dab);
  Tensor& gw = msg.weight.grad;
  for (std::size_t q = 0; q < hd; ++q)
    for (std::size_t col = 0; col < hd; ++col) {
      gw.at(q, col) += dwcat.at(q, col);
      gw.at(hd + q, col) += dwcat.at(q, hd + col);
    }
  add_inplace(dh, matmul_nt(dab, split_message_weight(msg.weight.value)));
  return dh;
}

void StructuredSpatialLayer::collect(std::vector<Parameter*>& out) {
  theta.collect(out);
  msg.collect(out);
  if (gated_) gate.collect(out);
}

// ---------------------------------------------------------------------------
// basic spatial mixer

BasicSpatialLayer::BasicSpatialLayer(const std::string& name, std::size_t nodes, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(nodes));
  Tensor w({nodes, nodes}), b({nodes});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  for (double& v : b.data()) v = rng.uniform(-bound, bound);
  weight = Parameter(name + ".channel.weight", std::move(w));
  bias = Parameter(name + ".channel.bias", std::move(b));
}

Tensor BasicSpatialLayer::forward(const Tensor& h, std::size_t nodes, double p, bool training, Rng* rng,
                                  Cache* cache) const {
  if (nodes != weight.value.dim(0))
    throw ShapeError("basic spatial mixer built for N = " + std::to_string(weight.value.dim(0)) + ", got N = " +
                     std::to_string(nodes));
  const std::size_t batch = batch_of(h, nodes, "basic spatial mixer");
  const std::size_t hd = h.cols();
  Tensor pre(h.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * nodes;
    gemm(nodes, hd, nodes, weight.value.ptr(), nodes, h.row(r0), hd, pre.row(r0), hd, false);
    for (std::size_t i = 0; i < nodes; ++i) {
      double* row = pre.row(r0 + i);
      for (std::size_t q = 0; q < hd; ++q) row[q] += bias.value[i];
    }
  }
  Tensor y = gelu(pre);
  Tensor mask;
  if (training && p > 0.0) y = dropout(y, p, *rng, true, &mask);
  if (cache) {
    cache->h = h;
    cache->pre = std::move(pre);
    cache->mask = std::move(mask);
  }
  return y;
}

Tensor BasicSpatialLayer::backward(const Cache& c, std::size_t nodes, const Tensor& dy) {
  const std::size_t batch = batch_of(c.h, nodes, "basic spatial mixer");
  const std::size_t hd = c.h.cols();
  Tensor dpre = gelu_backward(c.pre, dropout_backward(dy, c.mask));
  Tensor wt = transpose(weight.value);
  Tensor dh(c.h.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * nodes;
    Tensor d_b = block(dpre, r0, nodes, 0, hd);
    add_inplace(weight.grad, matmul_nt(d_b, block(c.h, r0, nodes, 0, hd)));
    for (std::size_t i = 0; i < nodes; ++i)
      for (std::size_t q = 0; q < hd; ++q) bias.grad[i] += d_b.at(i, q);
    gemm(nodes, hd, nodes, wt.ptr(), nodes, d_b.ptr(), hd, dh.row(r0), hd, false);
  }
  return dh;
}

void BasicSpatialLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// full model

PreMixer::PreMixer(const ForecasterConfig& config, Rng& rng, std::optional<PIEncoder> encoder)
    : config_(config), encoder_(std::move(encoder)) {
  config_.validate();
  const auto& c = config_;
  if (!c.ablations.no_pretrain) {
    if (!encoder_) throw ConfigError("forecaster: a pre-trained PIEncoder is required unless no_pretrain is set");
    const auto& ec = encoder_->config();
    if (ec.patch_len != c.patch_len || ec.channels != c.channels)
      throw ConfigError("forecaster: PIEncoder has L = " + std::to_string(ec.patch_len) + ", C = " +
                        std::to_string(ec.channels) + " but the forecaster expects L = " +
                        std::to_string(c.patch_len) + ", C = " + std::to_string(c.channels));
    if (ec.latent != c.latent)
      throw ConfigError("forecaster: PIEncoder has D = " + std::to_string(ec.latent) + ", configuration says D = " +
                        std::to_string(c.latent));
  }
  const std::size_t hd = c.hidden();
  pos_ = c.ablations.no_stpe ? build_temporal_pe(c.steps, c.nodes, c.d_pe) : build_stpe(c.steps, c.nodes, c.d_pe);
  if (!c.ablations.no_stpe) spatial_ = stpe_spatial_half(pos_);

  embed = Linear("input_embed", c.channels + c.d_pe, c.d_model, true, rng);
  projector = Linear("projector", c.latent, hd, true, rng);
  if (c.ablations.no_pretrain) {
    projector.weight.value.fill(0.0);
    projector.bias.value.fill(0.0);
  }
  temporal = TemporalMixer(hd, hd * c.ff_mult, rng);
  for (std::size_t l = 0; l < c.spatial_layers; ++l) {
    const std::string name = "spatial." + std::to_string(l);
    if (c.mode == SpatialMode::structured)
      structured.emplace_back(name, hd, c.d_ctx, has_context(), rng);
    else
      basic.emplace_back(name, c.nodes, rng);
  }
  head = Linear("output_head", hd, c.horizon * c.channels, true, rng);
  if (has_context()) {
    node_embedding = NodeEmbedding(c.nodes, c.d_emb, rng);
    fusion = ContextFusion(spatial_.empty() ? 0 : spatial_.cols(), c.d_emb, c.d_ctx, rng);
  }
}

Tensor PreMixer::node_context() const {
  if (!has_context()) return Tensor();
  return fusion.forward(spatial_, node_embedding.table.value);
}

Tensor PreMixer::input_embed(const Tensor& x) const {
  require_rank(x, 3, "input_embed");
  return forward_stage_embed(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}), nullptr, nullptr);
}

Tensor PreMixer::forward_stage_embed(const Tensor& x, Tensor* in_out, Tensor* pre_out) const {
  const auto& c = config_;
  if (x.rank() != 4 || x.dim(1) != c.steps || x.dim(2) != c.nodes || x.dim(3) != c.channels)
    throw ShapeError("forecaster: input " + shape_str(x.shape()) + " does not match [B × " + std::to_string(c.steps) +
                     " × " + std::to_string(c.nodes) + " × " + std::to_string(c.channels) + "]");
  const std::size_t batch = x.dim(0), t_len = c.steps, nodes = c.nodes, ch = c.channels, dp = c.d_pe;
  Tensor in({batch * nodes * t_len, ch + dp});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < nodes; ++n)
      for (std::size_t t = 0; t < t_len; ++t) {
        double* row = in.row((b * nodes + n) * t_len + t);
        const double* src = x.ptr() + ((b * t_len + t) * nodes + n) * ch;
        std::copy(src, src + ch, row);
        const double* pe = pos_.ptr() + (t * nodes + n) * dp;
        std::copy(pe, pe + dp, row + ch);
      }
  Tensor pre = embed.forward(in);
  Tensor hc = gelu(pre).reshaped({batch * nodes, c.hidden()});
  if (in_out) *in_out = std::move(in);
  if (pre_out) *pre_out = std::move(pre);
  return hc;
}

Tensor PreMixer::forward_stage_encode(const Tensor& x) const {
  const auto& c = config_;
  const std::size_t batch = x.dim(0), t_len = c.steps, nodes = c.nodes, ch = c.channels;
  Tensor patches({batch * nodes, t_len * ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < nodes; ++n) {
      double* row = patches.row(b * nodes + n);
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t q = 0; q < ch; ++q) row[t * ch + q] = x.ptr()[((b * t_len + t) * nodes + n) * ch + q];
    }
  return encoder_->forward_rows(patches, false, nullptr).z2;
}

Tensor PreMixer::encode_context(const Tensor& x) const {
  if (!encoder_) throw ConfigError("encode_context: no PIEncoder attached");
  require_rank(x, 3, "encode_context");
  Tensor x4 = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.dim(0) != config_.steps || x.dim(1) != config_.nodes || x.dim(2) != config_.channels)
    throw ShapeError("encode_context: input " + shape_str(x.shape()) + " does not match the configuration");
  return forward_stage_encode(x4);
}

Tensor PreMixer::fuse_pretrain(const Tensor& z2, const Tensor& hc) const {
  Tensor h0 = projector.forward(z2);
  require_same_shape(h0, hc, "fuse_pretrain");
  add_inplace(h0, hc);
  return h0;
}

Tensor PreMixer::forward(const Tensor& x, bool training, Rng* rng, Trace* trace) const {
  const auto& c = config_;
  const bool drop = training && c.dropout > 0.0;
  if (drop && rng == nullptr) throw ParameterError("forecaster: dropout in training mode needs an Rng");
  Trace local;
  Trace& tr = trace ? *trace : local;
  const bool keep = trace != nullptr;

  Tensor h = forward_stage_embed(x, keep ? &tr.embed_in : nullptr, keep ? &tr.embed_pre : nullptr);
  const std::size_t batch = x.dim(0), nodes = c.nodes;
  tr.batch = batch;
  if (uses_pretrain()) {
    Tensor z2 = forward_stage_encode(x);
    h = fuse_pretrain(z2, h);
    if (keep) tr.z2 = std::move(z2);
  }
  h = temporal.forward(h, c.dropout, drop, rng, keep ? &tr.temporal : nullptr);

  Tensor ctx;
  if (has_context()) ctx = fusion.forward(spatial_, node_embedding.table.value, keep ? &tr.fusion : nullptr);
  if (keep) {
    tr.structured.assign(structured.size(), {});
    tr.basic.assign(basic.size(), {});
  }
  for (std::size_t l = 0; l < structured.size(); ++l)
    h = structured[l].forward(h, nodes, ctx, c.aggregation, c.dropout, drop, rng, keep ? &tr.structured[l] : nullptr);
  for (std::size_t l = 0; l < basic.size(); ++l)
    h = basic[l].forward(h, nodes, c.dropout, drop, rng, keep ? &tr.basic[l] : nullptr);
  if (keep) tr.ctx = ctx;

  Tensor out = head.forward(h);
  if (keep) tr.last = std::move(h);
  const std::size_t hz = c.horizon, ch = c.channels;
  Tensor y({batch, hz, nodes, ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < nodes; ++n) {
      const double* row = out.row(b * nodes + n);
      for (std::size_t t = 0; t < hz; ++t)
        for (std::size_t q = 0; q < ch; ++q) y.ptr()[((b * hz + t) * nodes + n) * ch + q] = row[t * ch + q];
    }
  return y;
}

void PreMixer::backward(const Trace& tr, const Tensor& d_yhat) {
  const auto& c = config_;
  const std::size_t batch = tr.batch, nodes = c.nodes, hz = c.horizon, ch = c.channels;
  if (d_yhat.shape() != Shape{batch, hz, nodes, ch})
    throw ShapeError("forecaster backward: gradient " + shape_str(d_yhat.shape()) + " does not match the forecast");
  Tensor d_out({batch * nodes, hz * ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t n = 0; n < nodes; ++n) {
      double* row = d_out.row(b * nodes + n);
      for (std::size_t t = 0; t < hz; ++t)
        for (std::size_t q = 0; q < ch; ++q) row[t * ch + q] = d_yhat.ptr()[((b * hz + t) * nodes + n) * ch + q];
    }
  Tensor dh = head.backward(tr.last, d_out);

  Tensor d_ctx;
  for (std::size_t l = basic.size(); l-- > 0;) dh = basic[l].backward(tr.basic[l], nodes, dh);
  for (std::size_t l = structured.size(); l-- > 0;)
    dh = structured[l].backward(tr.structured[l], nodes, c.aggregation, dh, has_context() ? &d_ctx : nullptr);
  if (has_context() && !d_ctx.empty()) add_inplace(node_embedding.table.grad, fusion.backward(tr.fusion, d_ctx));

  dh = temporal.backward(tr.temporal, dh);
  if (uses_pretrain()) projector.backward_params(tr.z2, dh);
  Tensor dpre = gelu_backward(tr.embed_pre, dh.reshaped({tr.embed_pre.rows(), c.d_model}));
  embed.backward_params(tr.embed_in, dpre);
}

std::vector<Parameter*> PreMixer::parameters() {
  std::vector<Parameter*> out;
  embed.collect(out);
  projector.collect(out);
  temporal.collect(out);
  for (auto& l : structured) l.collect(out);
  for (auto& l : basic) l.collect(out);
  head.collect(out);
  if (has_context()) {
    node_embedding.collect(out);
    fusion.collect(out);
  }
  return out;
}

std::vector<Parameter*> PreMixer::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters())
    if (uses_pretrain() || (p != &projector.weight && p != &projector.bias)) out.push_back(p);
  return out;
}

std::size_t PreMixer::trainable_count() { return count_parameters(trainable_parameters()); }

std::size_t PreMixer::total_count() {
  std::size_t n = trainable_count();
  if (encoder_) n += count_parameters(encoder_->parameters());
  return n;
}

void PreMixer::permute_nodes(std::span<const std::size_t> perm) {
  const std::size_t nodes = config_.nodes;
  std::vector<bool> seen(nodes, false);
  if (perm.size() != nodes) throw ShapeError("permute_nodes: permutation of " + std::to_string(perm.size()) +
                                             " entries for N = " + std::to_string(nodes));
  for (std::size_t k : perm) {
    if (k >= nodes || seen[k]) throw ParameterError("permute_nodes: not a permutation");
    seen[k] = true;
  }
  auto rows = [&](const Tensor& t, std::size_t width) {
    Tensor out(t.shape());
    for (std::size_t k = 0; k < nodes; ++k)
      std::copy(t.ptr() + perm[k] * width, t.ptr() + (perm[k] + 1) * width, out.ptr() + k * width);
    return out;
  };
  Tensor pos(pos_.shape());
  const std::size_t dp = config_.d_pe;
  for (std::size_t t = 0; t < config_.steps; ++t)
    for (std::size_t k = 0; k < nodes; ++k) {
      const double* src = pos_.ptr() + (t * nodes + perm[k]) * dp;
      std::copy(src, src + dp, pos.ptr() + (t * nodes + k) * dp);
    }
  pos_ = std::move(pos);
  if (!spatial_.empty()) spatial_ = rows(spatial_, spatial_.cols());
  if (has_context()) node_embedding.table.value = rows(node_embedding.table.value, config_.d_emb);
  for (auto& l : basic) {
    Tensor w({nodes, nodes}), b({nodes});
    for (std::size_t i = 0; i < nodes; ++i) {
      b[i] = l.bias.value[perm[i]];
      for (std::size_t j = 0; j < nodes; ++j) w.at(i, j) = l.weight.value.at(perm[i], perm[j]);
    }
    l.weight.value = std::move(w);
    l.bias.value = std::move(b);
  }
}

// ---------------------------------------------------------------------------

double regression_loss(const Tensor& yhat, const Tensor& y, Tensor* grad) {
  require_same_shape(yhat, y, "regression_loss");
  const double inv = 1.0 / static_cast<double>(y.size());
  if (grad) *grad = Tensor(y.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = yhat[i] - y[i];
    acc += std::abs(d);
    if (grad) (*grad)[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  return acc * inv;
}

Batch assemble_batch(const WindowSampler& sampler, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("assemble_batch: empty batch");
  Batch out;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    WindowSample w = sampler.at(indices[k]);
    if (k == 0) {
      Shape xs{indices.size()}, ys{indices.size()};
      xs.insert(xs.end(), w.x_short.shape().begin(), w.x_short.shape().end());
      ys.insert(ys.end(), w.y.shape().begin(), w.y.shape().end());
      out.x = Tensor(xs);
      out.y = Tensor(ys);
    }
    std::copy(w.x_short.ptr(), w.x_short.ptr() + w.x_short.size(), out.x.ptr() + k * w.x_short.size());
    std::copy(w.y.ptr(), w.y.ptr() + w.y.size(), out.y.ptr() + k * w.y.size());
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_forecaster(const std::filesystem::path& dir, PreMixer& model, const Normalizer& normalizer,
                     const nlohmann::json& extra) {
  nlohmann::json m;
  m["kind"] = "premixer";
  m["config"] = to_json(model.config());
  m["ablations"] = to_json(model.config().ablations);
  m["normalizer"] = {{"mean", normalizer.mean()}, {"std", normalizer.stddev()}};
  m["encoder_linked"] = model.encoder() != nullptr;
  m["trainable_parameters"] = model.trainable_count();
  m["total_parameters"] = model.total_count();
  if (!extra.is_null()) m["extra"] = extra;
  checkpoint::save(dir, m, model.parameters());
  if (PIEncoder* enc = model.encoder()) save_piencoder(dir / "encoder", *enc, {});
}

PreMixer load_forecaster(const std::filesystem::path& dir, ForecasterCheckpointInfo* info) {
  const auto m = checkpoint::read_manifest(dir);
  if (m.value("kind", std::string()) != "premixer")
    throw CheckpointError("checkpoint at " + dir.string() + " is not a forecaster");
  ForecasterConfig cfg = forecaster_config_from_json(m.at("config"));
  std::optional<PIEncoder> enc;
  if (m.value("encoder_linked", false)) {
    PIEncoderConfig expect{cfg.patch_len, cfg.channels, cfg.latent, 0.0};
    enc = load_piencoder(dir / "encoder", &expect);
  }
  Rng scratch(0);
  PreMixer model(cfg, scratch, std::move(enc));
  checkpoint::load(dir, model.parameters());
  if (info) {
    const auto& n = m.at("normalizer");
    info->normalizer = Normalizer(n.at("mean").get<std::vector<double>>(), n.at("std").get<std::vector<double>>());
    info->extra = m.value("extra", nlohmann::json());
  }
  return model;
}

}  // namespace premixer
