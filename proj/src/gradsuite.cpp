#include <cstdio>
#include <functional>

#include "premixer/error.hpp"
#include "premixer/forecaster.hpp"
#include "premixer/gradcheck.hpp"
#include "premixer/workflows.hpp"

namespace premixer {
namespace {

constexpr double kLayerTol = 1e-5;
constexpr double kModelTol = 1e-4;

Tensor random(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
  return acc;
}

struct Probe {
  std::vector<Tensor*> inputs;
  std::vector<Tensor> analytic;
};

void add_params(Probe& p, const std::vector<Parameter*>& params) {
  for (Parameter* q : params) {
    p.inputs.push_back(&q->value);
    p.analytic.push_back(q->grad);
  }
}

void zero(const std::vector<Parameter*>& params) {
  for (Parameter* q : params) q->zero_grad();
}

// One instance: builds the analytic gradients and returns the max error.
using Case = std::function<GradCheckResult(Rng&)>;

GradCheckResult check(const std::function<double()>& f, Probe& p, std::size_t cap = 0) {
  return grad_check(f, p.inputs, p.analytic, 1e-4, 1e-6, cap);
}

GradCheckResult case_matmul(Rng& rng) {
  Tensor a = random({3, 4}, rng), b = random({4, 2}, rng), r = random({3, 2}, rng);
  Probe p{{&a, &b}, {matmul(r, transpose(b)), matmul_tn(a, r)}};
  return check([&] { return weighted_sum(matmul(a, b), r); }, p);
}

GradCheckResult case_linear(Rng& rng, std::size_t in, std::size_t out, const char* name) {
  Linear lin(name, in, out, true, rng);
  Tensor x = random({5, in}, rng), r = random({5, out}, rng);
  lin.weight.zero_grad();
  lin.bias.zero_grad();
  Tensor dx = lin.backward(x, r);
  Probe p{{&x}, {dx}};
  std::vector<Parameter*> ps;
  lin.collect(ps);
  add_params(p, ps);
  return check([&] { return weighted_sum(lin.forward(x), r); }, p);
}

GradCheckResult case_layer_norm(Rng& rng) {
  LayerNorm ln("ln", 6);
  ln.gamma.value = random({6}, rng);
  ln.beta.value = random({6}, rng);
  Tensor x = random({5, 6}, rng), r = random({5, 6}, rng);
  LayerNormCache cache;
  ln.forward(x, &cache);
  ln.gamma.zero_grad();
  ln.beta.zero_grad();
  Tensor dx = ln.backward(cache, r);
  Probe p{{&x, &ln.gamma.value, &ln.beta.value}, {dx, ln.gamma.grad, ln.beta.grad}};
  return check([&] { return weighted_sum(ln.forward(x), r); }, p);
}

GradCheckResult case_gelu(Rng& rng) {
  Tensor x = random({5, 6}, rng, 2.0), r = random({5, 6}, rng);
  Probe p{{&x}, {gelu_backward(x, r)}};
  return check([&] { return weighted_sum(gelu(x), r); }, p);
}

GradCheckResult case_relu(Rng& rng) {
  Tensor x = random({5, 6}, rng), r = random({5, 6}, rng);
  for (double& v : x.data())
    if (std::abs(v) < 1e-2) v += 0.1;
  Probe p{{&x}, {relu_backward(x, r)}};
  return check([&] { return weighted_sum(relu(x), r); }, p);
}

GradCheckResult case_temporal(Rng& rng) {
  TemporalMixer mix(8, 16, rng);
  mix.norm.gamma.value = random({8}, rng, 0.5);
  for (double& v : mix.norm.gamma.value.data()) v += 1.0;
  Tensor h = random({6, 8}, rng), r = random({6, 8}, rng);
  std::vector<Parameter*> ps;
  mix.collect(ps);
  zero(ps);
  TemporalMixer::Cache c;
  mix.forward(h, 0.0, false, nullptr, &c);
  Tensor dh = mix.backward(c, r);
  Probe p{{&h}, {dh}};
  add_params(p, ps);
  return check([&] { return weighted_sum(mix.forward(h, 0.0, false, nullptr), r); }, p);
}

GradCheckResult case_structured(Rng& rng, Aggregation agg) {
  const std::size_t nodes = 4, batch = 2, width = 6, dc = 3;
  StructuredSpatialLayer layer("spatial", width, dc, true, rng);
  Tensor h = random({batch * nodes, width}, rng, 0.5), ctx = random({nodes, dc}, rng, 0.5);
  Tensor r = random({batch * nodes, width}, rng);
  std::vector<Parameter*> ps;
  layer.collect(ps);
  zero(ps);
  StructuredSpatialLayer::Cache c;
  layer.forward(h, nodes, ctx, agg, 0.0, false, nullptr, &c);
  Tensor dctx;
  Tensor dh = layer.backward(c, nodes, agg, r, &dctx);
  Probe p{{&h, &ctx}, {dh, dctx}};
  add_params(p, ps);
  return check([&] { return weighted_sum(layer.forward(h, nodes, ctx, agg, 0.0, false, nullptr), r); }, p);
}

GradCheckResult case_basic(Rng& rng) {
  const std::size_t nodes = 4, batch = 2, width = 5;
  BasicSpatialLayer layer("spatial", nodes, rng);
  Tensor h = random({batch * nodes, width}, rng), r = random({batch * nodes, width}, rng);
  std::vector<Parameter*> ps;
  layer.collect(ps);
  zero(ps);
  BasicSpatialLayer::Cache c;
  layer.forward(h, nodes, 0.0, false, nullptr, &c);
  Tensor dh = layer.backward(c, nodes, r);
  Probe p{{&h}, {dh}};
  add_params(p, ps);
  return check([&] { return weighted_sum(layer.forward(h, nodes, 0.0, false, nullptr), r); }, p);
}

GradCheckResult case_fusion(Rng& rng) {
  const std::size_t nodes = 4;
  NodeEmbedding emb(nodes, 3, rng);
  ContextFusion fuse(2, 3, 5, rng);
  Tensor spatial = random({nodes, 2}, rng), r = random({nodes, 5}, rng);
  std::vector<Parameter*> ps;
  fuse.collect(ps);
  zero(ps);
  ContextFusion::Cache c;
  fuse.forward(spatial, emb.table.value, &c);
  Tensor de = fuse.backward(c, r);
  Probe p{{&emb.table.value}, {de}};
  add_params(p, ps);
  return check([&] { return weighted_sum(fuse.forward(spatial, emb.table.value), r); }, p);
}

GradCheckResult case_piencoder(Rng& rng) {
  PIEncoderConfig cfg{3, 1, 5, 0.0};
  PIEncoder model(cfg, rng);
  std::vector<Tensor> batch{random({6, 2, 1}, rng), random({6, 2, 1}, rng)};  // T_p = 2, N = 2
  const Rng mask_rng = rng.split(99);
  Rng r1 = mask_rng;
  pretrain_gradients(batch, model, r1);
  Probe p;
  add_params(p, model.parameters());
  return check(
      [&] {
        Rng r2 = mask_rng;
        return pretrain_losses(batch, model, r2).total;
      },
      p);
}

GradCheckResult case_premixer(Rng& rng, SpatialMode mode, Ablations abl, Aggregation agg) {
  ForecasterConfig cfg;
  cfg.steps = 12;
  cfg.horizon = 12;
  cfg.channels = 1;
  cfg.nodes = 3;
  cfg.patch_len = 12;
  cfg.latent = 6;
  cfg.d_pe = 4;
  cfg.d_model = 2;
  cfg.d_emb = 3;
  cfg.d_ctx = 4;
  cfg.ff_mult = 2;
  cfg.spatial_layers = 2;
  cfg.mode = mode;
  cfg.aggregation = agg;
  cfg.dropout = 0.0;
  cfg.ablations = abl;
  std::optional<PIEncoder> enc;
  if (!abl.no_pretrain) enc = PIEncoder(PIEncoderConfig{12, 1, 6, 0.0}, rng);
  PreMixer model(cfg, rng, std::move(enc));
  Tensor x = random({2, 12, 3, 1}, rng), y = random({2, 12, 3, 1}, rng);
  auto params = model.trainable_parameters();
  zero(params);
  PreMixer::Trace tr;
  Tensor yhat = model.forward(x, false, nullptr, &tr);
  Tensor g;
  regression_loss(yhat, y, &g);
  model.backward(tr, g);
  Probe p;
  add_params(p, params);
  return check([&] { return regression_loss(model.forward(x, false, nullptr), y); }, p, 400);
}

}  // namespace

std::vector<GradRow> run_gradcheck_suite(std::size_t seeds) {
  struct Entry {
    const char* name;
    double tol;
    Case fn;
  };
  const std::vector<Entry> entries{
      {"matmul", kLayerTol, case_matmul},
      {"linear", kLayerTol, [](Rng& r) { return case_linear(r, 4, 3, "linear"); }},
      {"layer_norm", kLayerTol, case_layer_norm},
      {"gelu", kLayerTol, case_gelu},
      {"relu", kLayerTol, case_relu},
      {"temporal_mixer", kLayerTol, case_temporal},
      {"spatial_structured_mean", kLayerTol, [](Rng& r) { return case_structured(r, Aggregation::mean); }},
      {"spatial_structured_sum", kLayerTol, [](Rng& r) { return case_structured(r, Aggregation::sum); }},
      {"spatial_basic", kLayerTol, case_basic},
      {"context_fusion", kLayerTol, case_fusion},
      {"output_head", kLayerTol, [](Rng& r) { return case_linear(r, 8, 12, "output_head"); }},
      {"piencoder_total_loss", kModelTol, case_piencoder},
      {"premixer_structured", kModelTol,
       [](Rng& r) { return case_premixer(r, SpatialMode::structured, {}, Aggregation::mean); }},
      {"premixer_basic", kModelTol,
       [](Rng& r) {
         Ablations a;
         a.no_context = true;
         return case_premixer(r, SpatialMode::basic, a, Aggregation::mean);
       }},
      {"premixer_ablated_sum", kModelTol,
       [](Rng& r) {
         Ablations a;
         a.no_pretrain = true;
         a.no_stpe = true;
         return case_premixer(r, SpatialMode::structured, a, Aggregation::sum);
       }},
  };
  std::vector<GradRow> rows;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    GradRow row{entries[e].name, 0.0, entries[e].tol, seeds, 0, false};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(1000 + s, e);
      GradCheckResult r = entries[e].fn(rng);
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
      row.checked += r.checked;
    }
    row.pass = row.max_rel_error < row.tolerance;
    rows.push_back(row);
  }
  return rows;
}

std::string gradcheck_table(const std::vector<GradRow>& rows) {
  std::string out = "check                      seeds  probes   max_rel_err  tol      result\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-26s %5zu %7zu   %.3e    %.0e    %s\n", r.name.c_str(), r.seeds, r.checked,
                  r.max_rel_error, r.tolerance, r.pass ? "PASS" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace premixer
