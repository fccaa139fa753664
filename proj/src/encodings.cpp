#include "premixer/encodings.hpp"

#include <cmath>

#include "premixer/error.hpp"

namespace premixer {
namespace {

void sinusoid_pairs(double pos, std::size_t pairs, double exponent_scale, double* out) {
  for (std::size_t i = 0; i < pairs; ++i) {
    const double angle = pos / std::pow(10000.0, exponent_scale * static_cast<double>(i));
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
}

}  // namespace

Tensor build_stpe(std::size_t steps, std::size_t nodes, std::size_t d_pe) {
  if (d_pe == 0 || d_pe % 4 != 0)
    throw ParameterError("build_stpe: d_pe must be a positive multiple of 4, got " + std::to_string(d_pe));
  if (steps == 0 || nodes == 0) throw ParameterError("build_stpe: T and N must be at least 1");
  const std::size_t half = d_pe / 2, pairs = d_pe / 4;
  const double scale = 4.0 / static_cast<double>(d_pe);
  std::vector<double> temporal(steps * half), spatial(nodes * half);
  for (std::size_t t = 0; t < steps; ++t) sinusoid_pairs(static_cast<double>(t), pairs, scale, &temporal[t * half]);
  for (std::size_t n = 0; n < nodes; ++n) sinusoid_pairs(static_cast<double>(n), pairs, scale, &spatial[n * half]);
  Tensor u({steps, nodes, d_pe});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t n = 0; n < nodes; ++n) {
      double* dst = &u.at(t, n, 0);
      std::copy(&temporal[t * half], &temporal[t * half] + half, dst);
      std::copy(&spatial[n * half], &spatial[n * half] + half, dst + half);
    }
  return u;
}

Tensor build_temporal_pe(std::size_t steps, std::size_t nodes, std::size_t d_pe) {
  if (d_pe == 0 || d_pe % 2 != 0) throw ParameterError("build_temporal_pe: d_pe must be a positive even number");
  if (steps == 0 || nodes == 0) throw ParameterError("build_temporal_pe: T and N must be at least 1");
  std::vector<double> row(d_pe);
  Tensor u({steps, nodes, d_pe});
  for (std::size_t t = 0; t < steps; ++t) {
    sinusoid_pairs(static_cast<double>(t), d_pe / 2, 2.0 / static_cast<double>(d_pe), row.data());
    for (std::size_t n = 0; n < nodes; ++n) std::copy(row.begin(), row.end(), &u.at(t, n, 0));
  }
  return u;
}

Tensor stpe_spatial_half(const Tensor& stpe) {
  require_rank(stpe, 3, "stpe_spatial_half");
  const std::size_t nodes = stpe.dim(1), d = stpe.dim(2), half = d / 2;
  Tensor s({nodes, half});
  for (std::size_t n = 0; n < nodes; ++n)
    for (std::size_t k = 0; k < half; ++k) s.at(n, k) = stpe.at(0, n, half + k);
  return s;
}

NodeEmbedding::NodeEmbedding(std::size_t nodes, std::size_t d_emb, Rng& rng) {
  if (nodes == 0 || d_emb == 0) throw ConfigError("node embedding: N and d_emb must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_emb));
  Tensor e({nodes, d_emb});
  for (double& v : e.data()) v = rng.uniform(-bound, bound);
  table = Parameter("node_embedding.E", std::move(e));
}

ContextFusion::ContextFusion(std::size_t spatial_width, std::size_t d_emb, std::size_t d_ctx, Rng& rng)
    : proj("context.fuse", spatial_width + d_emb, d_ctx, true, rng), spatial_width_(spatial_width) {}

Tensor ContextFusion::forward(const Tensor& spatial, const Tensor& embedding, Cache* cache) const {
  require_rank(embedding, 2, "fuse_node_context");
  const std::size_t nodes = embedding.dim(0), d_emb = embedding.dim(1);
  const std::size_t ds = spatial.empty() ? 0 : spatial.cols();
  if (ds != spatial_width_ || (ds > 0 && spatial.rows() != nodes))
    throw ShapeError("fuse_node_context: spatial encoding " + shape_str(spatial.shape()) + " does not match " +
                     std::to_string(nodes) + " nodes of width " + std::to_string(spatial_width_));
  Tensor in({nodes, ds + d_emb});
  for (std::size_t n = 0; n < nodes; ++n) {
    if (ds > 0) std::copy(spatial.row(n), spatial.row(n) + ds, in.row(n));
    std::copy(embedding.row(n), embedding.row(n) + d_emb, in.row(n) + ds);
  }
  Tensor pre = proj.forward(in);
  Tensor c = gelu(pre);
  if (cache) {
    cache->input = std::move(in);
    cache->pre = std::move(pre);
  }
  return c;
}

Tensor ContextFusion::backward(const Cache& cache, const Tensor& d_ctx) {
  Tensor dpre = gelu_backward(cache.pre, d_ctx);
  Tensor din = proj.backward(cache.input, dpre);
  const std::size_t nodes = din.rows(), width = din.cols() - spatial_width_;
  Tensor de({nodes, width});
  for (std::size_t n = 0; n < nodes; ++n) std::copy(din.row(n) + spatial_width_, din.row(n) + din.cols(), de.row(n));
  return de;
}

}  // namespace premixer
