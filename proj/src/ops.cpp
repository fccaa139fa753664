#include "premixer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "premixer/error.hpp"

namespace premixer {

std::size_t count_parameters(const std::vector<Parameter*>& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->size();
  return n;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = gelu(v);
  return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "gelu_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= gelu_grad(x[i]);
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "relu_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  return dx;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor softmax_rows(const Tensor& x) {
  Tensor y = x;
  const std::size_t r = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double* row = y.row(i);
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  return y;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training, Tensor* mask) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout rate must be in [0, 1), got " + std::to_string(p));
  if (mask) *mask = Tensor();
  if (!training || p == 0.0) return x;
  Tensor m(x.shape());
  const double keep = 1.0 / (1.0 - p);
  for (double& v : m.data()) v = rng.uniform() < p ? 0.0 : keep;
  Tensor y = hadamard(x, m);
  if (mask) *mask = std::move(m);
  return y;
}

Tensor dropout_backward(const Tensor& dy, const Tensor& mask) {
  if (mask.empty()) return dy;
  return hadamard(dy, mask);
}

// ---------------------------------------------------------------------------

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng)
    : has_bias_(bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w({in, out});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  weight = Parameter(name + ".weight", std::move(w));
  if (bias) {
    Tensor b({out});
    for (double& v : b.data()) v = rng.uniform(-bound, bound);
    this->bias = Parameter(name + ".bias", std::move(b));
  }
}

Tensor Linear::forward(const Tensor& x) const {
  const std::size_t in = in_features(), out = out_features();
  if (x.cols() != in)
    throw ShapeError(weight.name + ": expected " + std::to_string(in) + " input features, got " +
                     shape_str(x.shape()));
  const std::size_t rows = x.rows();
  Tensor y({rows, out});
  gemm(rows, out, in, x.ptr(), in, weight.value.ptr(), out, y.ptr(), out, false);
  if (has_bias_) add_row_inplace(y, bias.value);
  return y;
}

void Linear::backward_params(const Tensor& x, const Tensor& dy) {
  const std::size_t in = in_features(), out = out_features();
  const std::size_t rows = x.rows();
  if (dy.rows() != rows || dy.cols() != out)
    throw ShapeError(weight.name + ": upstream gradient " + shape_str(dy.shape()) + " does not match output");
  Tensor xt = transpose(x.reshaped({rows, in}));
  gemm(in, out, rows, xt.ptr(), rows, dy.ptr(), out, weight.grad.ptr(), out, true);
  if (has_bias_) add_inplace(bias.grad, column_sums(dy));
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy) {
  backward_params(x, dy);
  const std::size_t in = in_features(), out = out_features();
  const std::size_t rows = x.rows();
  Tensor wt = transpose(weight.value);
  Tensor dx({rows, in});
  gemm(rows, in, out, dy.ptr(), out, wt.ptr(), in, dx.ptr(), in, false);
  return dx;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, LayerNormCache* cache) {
  const std::size_t f = x.cols();
  if (f < 2) throw ShapeError("layer_norm: normalised axis must have at least 2 features, got " + shape_str(x.shape()));
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  if (gamma.size() != f || beta.size() != f) throw ShapeError("layer_norm: affine parameters do not match feature axis");
  const std::size_t rows = x.rows();
  Tensor xhat(x.shape());
  std::vector<double> rstd(rows);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.row(r);
    double mean = 0.0;
    for (std::size_t j = 0; j < f; ++j) mean += xr[j];
    mean /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t j = 0; j < f; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(f);
    const double s = 1.0 / std::sqrt(var + eps);
    rstd[r] = s;
    double* hr = xhat.row(r);
    double* yr = y.row(r);
    for (std::size_t j = 0; j < f; ++j) {
      hr[j] = (xr[j] - mean) * s;
      yr[j] = hr[j] * gamma[j] + beta[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

LayerNorm::LayerNorm(const std::string& name, std::size_t features, double eps_)
    : gamma(name + ".gamma", Tensor({features}, 1.0)), beta(name + ".beta", Tensor({features}, 0.0)), eps(eps_) {}

Tensor LayerNorm::forward(const Tensor& x, LayerNormCache* cache) const {
  return layer_norm(x, gamma.value, beta.value, eps, cache);
}

Tensor LayerNorm::backward(const LayerNormCache& cache, const Tensor& dy) {
  const Tensor& xhat = cache.normalized;
  require_same_shape(xhat, dy, "layer_norm backward");
  const std::size_t rows = xhat.rows(), f = xhat.cols();
  const double inv_f = 1.0 / static_cast<double>(f);
  Tensor dx(xhat.shape());
  std::vector<double> g(f);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* hr = xhat.row(r);
    const double* dr = dy.row(r);
    double sum_g = 0.0, sum_gh = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      gamma.grad[j] += dr[j] * hr[j];
      beta.grad[j] += dr[j];
      g[j] = dr[j] * gamma.value[j];
      sum_g += g[j];
      sum_gh += g[j] * hr[j];
    }
    double* xr = dx.row(r);
    const double s = cache.rstd[r];
    for (std::size_t j = 0; j < f; ++j) xr[j] = s * (g[j] - inv_f * sum_g - hr[j] * inv_f * sum_gh);
  }
  return dx;
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

}  // namespace premixer
