#pragma once

#include <string>
#include <vector>

#include "premixer/rng.hpp"
#include "premixer/tensor.hpp"

namespace premixer {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
  std::size_t size() const { return value.size(); }
};

std::size_t count_parameters(const std::vector<Parameter*>& params);

// ---------------------------------------------------------------------------
// Elementwise activations. The *_backward functions take the forward input
// and the upstream gradient and return the input gradient.

double gelu(double x);
double gelu_grad(double x);
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

double sigmoid(double x);

/// Row-wise softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);

// ---------------------------------------------------------------------------

/// Inverted dropout. In training mode each element survives with
/// probability 1-p and is scaled by 1/(1-p); `mask` receives the per-element
/// multiplier so the backward pass is dy ⊙ mask. Evaluation mode (or p == 0)
/// returns x unchanged and leaves `mask` empty.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training, Tensor* mask = nullptr);
Tensor dropout_backward(const Tensor& dy, const Tensor& mask);

// ---------------------------------------------------------------------------

/// Fully connected layer on row vectors: y = x·W + b with W stored [in × out].
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng);

  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }
  bool has_bias() const { return has_bias_; }

  /// x is [rows × in] (leading axes fold into rows); returns [rows × out].
  Tensor forward(const Tensor& x) const;
  /// Accumulates dW, db and returns dx.
  Tensor backward(const Tensor& x, const Tensor& dy);
  /// Accumulates dW, db only (input gradient not needed).
  void backward_params(const Tensor& x, const Tensor& dy);

  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  Parameter bias;

 private:
  bool has_bias_ = false;
};

struct LayerNormCache {
  Tensor normalized;          // x̂, same shape as the input
  std::vector<double> rstd;   // 1/sqrt(var + eps) per row
};

/// Layer normalisation over the last axis followed by a per-feature affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache = nullptr);

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t features, double eps = 1e-5);

  Tensor forward(const Tensor& x, LayerNormCache* cache = nullptr) const;
  Tensor backward(const LayerNormCache& cache, const Tensor& dy);
  void collect(std::vector<Parameter*>& out);

  Parameter gamma;
  Parameter beta;
  double eps = 1e-5;
};

}  // namespace premixer
