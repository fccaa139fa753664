#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace premixer {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// Shapes are lists of positive extents and the flat buffer always holds
/// exactly product(shape) values. There are no strided views; reshaping is a
/// metadata change on a contiguous buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D interpretation: all leading axes fold into rows.
  std::size_t rows() const;
  std::size_t cols() const;

  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double* row(std::size_t r) { return data_.data() + r * cols(); }
  const double* row(std::size_t r) const { return data_.data() + r * cols(); }

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double value);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// True when shapes match and every element has the identical bit pattern.
bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
void require_rank(const Tensor& t, std::size_t rank, const char* what);

// GEMM family on rank-2 operands. Every output element accumulates over the
// inner dimension in ascending order, so results do not depend on blocking
// or on the number of worker threads.
Tensor matmul(const Tensor& a, const Tensor& b);     // a[M×K] · b[K×N]
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // aᵀ · b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a · bᵀ
Tensor transpose(const Tensor& a);

// Raw kernel: c[m×n] (+)= a[m×k] · b[k×n], all row-major with the given
// leading strides.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& dst, const Tensor& src);
void axpy(double alpha, const Tensor& x, Tensor& y);

// Broadcast-add a row vector (length cols) to every row.
void add_row_inplace(Tensor& x, const Tensor& row);
// Column sums of a rows×cols view, i.e. the gradient of a broadcast row add.
Tensor column_sums(const Tensor& x);

}  // namespace premixer
