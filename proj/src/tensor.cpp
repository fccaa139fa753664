#include "premixer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "premixer/error.hpp"
#include "premixer/parallel.hpp"

namespace premixer {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + shape_str(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " values, got " + std::to_string(data_.size()));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data_);
  shape_.clear();
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

// ---------------------------------------------------------------------------
// GEMM
//
// B is packed into NR-wide column panels of KC rows; a 6×8 register tile of C
// is loaded, updated for every k of the panel in ascending order and stored.
// Since the tile is reloaded rather than restarted at each KC block, every
// element sees the plain sequential sum over k.

namespace {

constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 8;
constexpr std::size_t kKC = 256;

typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

inline void store4(double* p, v4d v) { __builtin_memcpy(p, &v, sizeof(v)); }

// Full 6×8 tile: twelve 4-wide accumulators stay in registers.
inline void tile_6x8(std::size_t kc, const double* a, std::size_t lda, const double* bp, double* c,
                     std::size_t ldc, std::size_t ncols, bool load) {
  v4d acc[kMR][2];
  if (load && ncols == kNR) {
    for (std::size_t r = 0; r < kMR; ++r) {
      acc[r][0] = load4(c + r * ldc);
      acc[r][1] = load4(c + r * ldc + 4);
    }
  } else {
    double tmp[kNR];
    for (std::size_t r = 0; r < kMR; ++r) {
      for (std::size_t j = 0; j < kNR; ++j) tmp[j] = (load && j < ncols) ? c[r * ldc + j] : 0.0;
      acc[r][0] = load4(tmp);
      acc[r][1] = load4(tmp + 4);
    }
  }
  for (std::size_t k = 0; k < kc; ++k) {
    const v4d b0 = load4(bp + k * kNR);
    const v4d b1 = load4(bp + k * kNR + 4);
    for (std::size_t r = 0; r < kMR; ++r) {
      const double x = a[r * lda + k];
      acc[r][0] += x * b0;
      acc[r][1] += x * b1;
    }
  }
  if (ncols == kNR) {
    for (std::size_t r = 0; r < kMR; ++r) {
      store4(c + r * ldc, acc[r][0]);
      store4(c + r * ldc + 4, acc[r][1]);
    }
  } else {
    double tmp[kNR];
    for (std::size_t r = 0; r < kMR; ++r) {
      store4(tmp, acc[r][0]);
      store4(tmp + 4, acc[r][1]);
      for (std::size_t j = 0; j < ncols; ++j) c[r * ldc + j] = tmp[j];
    }
  }
}

inline void tile_1x8(std::size_t kc, const double* a, const double* bp, double* c, std::size_t ncols,
                     bool load) {
  double tmp[kNR];
  for (std::size_t j = 0; j < kNR; ++j) tmp[j] = (load && j < ncols) ? c[j] : 0.0;
  v4d acc0 = load4(tmp), acc1 = load4(tmp + 4);
  for (std::size_t k = 0; k < kc; ++k) {
    const double x = a[k];
    acc0 += x * load4(bp + k * kNR);
    acc1 += x * load4(bp + k * kNR + 4);
  }
  store4(tmp, acc0);
  store4(tmp + 4, acc1);
  for (std::size_t j = 0; j < ncols; ++j) c[j] = tmp[j];
}

void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k, const double* a,
               std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
               bool accumulate) {
  std::vector<double> panel(kKC * kNR);
  for (std::size_t k0 = 0; k0 < k; k0 += kKC) {
    const std::size_t kc = std::min(kKC, k - k0);
    const bool load = accumulate || k0 > 0;
    for (std::size_t j0 = 0; j0 < n; j0 += kNR) {
      const std::size_t nc = std::min(kNR, n - j0);
      for (std::size_t kk = 0; kk < kc; ++kk) {
        const double* src = b + (k0 + kk) * ldb + j0;
        double* dst = panel.data() + kk * kNR;
        for (std::size_t j = 0; j < kNR; ++j) dst[j] = j < nc ? src[j] : 0.0;
      }
      std::size_t i = row_begin;
      for (; i + kMR <= row_end; i += kMR)
        tile_6x8(kc, a + i * lda + k0, lda, panel.data(), c + i * ldc + j0, ldc, nc, load);
      for (; i < row_end; ++i) tile_1x8(kc, a + i * lda + k0, panel.data(), c + i * ldc + j0, nc, load);
    }
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    return;
  }
  // Chunks of 264 rows keep the per-thread panel packing amortised.
  const std::size_t blocks = (m + 263) / 264;
  parallel_for(blocks, 1, [&](std::size_t b0, std::size_t b1) {
    gemm_rows(b0 * 264, std::min(m, b1 * 264), n, k, a, lda, b, ldb, c, ldc, accumulate);
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  gemm(a.dim(0), b.dim(1), a.dim(1), a.ptr(), a.dim(1), b.ptr(), b.dim(1), c.ptr(), c.dim(1), false);
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor t({c, r});
  constexpr std::size_t kB = 32;
  for (std::size_t i0 = 0; i0 < r; i0 += kB)
    for (std::size_t j0 = 0; j0 < c; j0 += kB)
      for (std::size_t i = i0; i < std::min(r, i0 + kB); ++i)
        for (std::size_t j = j0; j < std::min(c, j0 + kB); ++j) t[j * r + i] = a[i * c + j];
  return t;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("matmul_tn: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  return matmul(transpose(a), b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  return matmul(a, transpose(b));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size())
    throw ShapeError("add_inplace: shape mismatch " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  if (x.size() != y.size())
    throw ShapeError("axpy: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

void add_row_inplace(Tensor& x, const Tensor& row) {
  const std::size_t c = x.cols();
  if (row.size() != c)
    throw ShapeError("add_row: row of " + std::to_string(row.size()) + " values for " + std::to_string(c) +
                     " columns");
  const std::size_t r = x.rows();
  for (std::size_t i = 0; i < r; ++i) {
    double* xr = x.row(i);
    for (std::size_t j = 0; j < c; ++j) xr[j] += row[j];
  }
}

Tensor column_sums(const Tensor& x) {
  const std::size_t c = x.cols(), r = x.rows();
  Tensor out({c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.row(i);
    for (std::size_t j = 0; j < c; ++j) out[j] += xr[j];
  }
  return out;
}

}  // namespace premixer
