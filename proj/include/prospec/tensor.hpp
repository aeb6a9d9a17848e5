#pragma once

#include <cblas.h>

#include <cassert>
#include <cmath>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "prospec/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace prospec {

inline void ensure_blas_single_threaded() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN.
// Gradient storage lives on the tensor itself so that parameters are plain
// Tensors with requires_grad set.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
    assert(rows >= 0 && cols >= 0);
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, double v) {
    Tensor t(r, c);
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return full(1, 1, v); }

  static Tensor from_row(const std::vector<double>& v) {
    Tensor t(1, static_cast<int>(v.size()));
    t.data_ = v;
    return t;
  }

  static Tensor randn(int r, int c, Rng& rng, double stddev = 1.0) {
    Tensor t(r, c);
    for (auto& x : t.data_) x = rng.normal(0.0, stddev);
    return t;
  }

  static Tensor uniform(int r, int c, Rng& rng, double lo, double hi) {
    Tensor t(r, c);
    for (auto& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }

  static Tensor identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar");
    return data_[0];
  }

  Tensor row(int r) const {
    Tensor out(1, cols_);
    std::memcpy(out.data(), data() + static_cast<size_t>(r) * cols_, sizeof(double) * cols_);
    return out;
  }

  void set_row(int r, const Tensor& src) {
    assert(src.rows_ == 1 && src.cols_ == cols_);
    std::memcpy(data() + static_cast<size_t>(r) * cols_, src.data(), sizeof(double) * cols_);
  }

  Tensor transposed() const {
    Tensor out(cols_, rows_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out.at(j, i) = at(i, j);
    return out;
  }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  bool all_finite() const {
    for (const double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (const double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

  double norm2() const {
    double s = 0.0;
    for (const double x : data_) s += x * x;
    return std::sqrt(s);
  }

  // Gradient bookkeeping. grad is lazily sized; zero_grad keeps capacity.
  bool requires_grad = false;

  std::vector<double>& grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
    return grad_;
  }
  const std::vector<double>& grad() const { return grad_; }
  bool has_grad() const { return grad_.size() == data_.size(); }
  void zero_grad() { grad_.assign(data_.size(), 0.0); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
  std::vector<double> grad_;
};

// C = alpha * op(A) * op(B) + beta * C, row-major.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  ensure_blas_single_threaded();
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0) {
      for (int i = 0; i < m; ++i) std::memset(c + static_cast<size_t>(i) * ldc, 0, sizeof(double) * n);
    } else if (beta != 1.0) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * ldc + j] *= beta;
    }
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline Tensor hcat(const Tensor& a, const Tensor& b) {
  assert(a.rows() == b.rows());
  Tensor out(a.rows(), a.cols() + b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
    for (int j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
  }
  return out;
}

// out = x * w, shapes [m,k] x [k,n].
inline Tensor matmul_plain(const Tensor& x, const Tensor& w) {
  if (x.cols() != w.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Tensor out(x.rows(), w.cols());
  gemm(false, false, x.rows(), w.cols(), x.cols(), 1.0, x.data(), x.cols(), w.data(), w.cols(), 0.0,
       out.data(), out.cols());
  return out;
}

}  // namespace prospec
