#pragma once

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "prospec/tensor.hpp"

namespace prospec {

// Reverse-mode tape. A fresh tape is built per training step; ops append
// nodes in topological order and backward() walks them in reverse,
// accumulating adjoints into the bound parameter tensors.
//
// Op set: matmul, add (incl. row broadcast), sub, mul, min, scalar affine,
// exp, log, tanh, softplus, sum, mean, row_sum, slice_cols, concat_cols,
// l2_normalize_rows, mul_by_scalar_node, conv2d, leaves/detach.
class Tape {
 public:
  using Val = int;

  struct ConvMeta {
    int in_c = 0, h = 0, w = 0;
    int out_c = 0, kh = 0, kw = 0;
    int stride = 1;
    int out_h() const { return (h - kh) / stride + 1; }
    int out_w() const { return (w - kw) / stride + 1; }
  };

  struct BackwardReport {
    bool reached_parameter = false;  // false => loss was detached from all trainable leaves
  };

  // ---- leaves ----

  // Parameter leaf: gradients accumulate into t.grad() when t.requires_grad
  // and trainable is true; otherwise the tensor is treated as a constant.
  Val use(Tensor& t, bool trainable = true) {
    Node n;
    n.op = Op::Leaf;
    n.value = t;  // copy; parameters are small relative to activations
    n.bound = (trainable && t.requires_grad) ? &t : nullptr;
    n.needs_grad = n.bound != nullptr;
    return push(std::move(n));
  }

  // Constant leaf owning its value (batches, targets, noise).
  Val constant(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(t);
    return push(std::move(n));
  }

  // Re-enter a computed value as a constant (stop-gradient).
  Val detach(Val x) { return constant(value(x)); }

  // ---- accessors ----

  const Tensor& value(Val v) const { return nodes_[v].value; }

  double scalar(Val v) const { return nodes_[v].value.item(); }

  size_t node_count() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // ---- ops ----

  Val matmul(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) throw std::invalid_argument("tape matmul: inner dimensions differ");
    Node n = binary(Op::MatMul, a, b, Tensor(A.rows(), B.cols()));
    gemm(false, false, A.rows(), B.cols(), A.cols(), 1.0, A.data(), A.cols(), B.data(), B.cols(), 0.0,
         n.value.data(), n.value.cols());
    return push(std::move(n));
  }

  Val add(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.same_shape(B)) {
      Node n = binary(Op::Add, a, b, A);
      for (size_t i = 0; i < n.value.size(); ++i) n.value[i] += B[i];
      return push(std::move(n));
    }
    if (B.rows() == 1 && B.cols() == A.cols()) {  // row broadcast (bias)
      Node n = binary(Op::AddRow, a, b, A);
      for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) n.value.at(i, j) += B.at(0, j);
      return push(std::move(n));
    }
    throw std::invalid_argument("tape add: shape mismatch");
  }

  Val sub(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw std::invalid_argument("tape sub: shape mismatch");
    Node n = binary(Op::Sub, a, b, A);
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] -= B[i];
    return push(std::move(n));
  }

  Val mul(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw std::invalid_argument("tape mul: shape mismatch");
    Node n = binary(Op::Mul, a, b, A);
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] *= B[i];
    return push(std::move(n));
  }

  // Elementwise min; ties route the subgradient to the first argument.
  Val min(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw std::invalid_argument("tape min: shape mismatch");
    Node n = binary(Op::Min, a, b, A);
    for (size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::min(A[i], B[i]);
    return push(std::move(n));
  }

  // y = scale * x + shift, elementwise with scalar coefficients.
  Val affine(Val x, double scale, double shift) {
    Node n = unary(Op::Affine, x, value(x));
    n.s0 = scale;
    n.s1 = shift;
    for (auto& v : n.value.vec()) v = scale * v + shift;
    return push(std::move(n));
  }

  // y = s * x where s is a 1x1 node (e.g. learned temperature).
  Val mul_scalar(Val x, Val s) {
    if (value(s).size() != 1) throw std::invalid_argument("tape mul_scalar: s must be 1x1");
    Node n = binary(Op::MulScalarNode, x, s, value(x));
    const double sv = value(s).item();
    for (auto& v : n.value.vec()) v *= sv;
    return push(std::move(n));
  }

  Val exp(Val x) {
    Node n = unary(Op::Exp, x, value(x));
    for (auto& v : n.value.vec()) v = std::exp(v);
    return push(std::move(n));
  }

  Val log(Val x) {
    Node n = unary(Op::Log, x, value(x));
    for (auto& v : n.value.vec()) {
      if (v <= 0.0) throw std::domain_error("tape log: non-positive input");
      v = std::log(v);
    }
    return push(std::move(n));
  }

  Val tanh(Val x) {
    Node n = unary(Op::Tanh, x, value(x));
    for (auto& v : n.value.vec()) v = std::tanh(v);
    return push(std::move(n));
  }

  Val softplus(Val x) {
    Node n = unary(Op::Softplus, x, value(x));
    for (auto& v : n.value.vec()) v = softplus_stable(v);
    return push(std::move(n));
  }

  Val sum(Val x) {
    Node n = unary(Op::Sum, x, Tensor(1, 1));
    double s = 0.0;
    for (const double v : value(x).vec()) s += v;
    n.value[0] = s;
    return push(std::move(n));
  }

  Val mean(Val x) {
    if (value(x).size() == 0) throw std::invalid_argument("tape mean: empty tensor");
    Node n = unary(Op::Mean, x, Tensor(1, 1));
    double s = 0.0;
    for (const double v : value(x).vec()) s += v;
    n.value[0] = s / static_cast<double>(value(x).size());
    return push(std::move(n));
  }

  // [B,n] -> [B,1], sum along each row.
  Val row_sum(Val x) {
    const Tensor& X = value(x);
    Node n = unary(Op::RowSum, x, Tensor(X.rows(), 1));
    for (int i = 0; i < X.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < X.cols(); ++j) s += X.at(i, j);
      n.value.at(i, 0) = s;
    }
    return push(std::move(n));
  }

  // Columns [c0, c1).
  Val slice_cols(Val x, int c0, int c1) {
    const Tensor& X = value(x);
    if (c0 < 0 || c1 < c0 || c1 > X.cols()) throw std::invalid_argument("tape slice_cols: bad range");
    Node n = unary(Op::SliceCols, x, Tensor(X.rows(), c1 - c0));
    n.i0 = c0;
    n.i1 = c1;
    for (int i = 0; i < X.rows(); ++i)
      std::memcpy(n.value.data() + static_cast<size_t>(i) * (c1 - c0),
                  X.data() + static_cast<size_t>(i) * X.cols() + c0, sizeof(double) * (c1 - c0));
    return push(std::move(n));
  }

  Val concat_cols(Val a, Val b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rows() != B.rows()) throw std::invalid_argument("tape concat_cols: row mismatch");
    Node n = binary(Op::ConcatCols, a, b, Tensor(A.rows(), A.cols() + B.cols()));
    const int cols = A.cols() + B.cols();
    for (int i = 0; i < A.rows(); ++i) {
      double* dst = n.value.data() + static_cast<size_t>(i) * cols;
      std::memcpy(dst, A.data() + static_cast<size_t>(i) * A.cols(), sizeof(double) * A.cols());
      if (B.cols() > 0)
        std::memcpy(dst + A.cols(), B.data() + static_cast<size_t>(i) * B.cols(), sizeof(double) * B.cols());
    }
    return push(std::move(n));
  }

  Val transpose(Val x) {
    Node n = unary(Op::Transpose, x, value(x).transposed());
    return push(std::move(n));
  }

  // Row-wise x / (||x|| + eps).
  Val l2_normalize_rows(Val x, double eps = 1e-8) {
    const Tensor& X = value(x);
    Node n = unary(Op::L2NormRows, x, X);
    n.s0 = eps;
    for (int i = 0; i < X.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < X.cols(); ++j) s += X.at(i, j) * X.at(i, j);
      const double norm = std::sqrt(s);
      const double inv = 1.0 / (norm + eps);
      for (int j = 0; j < X.cols(); ++j) n.value.at(i, j) = X.at(i, j) * inv;
    }
    return push(std::move(n));
  }

  // x: [B, in_c*h*w], w: [out_c, in_c*kh*kw], b: [1, out_c].
  // Output [B, out_c*oh*ow], valid padding.
  Val conv2d(Val x, Val w, Val b, const ConvMeta& meta) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    const Tensor& Bv = value(b);
    const int oh = meta.out_h(), ow = meta.out_w();
    if (X.cols() != meta.in_c * meta.h * meta.w) throw std::invalid_argument("conv2d: input size mismatch");
    if (W.rows() != meta.out_c || W.cols() != meta.in_c * meta.kh * meta.kw)
      throw std::invalid_argument("conv2d: weight size mismatch");
    if (Bv.rows() != 1 || Bv.cols() != meta.out_c) throw std::invalid_argument("conv2d: bias size mismatch");
    Node n;
    n.op = Op::Conv2d;
    n.a = x;
    n.b = w;
    n.c = b;
    n.conv = meta;
    n.needs_grad = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    n.value = Tensor(X.rows(), meta.out_c * oh * ow);
    for (int img = 0; img < X.rows(); ++img) {
      const double* xp = X.data() + static_cast<size_t>(img) * X.cols();
      double* yp = n.value.data() + static_cast<size_t>(img) * n.value.cols();
      for (int oc = 0; oc < meta.out_c; ++oc) {
        const double* wp = W.data() + static_cast<size_t>(oc) * W.cols();
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double acc = Bv[oc];
            for (int ic = 0; ic < meta.in_c; ++ic)
              for (int ky = 0; ky < meta.kh; ++ky)
                for (int kx = 0; kx < meta.kw; ++kx) {
                  const int iy = oy * meta.stride + ky;
                  const int ix = ox * meta.stride + kx;
                  acc += wp[(ic * meta.kh + ky) * meta.kw + kx] * xp[(ic * meta.h + iy) * meta.w + ix];
                }
            yp[(oc * oh + oy) * ow + ox] = acc;
          }
      }
    }
    return push(std::move(n));
  }

  // ---- convenience compositions ----

  Val square(Val x) { return mul(x, x); }
  Val neg(Val x) { return affine(x, -1.0, 0.0); }

  // ---- backward ----

  // Seeds d(loss)/d(loss) = 1 and accumulates adjoints into every bound
  // parameter's grad buffer. Repeated calls accumulate; callers zero the
  // parameter grads between optimizer steps.
  BackwardReport backward(Val loss) {
    if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    BackwardReport report;
    if (!nodes_[loss].needs_grad) {
      last_backward_detached_ = true;
      return report;  // detached graph: grads stay zero
    }
    last_backward_detached_ = false;
    report.reached_parameter = true;
    for (auto& n : nodes_) n.grad.clear();
    nodes_[loss].grad.assign(1, 1.0);
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      propagate(n);
      if (n.bound != nullptr) {
        auto& g = n.bound->grad();
        if (g.size() != n.grad.size()) throw std::invalid_argument("backward: parameter shape changed");
        for (size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
    return report;
  }

  bool last_backward_detached() const { return last_backward_detached_; }

 private:
  enum class Op : uint8_t {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Sub,
    Mul,
    Min,
    Affine,
    MulScalarNode,
    Exp,
    Log,
    Tanh,
    Softplus,
    Sum,
    Mean,
    RowSum,
    SliceCols,
    ConcatCols,
    Transpose,
    L2NormRows,
    Conv2d,
  };

  struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1, c = -1;
    Tensor value;
    std::vector<double> grad;  // adjoint, same layout as value
    Tensor* bound = nullptr;
    bool needs_grad = false;
    double s0 = 0.0, s1 = 0.0;
    int i0 = 0, i1 = 0;
    ConvMeta conv;
  };

  static double softplus_stable(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
  }

  Node unary(Op op, Val x, Tensor init) {
    Node n;
    n.op = op;
    n.a = x;
    n.value = std::move(init);
    n.needs_grad = nodes_[x].needs_grad;
    return n;
  }

  Node binary(Op op, Val a, Val b, Tensor init) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(init);
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return n;
  }

  Val push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Val>(nodes_.size() - 1);
  }

  std::vector<double>& grad_of(int idx) {
    Node& n = nodes_[idx];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  bool wants(int idx) const { return idx >= 0 && nodes_[idx].needs_grad; }

  void propagate(Node& n) {
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        if (wants(n.a)) {  // dA += G * B^T
          auto& ga = grad_of(n.a);
          gemm(false, true, A.rows(), A.cols(), B.cols(), 1.0, g.data(), B.cols(), B.data(), B.cols(),
               1.0, ga.data(), A.cols());
        }
        if (wants(n.b)) {  // dB += A^T * G
          auto& gb = grad_of(n.b);
          gemm(true, false, B.rows(), B.cols(), A.rows(), 1.0, A.data(), A.cols(), g.data(), B.cols(),
               1.0, gb.data(), B.cols());
        }
        break;
      }
      case Op::Add: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(n.b)) {
          auto& gb = grad_of(n.b);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
        break;
      }
      case Op::AddRow: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(n.b)) {
          auto& gb = grad_of(n.b);
          const int cols = n.value.cols();
          const int rows = n.value.rows();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) gb[j] += g[static_cast<size_t>(i) * cols + j];
        }
        break;
      }
      case Op::Sub: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (wants(n.b)) {
          auto& gb = grad_of(n.b);
          for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (wants(n.b)) {
          auto& gb = grad_of(n.b);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
        break;
      }
      case Op::Min: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        for (size_t i = 0; i < g.size(); ++i) {
          const bool left = A[i] <= B[i];
          if (left && wants(n.a)) grad_of(n.a)[i] += g[i];
          if (!left && wants(n.b)) grad_of(n.b)[i] += g[i];
        }
        break;
      }
      case Op::Affine: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.s0;
        }
        break;
      }
      case Op::MulScalarNode: {
        const Tensor& X = nodes_[n.a].value;
        const double sv = nodes_[n.b].value.item();
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
        }
        if (wants(n.b)) {
          double acc = 0.0;
          for (size_t i = 0; i < g.size(); ++i) acc += g[i] * X[i];
          grad_of(n.b)[0] += acc;
        }
        break;
      }
      case Op::Exp: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
        }
        break;
      }
      case Op::Log: {
        if (wants(n.a)) {
          const Tensor& X = nodes_[n.a].value;
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / X[i];
        }
        break;
      }
      case Op::Tanh: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        }
        break;
      }
      case Op::Softplus: {
        if (wants(n.a)) {
          const Tensor& X = nodes_[n.a].value;
          auto& ga = grad_of(n.a);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (1.0 + std::exp(-X[i]));
        }
        break;
      }
      case Op::Sum: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (auto& v : ga) v += g[0];
        }
        break;
      }
      case Op::Mean: {
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          const double s = g[0] / static_cast<double>(ga.size());
          for (auto& v : ga) v += s;
        }
        break;
      }
      case Op::RowSum: {
        if (wants(n.a)) {
          const Tensor& X = nodes_[n.a].value;
          auto& ga = grad_of(n.a);
          for (int i = 0; i < X.rows(); ++i)
            for (int j = 0; j < X.cols(); ++j) ga[static_cast<size_t>(i) * X.cols() + j] += g[i];
        }
        break;
      }
      case Op::SliceCols: {
        if (wants(n.a)) {
          const Tensor& X = nodes_[n.a].value;
          auto& ga = grad_of(n.a);
          const int w = n.i1 - n.i0;
          for (int i = 0; i < X.rows(); ++i)
            for (int j = 0; j < w; ++j)
              ga[static_cast<size_t>(i) * X.cols() + n.i0 + j] += g[static_cast<size_t>(i) * w + j];
        }
        break;
      }
      case Op::ConcatCols: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        const int cols = n.value.cols();
        if (wants(n.a)) {
          auto& ga = grad_of(n.a);
          for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < A.cols(); ++j)
              ga[static_cast<size_t>(i) * A.cols() + j] += g[static_cast<size_t>(i) * cols + j];
        }
        if (wants(n.b)) {
          auto& gb = grad_of(n.b);
          for (int i = 0; i < B.rows(); ++i)
            for (int j = 0; j < B.cols(); ++j)
              gb[static_cast<size_t>(i) * B.cols() + j] += g[static_cast<size_t>(i) * cols + A.cols() + j];
        }
        break;
      }
      case Op::Transpose: {
        if (wants(n.a)) {
          const Tensor& X = nodes_[n.a].value;
          auto& ga = grad_of(n.a);
          for (int i = 0; i < X.rows(); ++i)
            for (int j = 0; j < X.cols(); ++j)
              ga[static_cast<size_t>(i) * X.cols() + j] += g[static_cast<size_t>(j) * X.rows() + i];
        }
        break;
      }
      case Op::L2NormRows: {
        if (wants(n.a)) {
          const Tensor& X = nodes_[n.a].value;
          auto& ga = grad_of(n.a);
          const double eps = n.s0;
          for (int i = 0; i < X.rows(); ++i) {
            double norm2 = 0.0, dot = 0.0;
            for (int j = 0; j < X.cols(); ++j) {
              const double xv = X.at(i, j);
              norm2 += xv * xv;
              dot += g[static_cast<size_t>(i) * X.cols() + j] * xv;
            }
            const double norm = std::sqrt(norm2);
            if (norm < 1e-12) continue;  // flat at the origin under the eps guard
            const double inv = 1.0 / (norm + eps);
            const double coef = dot / (norm * (norm + eps) * (norm + eps));
            for (int j = 0; j < X.cols(); ++j)
              ga[static_cast<size_t>(i) * X.cols() + j] +=
                  g[static_cast<size_t>(i) * X.cols() + j] * inv - coef * X.at(i, j);
          }
        }
        break;
      }
      case Op::Conv2d: {
        const Tensor& X = nodes_[n.a].value;
        const Tensor& W = nodes_[n.b].value;
        const ConvMeta& m = n.conv;
        const int oh = m.out_h(), ow = m.out_w();
        const bool wx = wants(n.a), ww = wants(n.b), wb = wants(n.c);
        auto* gx = wx ? &grad_of(n.a) : nullptr;
        auto* gw = ww ? &grad_of(n.b) : nullptr;
        auto* gb = wb ? &grad_of(n.c) : nullptr;
        for (int img = 0; img < X.rows(); ++img) {
          const double* xp = X.data() + static_cast<size_t>(img) * X.cols();
          const double* gp = g.data() + static_cast<size_t>(img) * n.value.cols();
          for (int oc = 0; oc < m.out_c; ++oc) {
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox) {
                const double gv = gp[(oc * oh + oy) * ow + ox];
                if (gv == 0.0) continue;
                if (wb) (*gb)[oc] += gv;
                for (int ic = 0; ic < m.in_c; ++ic)
                  for (int ky = 0; ky < m.kh; ++ky)
                    for (int kx = 0; kx < m.kw; ++kx) {
                      const int iy = oy * m.stride + ky;
                      const int ix = ox * m.stride + kx;
                      const size_t xi = static_cast<size_t>(img) * X.cols() + (ic * m.h + iy) * m.w + ix;
                      const size_t wi = static_cast<size_t>(oc) * W.cols() + (ic * m.kh + ky) * m.kw + kx;
                      if (wx) (*gx)[xi] += gv * W[wi];
                      if (ww) (*gw)[wi] += gv * xp[(ic * m.h + iy) * m.w + ix];
                    }
              }
          }
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool last_backward_detached_ = false;
};

}  // namespace prospec
