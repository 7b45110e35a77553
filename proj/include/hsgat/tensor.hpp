// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major 2-D tensors with a reverse-mode differentiation tape.
//
// Every op is a free function. When any input requires a gradient and a
// Tape is active on the calling thread, the op records a vector-Jacobian
// product on that tape; otherwise it just computes values. Parameters are
// leaf tensors created with Tensor::parameter and live across tapes.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hsgat/error.hpp"

namespace hsgat {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Matrix: " + std::to_string(data_.size()) +
                           " values for shape " + std::to_string(rows) + "x" +
                           std::to_string(cols));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

class Tape;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  Tape* tape = nullptr;  // null for leaves
  std::function<void(const Matrix&)> backward;

  Matrix& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}
  explicit Tensor(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor constant(Matrix value) { return Tensor(std::move(value), false); }
  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor scalar(double v) { return Tensor(Matrix(1, 1, v), false); }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::string shape_str() const { return node_->value.shape_str(); }

  const Matrix& value() const { return node_->value; }
  /// Direct access for optimizers and finite-difference probes.
  Matrix& mutable_value() { return node_->value; }
  double item() const {
    if (rows() != 1 || cols() != 1) throw DimensionError("item() on non-scalar " + shape_str());
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; all zeros when nothing reached this tensor.
  Matrix grad() const {
    if (node_->grad.empty()) return Matrix(rows(), cols());
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Matrix(); }

  /// Deep copy of the value as a new leaf with the same requires_grad flag.
  Tensor clone() const { return Tensor(node_->value, node_->requires_grad); }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of operations. Constructing a Tape makes it the active tape
/// on the current thread until it is destroyed; tapes nest like a stack.
class Tape {
 public:
  Tape() : previous_(current()) { current() = this; }
  ~Tape() { current() = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return current(); }

  void record(const std::shared_ptr<detail::Node>& node) {
    if (done_) throw ContractError("cannot record onto a tape after backward()");
    node->tape = this;
    nodes_.push_back(node);
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return done_; }

  /// Reverse sweep from a scalar loss. Gradients are summed into every
  /// requires_grad tensor reachable from the loss.
  void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw DimensionError("backward() needs a scalar loss, got " + loss.shape_str());
    }
    if (done_) throw ContractError("backward() already called on this tape");
    const auto& root = loss.node();
    if (root->tape != this) throw ContractError("loss was not recorded on this tape");
    done_ = true;
    root->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto& n = **it;
      if (n.grad.empty() || !n.backward) continue;
      n.backward(n.grad);
    }
  }

 private:
  static Tape*& current() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  Tape* previous_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool done_ = false;
};

/// backward() on the tape that recorded `loss`.
inline void backward(const Tensor& loss) {
  Tape* t = loss.node()->tape;
  if (t == nullptr) throw ContractError("loss is not connected to a tape");
  t->backward(loss);
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

/// Wraps a forward value; when recording, attaches `make_backward()`.
template <typename MakeBackward>
Tensor make_result(Matrix value, std::initializer_list<const Tensor*> inputs,
                   MakeBackward&& make_backward) {
  Tensor out(std::move(value), false);
  Tape* tape = Tape::active();
  if (tape != nullptr && any_requires_grad(inputs)) {
    auto& n = *out.node();
    n.requires_grad = true;
    n.backward = make_backward();
    tape->record(out.node());
  }
  return out;
}

[[noreturn]] inline void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a.shape_str() << " and " << b.shape_str();
  throw DimensionError(os.str());
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

inline Broadcast broadcast_kind(const char* op, const Matrix& a, const Matrix& b) {
  if (a.same_shape(b)) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  shape_error(op, a, b);
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

// C += A * B, skipping zero entries of A (bag-of-words features are sparse).
inline void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += A^T * B
inline void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row(i);
    const double* bi = b.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c.row(p);
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

inline Matrix transposed(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

// C += A * B^T
inline void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  gemm_nn_acc(a, transposed(b), c);
}

// C += G^T * A, skipping zero entries of A.
inline void gemm_tn_sparse_rhs_acc(const Matrix& g, const Matrix& a, Matrix& c) {
  Matrix ct(c.cols(), c.rows());
  gemm_tn_acc(a, g, ct);
  for (std::size_t r = 0; r < ct.rows(); ++r)
    for (std::size_t q = 0; q < ct.cols(); ++q) c(q, r) += ct(r, q);
}

inline void check_sorted_segments(const char* op, std::span<const std::size_t> ids) {
  if (!std::is_sorted(ids.begin(), ids.end())) {
    throw ContractError(std::string(op) + ": segment_ids must be sorted ascending");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) detail::shape_error("matmul", av, bv);
  Matrix out(av.rows(), bv.cols());
  detail::gemm_nn_acc(av, bv, out);
  return detail::make_result(std::move(out), {&a, &b}, [a, b] {
    return [a, b](const Matrix& g) {
      if (a.requires_grad()) detail::gemm_nt_acc(g, b.value(), a.node()->grad_buffer());
      if (b.requires_grad()) detail::gemm_tn_acc(a.value(), g, b.node()->grad_buffer());
    };
  });
}

/// a * b^T
inline Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) detail::shape_error("matmul_transposed", av, bv);
  Matrix out(av.rows(), bv.rows());
  detail::gemm_nt_acc(av, bv, out);
  return detail::make_result(std::move(out), {&a, &b}, [a, b] {
    return [a, b](const Matrix& g) {
      if (a.requires_grad()) detail::gemm_nn_acc(g, b.value(), a.node()->grad_buffer());
      // dB = g^T a
      if (b.requires_grad())
        detail::gemm_tn_sparse_rhs_acc(g, a.value(), b.node()->grad_buffer());
    };
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops; `b` may broadcast as a row (1xC), column (Rx1) or scalar.

inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto kind = detail::broadcast_kind("add", a.value(), b.value());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c)
      out(r, c) = av(r, c) + bv[detail::bindex(kind, r, c, av.cols())];
  return detail::make_result(std::move(out), {&a, &b}, [a, b, kind] {
    return [a, b, kind](const Matrix& g) {
      if (a.requires_grad()) {
        auto& ga = a.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.node()->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c)
            gb[detail::bindex(kind, r, c, g.cols())] += g(r, c);
      }
    };
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const auto kind = detail::broadcast_kind("sub", a.value(), b.value());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c)
      out(r, c) = av(r, c) - bv[detail::bindex(kind, r, c, av.cols())];
  return detail::make_result(std::move(out), {&a, &b}, [a, b, kind] {
    return [a, b, kind](const Matrix& g) {
      if (a.requires_grad()) {
        auto& ga = a.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.node()->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c)
            gb[detail::bindex(kind, r, c, g.cols())] -= g(r, c);
      }
    };
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const auto kind = detail::broadcast_kind("mul", a.value(), b.value());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c)
      out(r, c) = av(r, c) * bv[detail::bindex(kind, r, c, av.cols())];
  return detail::make_result(std::move(out), {&a, &b}, [a, b, kind] {
    return [a, b, kind](const Matrix& g) {
      const Matrix& av = a.value();
      const Matrix& bv = b.value();
      const std::size_t cols = g.cols();
      if (a.requires_grad()) {
        auto& ga = a.node()->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c)
            ga(r, c) += g(r, c) * bv[detail::bindex(kind, r, c, cols)];
      }
      if (b.requires_grad()) {
        auto& gb = b.node()->grad_buffer();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c)
            gb[detail::bindex(kind, r, c, cols)] += g(r, c) * av(r, c);
      }
    };
  });
}

inline Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value();
  for (auto& v : out.data()) v *= s;
  return detail::make_result(std::move(out), {&a}, [a, s] {
    return [a, s](const Matrix& g) {
      auto& ga = a.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) detail::shape_error("concat_cols", av, bv);
  const std::size_t ca = av.cols(), cb = bv.cols();
  Matrix out(av.rows(), ca + cb);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.row(r), ca, out.row(r));
    std::copy_n(bv.row(r), cb, out.row(r) + ca);
  }
  return detail::make_result(std::move(out), {&a, &b}, [a, b, ca, cb] {
    return [a, b, ca, cb](const Matrix& g) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        if (a.requires_grad()) {
          double* ga = a.node()->grad_buffer().row(r);
          for (std::size_t c = 0; c < ca; ++c) ga[c] += g(r, c);
        }
        if (b.requires_grad()) {
          double* gb = b.node()->grad_buffer().row(r);
          for (std::size_t c = 0; c < cb; ++c) gb[c] += g(r, ca + c);
        }
      }
    };
  });
}

/// Vertical stack of tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) detail::shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.row(r0));
    r0 += p.rows();
  }
  Tensor result(std::move(out), false);
  Tape* tape = Tape::active();
  const bool needs = std::any_of(parts.begin(), parts.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && needs) {
    auto& n = *result.node();
    n.requires_grad = true;
    n.backward = [parts](const Matrix& g) {
      std::size_t r0 = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          auto& gp = p.node()->grad_buffer();
          const double* src = g.row(r0);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
        }
        r0 += p.rows();
      }
    };
    tape->record(result.node());
  }
  return result;
}

/// Columns [begin, end).
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const Matrix& av = a.value();
  if (begin > end || end > av.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + av.shape_str());
  }
  const std::size_t w = end - begin;
  Matrix out(av.rows(), w);
  for (std::size_t r = 0; r < av.rows(); ++r) std::copy_n(av.row(r) + begin, w, out.row(r));
  return detail::make_result(std::move(out), {&a}, [a, begin, w] {
    return [a, begin, w](const Matrix& g) {
      auto& ga = a.node()->grad_buffer();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < w; ++c) ga(r, begin + c) += g(r, c);
    };
  });
}

inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const Matrix& xv = x.value();
  const std::size_t cols = xv.cols();
  Matrix out(idx.size(), cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " outside " +
                           xv.shape_str());
    }
    std::copy_n(xv.row(idx[i]), cols, out.row(i));
  }
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return detail::make_result(std::move(out), {&x}, [x, rows = std::move(rows), cols] {
    return [x, rows, cols](const Matrix& g) {
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double* dst = gx.row(rows[i]);
        const double* src = g.row(i);
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Unary elementwise

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
  Matrix out = x.value();
  for (auto& v : out.data()) v = std::max(v, 0.0) + slope * std::min(v, 0.0);
  return detail::make_result(std::move(out), {&x}, [x, slope] {
    return [x, slope](const Matrix& g) {
      const Matrix& xv = x.value();
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : slope);
    };
  });
}

inline Tensor elu(const Tensor& x, double alpha = 1.0) {
  Matrix out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : alpha * std::expm1(v);
  return detail::make_result(std::move(out), {&x}, [x, alpha] {
    return [x, alpha](const Matrix& g) {
      const Matrix& xv = x.value();
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : alpha * std::exp(xv[i]));
    };
  });
}

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Matrix out = x.value();
  for (auto& v : out.data()) v = stable_sigmoid(v);
  Matrix saved = out;
  return detail::make_result(std::move(out), {&x}, [x, saved = std::move(saved)] {
    return [x, saved](const Matrix& g) {
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i] * (1.0 - saved[i]);
    };
  });
}

inline Tensor log(const Tensor& x) {
  Matrix out = x.value();
  for (auto& v : out.data()) v = std::log(v);
  return detail::make_result(std::move(out), {&x}, [x] {
    return [x](const Matrix& g) {
      const Matrix& xv = x.value();
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv[i];
    };
  });
}

inline Tensor exp(const Tensor& x) {
  Matrix out = x.value();
  for (auto& v : out.data()) v = std::exp(v);
  Matrix saved = out;
  return detail::make_result(std::move(out), {&x}, [x, saved = std::move(saved)] {
    return [x, saved](const Matrix& g) {
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i];
    };
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate). Identity when not
/// training or rate == 0. Entry i is kept iff a hash of (seed, i) falls below
/// 1 - rate, so masks are reproducible across platforms.
inline Tensor dropout(const Tensor& x, double rate, std::uint64_t seed, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw RangeError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double s = 1.0 / keep;
  auto kept = [seed, keep](std::size_t i) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(i) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53 < keep;
  };
  Matrix mask(x.rows(), x.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = kept(i) ? s : 0.0;
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::make_result(std::move(out), {&x}, [x, mask = std::move(mask)] {
    return [x, mask](const Matrix& g) {
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Segment ops over sorted segment ids (one id per row).

/// Softmax within each segment of an E'x1 score column. Entries whose
/// `keep` flag is false get weight exactly 0 and take no part in the
/// normalization.
inline Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> segment_ids,
                              std::span<const char> keep = {}) {
  const Matrix& sv = scores.value();
  if (sv.cols() != 1 || sv.rows() != segment_ids.size()) {
    throw DimensionError("segment_softmax: scores " + sv.shape_str() + " vs " +
                         std::to_string(segment_ids.size()) + " segment ids");
  }
  if (!keep.empty() && keep.size() != segment_ids.size()) {
    throw DimensionError("segment_softmax: mask length " + std::to_string(keep.size()) +
                         " vs " + std::to_string(segment_ids.size()) + " entries");
  }
  detail::check_sorted_segments("segment_softmax", segment_ids);
  const std::size_t n = segment_ids.size();
  auto kept = [&](std::size_t i) { return keep.empty() || keep[i] != 0; };
  Matrix out(n, 1);
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = begin;
    while (end < n && segment_ids[end] == segment_ids[begin]) ++end;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = begin; i < end; ++i)
      if (kept(i)) mx = std::max(mx, sv[i]);
    double denom = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      out[i] = kept(i) ? std::exp(sv[i] - mx) : 0.0;
      denom += out[i];
    }
    if (denom > 0.0)
      for (std::size_t i = begin; i < end; ++i) out[i] /= denom;
    begin = end;
  }
  Matrix saved = out;
  std::vector<std::size_t> ids(segment_ids.begin(), segment_ids.end());
  return detail::make_result(
      std::move(out), {&scores}, [scores, saved = std::move(saved), ids = std::move(ids)] {
        return [scores, saved, ids](const Matrix& g) {
          // d e_k = a_k (g_k - sum_j a_j g_j) within the segment
          auto& gs = scores.node()->grad_buffer();
          const std::size_t n = ids.size();
          std::size_t begin = 0;
          while (begin < n) {
            std::size_t end = begin;
            while (end < n && ids[end] == ids[begin]) ++end;
            double dot = 0.0;
            for (std::size_t i = begin; i < end; ++i) dot += saved[i] * g[i];
            for (std::size_t i = begin; i < end; ++i) gs[i] += saved[i] * (g[i] - dot);
            begin = end;
          }
        };
      });
}

/// Row-wise sum of `values` into `num_segments` output rows.
inline Tensor segment_sum(const Tensor& values, std::span<const std::size_t> segment_ids,
                          std::size_t num_segments) {
  const Matrix& vv = values.value();
  if (vv.rows() != segment_ids.size()) {
    throw DimensionError("segment_sum: values " + vv.shape_str() + " vs " +
                         std::to_string(segment_ids.size()) + " segment ids");
  }
  detail::check_sorted_segments("segment_sum", segment_ids);
  if (!segment_ids.empty() && segment_ids.back() >= num_segments) {
    throw DimensionError("segment_sum: segment id " + std::to_string(segment_ids.back()) +
                         " >= num_segments " + std::to_string(num_segments));
  }
  const std::size_t cols = vv.cols();
  Matrix out(num_segments, cols);
  for (std::size_t i = 0; i < segment_ids.size(); ++i) {
    double* dst = out.row(segment_ids[i]);
    const double* src = vv.row(i);
    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
  }
  std::vector<std::size_t> ids(segment_ids.begin(), segment_ids.end());
  return detail::make_result(std::move(out), {&values}, [values, ids = std::move(ids), cols] {
    return [values, ids, cols](const Matrix& g) {
      auto& gv = values.node()->grad_buffer();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = gv.row(i);
        const double* src = g.row(ids[i]);
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Reductions and loss building blocks

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make_result(Matrix(1, 1, s), {&x}, [x] {
    return [x](const Matrix& g) {
      auto& gx = x.node()->grad_buffer();
      for (auto& v : gx.data()) v += g[0];
    };
  });
}

inline Tensor mean(const Tensor& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

inline Tensor sum_squares(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return detail::make_result(Matrix(1, 1, s), {&x}, [x] {
    return [x](const Matrix& g) {
      const Matrix& xv = x.value();
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * xv[i] * g[0];
    };
  });
}

/// Numerically stabilized log-softmax over each row.
inline Tensor log_softmax_rows(const Tensor& x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const double* xr = xv.row(r);
    const double mx = *std::max_element(xr, xr + xv.cols());
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) s += std::exp(xr[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xr[c] - lse;
  }
  Matrix saved = out;
  return detail::make_result(std::move(out), {&x}, [x, saved = std::move(saved)] {
    return [x, saved](const Matrix& g) {
      auto& gx = x.node()->grad_buffer();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) gs += g(r, c);
        for (std::size_t c = 0; c < g.cols(); ++c)
          gx(r, c) += g(r, c) - std::exp(saved(r, c)) * gs;
      }
    };
  });
}

/// Selects x(rows[i], cols[i]) into a Kx1 column.
inline Tensor pick(const Tensor& x, std::span<const std::size_t> rows,
                   std::span<const std::size_t> cols) {
  if (rows.size() != cols.size()) {
    throw DimensionError("pick: " + std::to_string(rows.size()) + " rows vs " +
                         std::to_string(cols.size()) + " cols");
  }
  const Matrix& xv = x.value();
  Matrix out(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows() || cols[i] >= xv.cols()) {
      throw DimensionError("pick: (" + std::to_string(rows[i]) + "," + std::to_string(cols[i]) +
                           ") outside " + xv.shape_str());
    }
    out[i] = xv(rows[i], cols[i]);
  }
  std::vector<std::size_t> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
  return detail::make_result(std::move(out), {&x}, [x, r = std::move(r), c = std::move(c)] {
    return [x, r, c](const Matrix& g) {
      auto& gx = x.node()->grad_buffer();
      for (std::size_t i = 0; i < r.size(); ++i) gx(r[i], c[i]) += g[i];
    };
  });
}

/// Per-entry -[y log sigmoid(s) + (1-y) log(1 - sigmoid(s))] for a Kx1 logit
/// column, evaluated through softplus so large |s| stays finite.
inline Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  const Matrix& sv = logits.value();
  if (sv.cols() != 1 || sv.rows() != targets.size()) {
    throw DimensionError("bce_with_logits: logits " + sv.shape_str() + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  auto softplus = [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); };
  Matrix out(sv.rows(), 1);
  for (std::size_t i = 0; i < sv.rows(); ++i) {
    const double s = sv[i], y = targets[i];
    out[i] = y * softplus(-s) + (1.0 - y) * softplus(s);
  }
  std::vector<double> y(targets.begin(), targets.end());
  return detail::make_result(std::move(out), {&logits}, [logits, y = std::move(y)] {
    return [logits, y](const Matrix& g) {
      const Matrix& sv = logits.value();
      auto& gs = logits.node()->grad_buffer();
      for (std::size_t i = 0; i < y.size(); ++i) gs[i] += g[i] * (stable_sigmoid(sv[i]) - y[i]);
    };
  });
}

}  // namespace hsgat
