#pragma once

// Dense NCHW tensors, row-major matrices and the differentiable primitives
// composed by the rest of the library. Every forward op has a matching
// *_backward rule that maps an output gradient to input gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sarpf/errors.hpp"

namespace sarpf {

struct Shape4 {
  std::size_t n = 0;  // batch
  std::size_t c = 0;  // channels
  std::size_t h = 0;  // rows
  std::size_t w = 0;  // cols

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

class Tensor4 {
 public:
  Tensor4() = default;

  explicit Tensor4(Shape4 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}

  Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("Tensor4: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor4 zeros(Shape4 s) { return Tensor4(s, 0.0); }
  static Tensor4 ones(Shape4 s) { return Tensor4(s, 1.0); }
  static Tensor4 full(Shape4 s, double v) { return Tensor4(s, v); }

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((b * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  double& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[index(b, c, y, x)];
  }
  double operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[index(b, c, y, x)];
  }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  /// Contiguous H*W plane of item b, channel c.
  std::span<double> plane(std::size_t b, std::size_t c) noexcept {
    return {data_.data() + index(b, c, 0, 0), shape_.plane()};
  }
  std::span<const double> plane(std::size_t b, std::size_t c) const noexcept {
    return {data_.data() + index(b, c, 0, 0), shape_.plane()};
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape4 shape_{};
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length does not match " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Elementwise with per-channel gate broadcast

enum class ElementwiseOp { add, sub, mul };

/// b either matches a exactly or has shape (B, C, 1, 1) against a's (B, C, H, W).
inline bool is_gate_broadcast(const Shape4& a, const Shape4& b) {
  return b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1 && !(a == b);
}

inline void check_elementwise(const Shape4& a, const Shape4& b) {
  if (!(a == b) && !is_gate_broadcast(a, b)) {
    throw ShapeError("elementwise: shape " + b.str() + " is neither equal to nor a per-channel gate for " +
                     a.str());
  }
}

inline Tensor4 elementwise(ElementwiseOp op, const Tensor4& a, const Tensor4& b) {
  check_elementwise(a.shape(), b.shape());
  Tensor4 out(a.shape());
  const std::size_t plane = a.shape().plane();
  const bool broadcast = is_gate_broadcast(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double rhs = broadcast ? b[i / plane] : b[i];
    switch (op) {
      case ElementwiseOp::add: out[i] = a[i] + rhs; break;
      case ElementwiseOp::sub: out[i] = a[i] - rhs; break;
      case ElementwiseOp::mul: out[i] = a[i] * rhs; break;
    }
  }
  return out;
}

inline Tensor4 add(const Tensor4& a, const Tensor4& b) { return elementwise(ElementwiseOp::add, a, b); }
inline Tensor4 sub(const Tensor4& a, const Tensor4& b) { return elementwise(ElementwiseOp::sub, a, b); }
inline Tensor4 mul(const Tensor4& a, const Tensor4& b) { return elementwise(ElementwiseOp::mul, a, b); }

struct BinaryGrads {
  Tensor4 da;
  Tensor4 db;
};

/// Gradients of elementwise(op, a, b). When b was broadcast, db is summed
/// over each H*W plane back to (B, C, 1, 1).
inline BinaryGrads elementwise_backward(ElementwiseOp op, const Tensor4& a, const Tensor4& b,
                                        const Tensor4& dout) {
  check_elementwise(a.shape(), b.shape());
  BinaryGrads g{Tensor4(a.shape()), Tensor4(b.shape())};
  const std::size_t plane = a.shape().plane();
  const bool broadcast = is_gate_broadcast(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = broadcast ? i / plane : i;
    switch (op) {
      case ElementwiseOp::add:
        g.da[i] = dout[i];
        g.db[j] += dout[i];
        break;
      case ElementwiseOp::sub:
        g.da[i] = dout[i];
        g.db[j] -= dout[i];
        break;
      case ElementwiseOp::mul:
        g.da[i] = dout[i] * b[j];
        g.db[j] += dout[i] * a[i];
        break;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline double logistic(double v) {
  // Split by sign so exp never overflows.
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor4 logistic(const Tensor4& x) {
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = logistic(x[i]);
  return out;
}

/// Takes the forward output y = logistic(x).
inline Tensor4 logistic_backward(const Tensor4& y, const Tensor4& dout) {
  Tensor4 dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dout[i] * y[i] * (1.0 - y[i]);
  return dx;
}

inline Tensor4 relu(const Tensor4& x) {
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  return out;
}

inline Tensor4 relu_backward(const Tensor4& x, const Tensor4& dout) {
  Tensor4 dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0 ? dout[i] : 0.0;
  return dx;
}

// ---------------------------------------------------------------------------
// Matrix product and row softmax

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

struct MatmulGrads {
  Matrix da;
  Matrix db;
};

/// dA = dOut * B^T, dB = A^T * dOut.
inline MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dout) {
  return {matmul(dout, b.transposed()), matmul(a.transposed(), dout)};
}

inline Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out(r, c) = std::exp(row[c] - mx);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) /= total;
  }
  return out;
}

/// Jacobian-vector product of the row softmax; takes the forward output y.
inline Matrix softmax_rows_backward(const Matrix& y, const Matrix& dout) {
  Matrix dx(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * dout(r, c);
    for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (dout(r, c) - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Global average pooling

inline Tensor4 global_avg_pool(const Tensor4& x) {
  const Shape4& s = x.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor4 out({s.n, s.c, 1, 1});
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (double v : x.plane(b, c)) sum += v;
      out(b, c, 0, 0) = sum / static_cast<double>(s.plane());
    }
  }
  return out;
}

inline Tensor4 global_avg_pool_backward(const Shape4& input_shape, const Tensor4& dout) {
  Tensor4 dx(input_shape);
  const double inv = 1.0 / static_cast<double>(input_shape.plane());
  for (std::size_t b = 0; b < input_shape.n; ++b)
    for (std::size_t c = 0; c < input_shape.c; ++c)
      for (double& v : dx.plane(b, c)) v = dout(b, c, 0, 0) * inv;
  return dx;
}

// ---------------------------------------------------------------------------
// Channel concatenation

inline Tensor4 concat_channels(std::span<const Tensor4> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const Shape4 first = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape4& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: part " + s.str() + " does not share B/H/W with " + first.str());
    }
    channels += s.c;
  }
  Tensor4 out({first.n, channels, first.h, first.w});
  for (std::size_t b = 0; b < first.n; ++b) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      for (std::size_t c = 0; c < p.shape().c; ++c) {
        auto src = p.plane(b, c);
        std::copy(src.begin(), src.end(), out.plane(b, offset + c).begin());
      }
      offset += p.shape().c;
    }
  }
  return out;
}

/// Channel slice [begin, begin + count) of x.
inline Tensor4 slice_channels(const Tensor4& x, std::size_t begin, std::size_t count) {
  const Shape4& s = x.shape();
  if (begin + count > s.c) throw ShapeError("slice_channels: range exceeds channel count");
  Tensor4 out({s.n, count, s.h, s.w});
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < count; ++c) {
      auto src = x.plane(b, begin + c);
      std::copy(src.begin(), src.end(), out.plane(b, c).begin());
    }
  }
  return out;
}

/// Backward of concat_channels: slices dout back into per-part gradients.
inline std::vector<Tensor4> concat_channels_backward(std::span<const Shape4> part_shapes, const Tensor4& dout) {
  std::vector<Tensor4> grads;
  grads.reserve(part_shapes.size());
  std::size_t offset = 0;
  for (const auto& s : part_shapes) {
    grads.push_back(slice_channels(dout, offset, s.c));
    offset += s.c;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Reductions used by losses and tests

inline double sum(const Tensor4& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

inline double dot(const Tensor4& a, const Tensor4& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("dot: shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: lengths differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("max_abs_diff: shapes " + a.shape().str() + " vs " + b.shape().str());
  return max_abs_diff(a.data(), b.data());
}

/// Bridges between the tensor and matrix views: (1,1,R,C) <-> RxC.
inline Matrix as_matrix(const Tensor4& t) {
  const Shape4& s = t.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("as_matrix: expected (1,1,R,C), got " + s.str());
  return Matrix(s.h, s.w, std::vector<double>(t.data().begin(), t.data().end()));
}

inline Tensor4 as_tensor(const Matrix& m) {
  return Tensor4({1, 1, m.rows(), m.cols()}, std::vector<double>(m.data().begin(), m.data().end()));
}

}  // namespace sarpf
