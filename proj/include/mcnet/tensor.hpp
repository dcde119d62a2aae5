#pragma once

// Dense tensors and the elementwise/reduction kernels used across the library.
//
// Axis order is [batch, channel, height, width]. Lower-rank tensors use the
// leading extents, so a [B, N] score matrix is batch-major. Storage is
// contiguous and row-major (width fastest).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mcnet/errors.hpp"
#include "mcnet/rng.hpp"

namespace mcnet {

inline constexpr std::size_t kMaxRank = 4;

class Shape {
 public:
  Shape() = default;

  Shape(std::initializer_list<std::size_t> extents) {
    assign(extents.begin(), extents.end());
  }

  explicit Shape(std::span<const std::size_t> extents) {
    assign(extents.begin(), extents.end());
  }

  [[nodiscard]] std::size_t rank() const { return rank_; }
  [[nodiscard]] bool empty() const { return rank_ == 0; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::size_t& operator[](std::size_t axis) { return dims_[axis]; }

  [[nodiscard]] std::size_t numel() const {
    if (rank_ == 0) return 0;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  [[nodiscard]] std::span<const std::size_t> extents() const {
    return {dims_.data(), rank_};
  }

  /// Extent of `axis`, or 1 when the tensor has fewer axes.
  [[nodiscard]] std::size_t dim_or_one(std::size_t axis) const {
    return axis < rank_ ? dims_[axis] : 1;
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  template <typename It>
  void assign(It first, It last) {
    const auto n = static_cast<std::size_t>(std::distance(first, last));
    if (n == 0 || n > kMaxRank)
      throw ShapeError("tensor rank must be in [1, 4], got " + std::to_string(n));
    rank_ = n;
    std::size_t i = 0;
    for (auto it = first; it != last; ++it, ++i) {
      if (*it == 0) throw ShapeError("tensor extents must be positive");
      dims_[i] = *it;
    }
  }

  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Signed-extent constructor path used by user-facing factories, so that a
/// negative extent is reported as a shape error instead of wrapping around.
inline Shape make_shape(std::initializer_list<long long> extents) {
  std::vector<std::size_t> dims;
  for (long long e : extents) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + std::to_string(e));
    dims.push_back(static_cast<std::size_t>(e));
  }
  return Shape(std::span<const std::size_t>(dims));
}

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.empty()) throw ShapeError("tensor requires at least one extent");
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (shape.empty()) throw ShapeError("tensor requires at least one extent");
    if (data_.size() != shape_.numel())
      throw ShapeError("buffer of " + std::to_string(data_.size()) +
                       " elements does not match shape " + shape_.str());
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
  static Tensor filled(Shape shape, T value) { return Tensor(shape, value); }

  static Tensor uniform(Shape shape, T lo, T hi, SeededRng& rng) {
    Tensor t(shape);
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape shape, T mean, T stddev, SeededRng& rng) {
    Tensor t(shape);
    for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.rank(); }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_[axis]; }

  std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(b, c, h, w)];
  }
  const T& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(b, c, h, w)];
  }

  /// Same buffer, new extents; element count must not change.
  [[nodiscard]] Tensor reshaped(Shape shape) const {
    if (shape.numel() != numel())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    Tensor t = *this;
    t.shape_ = shape;
    return t;
  }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  [[nodiscard]] std::size_t offset(std::size_t b, std::size_t c, std::size_t h,
                                   std::size_t w) const {
    const std::size_t C = shape_.dim_or_one(1);
    const std::size_t H = shape_.dim_or_one(2);
    const std::size_t W = shape_.dim_or_one(3);
    return ((b * C + c) * H + h) * W + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Elementwise kernels

enum class BinaryOp { add, sub, mul, max };
enum class UnaryOp { exp, ln, sqrt };

namespace detail {

template <typename T>
T apply(BinaryOp op, T a, T b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::max: return std::max(a, b);
  }
  return a;
}

/// b broadcasts along batch when it has extent 1 on axis 0 and matches the
/// remaining axes of a.
inline bool batch_broadcastable(const Shape& a, const Shape& b) {
  if (a.rank() != b.rank() || b[0] != 1) return false;
  for (std::size_t i = 1; i < a.rank(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace detail

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::apply(op, a[i], b[i]);
  } else if (detail::batch_broadcastable(a.shape(), b.shape())) {
    const std::size_t per = b.numel();
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::apply(op, a[i], b[i % per]);
  } else {
    throw ShapeError("incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, T scalar) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = detail::apply(op, a[i], scalar);
  return out;
}

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const T v = a[i];
    switch (op) {
      case UnaryOp::exp: out[i] = std::exp(v); break;
      case UnaryOp::ln:
        if (v < T(0)) throw DomainError("ln of negative value");
        out[i] = std::log(v);
        break;
      case UnaryOp::sqrt:
        if (v < T(0)) throw DomainError("sqrt of negative value");
        out[i] = std::sqrt(v);
        break;
    }
  }
  return out;
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::max, a, b); }
template <typename T> Tensor<T> exp(const Tensor<T>& a) { return elementwise(UnaryOp::exp, a); }
template <typename T> Tensor<T> log(const Tensor<T>& a) { return elementwise(UnaryOp::ln, a); }
template <typename T> Tensor<T> sqrt(const Tensor<T>& a) { return elementwise(UnaryOp::sqrt, a); }

/// In-place a += b, same shape only. Used on gradient accumulation paths.
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("cannot accumulate " + b.shape().str() + " into " + a.shape().str());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

// ---------------------------------------------------------------------------
// Reductions. Reduced axes keep extent 1. Elements are visited in ascending
// linear index, which fixes the floating-point summation order.

enum class ReduceOp { sum, max, argmax };

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, std::initializer_list<std::size_t> axes_list) {
  if (axes_list.size() == 0) throw ContractError("reduce requires a non-empty axis set");
  const Shape& in = a.shape();
  std::array<bool, kMaxRank> reduced{};
  for (std::size_t axis : axes_list) {
    if (axis >= in.rank())
      throw ContractError("axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(in.rank()));
    reduced[axis] = true;
  }
  std::vector<std::size_t> out_dims(in.rank());
  for (std::size_t i = 0; i < in.rank(); ++i) out_dims[i] = reduced[i] ? 1 : in[i];
  const Shape out_shape{std::span<const std::size_t>(out_dims)};

  std::array<std::size_t, kMaxRank> in_stride{}, out_stride{};
  for (std::size_t i = in.rank(); i-- > 0;) {
    in_stride[i] = (i + 1 < in.rank()) ? in_stride[i + 1] * in[i + 1] : 1;
    out_stride[i] = (i + 1 < in.rank()) ? out_stride[i + 1] * out_dims[i + 1] : 1;
  }
  // Position inside the reduced sub-block, for argmax.
  std::array<std::size_t, kMaxRank> sub_stride{};
  {
    std::size_t s = 1;
    for (std::size_t i = in.rank(); i-- > 0;) {
      sub_stride[i] = s;
      if (reduced[i]) s *= in[i];
    }
  }

  Tensor<T> out(out_shape, op == ReduceOp::sum ? T(0) : -std::numeric_limits<T>::infinity());
  std::vector<T> best;
  if (op == ReduceOp::argmax) best.assign(out.numel(), -std::numeric_limits<T>::infinity());
  std::vector<bool> seen(out.numel(), false);

  for (std::size_t lin = 0; lin < a.numel(); ++lin) {
    std::size_t rem = lin, o = 0, sub = 0;
    for (std::size_t i = 0; i < in.rank(); ++i) {
      const std::size_t idx = rem / in_stride[i];
      rem %= in_stride[i];
      if (reduced[i]) sub += idx * sub_stride[i];
      else o += idx * out_stride[i];
    }
    const T v = a[lin];
    switch (op) {
      case ReduceOp::sum: out[o] += v; break;
      case ReduceOp::max:
        if (!seen[o] || v > out[o]) out[o] = v;
        break;
      case ReduceOp::argmax:
        if (!seen[o] || v > best[o]) {
          best[o] = v;
          out[o] = static_cast<T>(sub);
        }
        break;
    }
    seen[o] = true;
  }
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return s;
}

/// Index of the largest element; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace mcnet
