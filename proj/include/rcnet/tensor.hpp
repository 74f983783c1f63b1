#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline constexpr std::size_t kMaxRank = 4;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank)
    throw ShapeError("tensor rank must be in 1..4, got shape " + to_string(shape));
  for (Index d : shape)
    if (d < 1) throw ShapeError("tensor dims must be >= 1, got shape " + to_string(shape));
}

/// Dense row-major tensor of rank 1..4 (NCHW for feature maps).
///
/// Storage is a flat Eigen array so whole-tensor arithmetic can be written as
/// Eigen expressions via array(). A default-constructed tensor is empty and
/// only used as a placeholder.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Storage::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Storage(Eigen::Map<const Storage>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  std::span<Scalar> data() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> data() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }

  /// Element access for rank-4 tensors.
  Scalar& operator()(Index n, Index c, Index h, Index w) { return data_[offset(n, c, h, w)]; }
  const Scalar& operator()(Index n, Index c, Index h, Index w) const {
    return data_[offset(n, c, h, w)];
  }

  Index offset(Index n, Index c, Index h, Index w) const {
    assert(rank() == 4);
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Tensor reshape(Shape shape) const {
    check_shape(shape);
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Shape shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
Tensor<Scalar> full(Shape shape, Scalar value) {
  check_shape(shape);
  const Index n = shape_size(shape);
  return Tensor<Scalar>(std::move(shape), Tensor<Scalar>::Storage::Constant(n, value));
}

template <typename Scalar>
Tensor<Scalar> zeros(Shape shape) {
  return full<Scalar>(std::move(shape), Scalar(0));
}

template <typename Scalar>
Tensor<Scalar> ones(Shape shape) {
  return full<Scalar>(std::move(shape), Scalar(1));
}

template <typename Scalar>
Tensor<Scalar> zeros_like(const Tensor<Scalar>& t) {
  return zeros<Scalar>(t.shape());
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  return Tensor<Scalar>(a.shape(), a.array() + b.array());
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, Scalar b) {
  return Tensor<Scalar>(a.shape(), a.array() + b);
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  return Tensor<Scalar>(a.shape(), a.array() - b.array());
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, Scalar b) {
  return Tensor<Scalar>(a.shape(), a.array() - b);
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  return Tensor<Scalar>(a.shape(), a.array() * b.array());
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, Scalar b) {
  return Tensor<Scalar>(a.shape(), a.array() * b);
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return mul(a, factor);
}

template <typename Scalar>
Scalar sum_all(const Tensor<Scalar>& a) {
  return a.array().sum();
}

template <typename Scalar>
Scalar mean_all(const Tensor<Scalar>& a) {
  return a.array().mean();
}

namespace detail {

// Sums `a` over the listed axes. Reduced axes become size 1 when keep_dims,
// otherwise they are dropped; reducing every axis yields shape [1].
template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& a, std::vector<std::size_t> axes,
                          bool keep_dims) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t ax : axes)
    if (ax >= a.rank())
      throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for shape " +
                       to_string(a.shape()));

  Shape kept = a.shape();
  for (std::size_t ax : axes) kept[ax] = 1;
  Tensor<Scalar> out(kept);

  // Walk the input in row-major order, mapping each element to its output slot.
  const std::size_t r = a.rank();
  std::vector<Index> in_stride(r), out_stride(r);
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = (i + 1 < r) ? in_stride[i + 1] * a.shape()[i + 1] : 1;
    out_stride[i] = (i + 1 < r) ? out_stride[i + 1] * kept[i + 1] : 1;
  }
  for (Index flat = 0; flat < a.size(); ++flat) {
    Index rem = flat, dst = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const Index coord = rem / in_stride[i];
      rem %= in_stride[i];
      if (kept[i] != 1 || a.shape()[i] == 1) dst += coord * out_stride[i];
    }
    out[dst] += a[flat];
  }

  if (keep_dims) return out;
  Shape dropped;
  for (std::size_t i = 0; i < r; ++i)
    if (!std::binary_search(axes.begin(), axes.end(), i)) dropped.push_back(a.shape()[i]);
  if (dropped.empty()) dropped.push_back(1);
  return out.reshape(dropped);
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, std::vector<std::size_t> axes,
                   bool keep_dims = false) {
  return detail::reduce_sum(a, std::move(axes), keep_dims);
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a, std::vector<std::size_t> axes,
                    bool keep_dims = false) {
  Index count = 1;
  for (std::size_t ax : axes)
    if (ax < a.rank()) count *= a.shape()[ax];
  Tensor<Scalar> s = detail::reduce_sum(a, std::move(axes), keep_dims);
  s.array() /= static_cast<Scalar>(count);
  return s;
}

/// All axes of `a`, for full reductions through sum()/mean().
template <typename Scalar>
std::vector<std::size_t> all_axes(const Tensor<Scalar>& a) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return axes;
}

}  // namespace rcnet
