#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "uformer/common.hpp"

namespace uformer {

// Dense row-major tensor. Deliberately minimal: contiguous storage, explicit
// shapes, no views. Anything clever (broadcasting, axis reductions) lives in
// the ops that need it, where the backward pass has to mirror it anyway.
template <std::floating_point T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate();
    require<ShapeError>(
        static_cast<std::int64_t>(data_.size()) == shape_numel(shape_),
        "tensor data size " + std::to_string(data_.size()) +
            " does not match shape " + shape_str(shape_));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const {
    require<ShapeError>(axis < shape_.size(), "axis out of range");
    return shape_[axis];
  }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // Row-major strides in elements.
  std::vector<std::int64_t> strides() const {
    std::vector<std::int64_t> st(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;)
      st[i - 1] = st[i] * shape_[i];
    return st;
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor reshaped(Shape new_shape) const {
    require<ShapeError>(shape_numel(new_shape) == numel(),
                        "reshape from " + shape_str(shape_) + " to " +
                            shape_str(new_shape) + " changes element count");
    return Tensor(std::move(new_shape), data_);
  }

 private:
  void validate() const {
    for (auto d : shape_)
      require<ShapeError>(d >= 0, "negative dimension in " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

// Numpy-style right-aligned broadcast of two shapes. Each trailing pair of
// dimensions must match or one of them must be 1.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da == db || da == 1 || db == 1) {
      out[n - 1 - i] = std::max(da, db);
    } else {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
  }
  return out;
}

// Walks every index of `out_shape` and hands the callback the flat offsets
// into two broadcast operands. Used by binary ops and their backwards.
template <class Fn>
void for_each_broadcast(const Shape& out_shape, const Shape& a,
                        const Shape& b, Fn&& fn) {
  const std::size_t n = out_shape.size();
  const std::int64_t total = shape_numel(out_shape);
  // Strides of the operands, zeroed along broadcast axes.
  std::vector<std::int64_t> sa(n, 0), sb(n, 0);
  std::int64_t ra = 1, rb = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ax = n - 1 - i;
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != 1) sa[ax] = ra;
    if (db != 1) sb[ax] = rb;
    ra *= da;
    rb *= db;
  }
  std::vector<std::int64_t> idx(n, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t flat = 0; flat < total; ++flat) {
    fn(flat, oa, ob);
    for (std::size_t i = n; i-- > 0;) {
      ++idx[i];
      oa += sa[i];
      ob += sb[i];
      if (idx[i] < out_shape[i]) break;
      oa -= sa[i] * out_shape[i];
      ob -= sb[i] * out_shape[i];
      idx[i] = 0;
    }
  }
}

// A complex tensor is just a pair of same-shaped real tensors. The layers
// keep real and imaginary parts separate all the way through.
template <std::floating_point T>
struct ComplexTensor {
  Tensor<T> re, im;

  ComplexTensor() = default;
  ComplexTensor(Tensor<T> r, Tensor<T> i) : re(std::move(r)), im(std::move(i)) {
    require<ShapeError>(re.shape() == im.shape(),
                        "complex tensor parts differ: " + shape_str(re.shape()) +
                            " vs " + shape_str(im.shape()));
  }
  explicit ComplexTensor(Shape shape) : re(shape), im(std::move(shape)) {}

  const Shape& shape() const { return re.shape(); }
};

}  // namespace uformer
