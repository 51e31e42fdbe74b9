#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "segkit/error.hpp"

namespace segkit {

using Index = Eigen::Index;

// Dimension list of a dense tensor. Feature maps are rank 4 in NHWC order,
// convolution kernels are rank 4 in (kh, kw, in, out) order, per-channel
// terms are rank 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index operator[](Index i) const { return dims_[static_cast<size_t>(i)]; }
  Index& operator[](Index i) { return dims_[static_cast<size_t>(i)]; }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1},
                           [](Index a, Index b) { return a * b; });
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.dims_ == b.dims_;
  }
  friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) os << 'x';
      os << dims_[i];
    }
    os << ']';
    return os.str();
  }

 private:
  std::vector<Index> dims_;
};

// Dense row-major tensor over an Eigen array. The last dimension is the
// fastest varying, so an NHWC feature map viewed as matrix() has one row
// per pixel and one column per channel.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMajorMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMajorMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(Array::Zero(shape_.numel())) {}
  Tensor(Shape shape, Scalar fill)
      : shape_(std::move(shape)), data_(Array::Constant(shape_.numel(), fill)) {}
  Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return shape_.rank(); }
  Index dim(Index i) const { return shape_[i]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  // NHWC accessors; valid for rank-4 tensors only.
  Index batch() const { return shape_[0]; }
  Index height() const { return shape_[1]; }
  Index width() const { return shape_[2]; }
  Index channels() const { return shape_[rank() - 1]; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }

  Scalar& at(Index n, Index y, Index x, Index c) {
    return data_[((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
  }
  const Scalar& at(Index n, Index y, Index x, Index c) const {
    return data_[((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
  }

  // (prod of leading dims) x (last dim) view.
  MatrixMap matrix() {
    const Index cols = shape_[rank() - 1];
    return MatrixMap(data_.data(), cols ? size() / cols : 0, cols);
  }
  ConstMatrixMap matrix() const {
    const Index cols = shape_[rank() - 1];
    return ConstMatrixMap(data_.data(), cols ? size() / cols : 0, cols);
  }

  // Flat column-vector view, e.g. for per-channel terms.
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> vector() {
    return Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(data_.data(), size());
  }
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> vector() const {
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(data_.data(), size());
  }

  void set_zero() { data_.setZero(); }

  Tensor reshaped(Shape shape) const {
    if (shape.numel() != size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  Array data_;
};

using Tensorf = Tensor<float>;

// Per-pixel integer class ids for one image, H x W.
using LabelGrid =
    Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 8-bit interleaved RGB image, H x W x 3.
using RgbImage = Tensor<std::uint8_t>;

inline void require_shape(const Shape& actual, const Shape& expected,
                          const std::string& what) {
  if (actual != expected) {
    throw ShapeError(what + ": expected shape " + expected.str() + ", got " +
                     actual.str());
  }
}

}  // namespace segkit
