#pragma once

#include <Eigen/Dense>

#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fei/error.hpp"

namespace fei {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array backed by an Eigen column vector.
///
/// Images are laid out {channels, height, width}; masks and attribution
/// maps are {height, width}.
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Vector::Constant(checked_size(shape_), fill)) {}

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw Error("shape-mismatch", "tensor shape " + shape_string(shape_) + " does not hold " +
                                        std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return data_.size(); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  bool empty() const noexcept { return data_.size() == 0; }

  Vector& data() noexcept { return data_; }
  const Vector& data() const noexcept { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index r, Index c) { return data_[r * shape_[1] + c]; }
  Scalar operator()(Index r, Index c) const { return data_[r * shape_[1] + c]; }

  Scalar& operator()(Index ch, Index r, Index c) {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }
  Scalar operator()(Index ch, Index r, Index c) const {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }

  /// Row-major matrix view over the flat storage.
  Eigen::Map<RowMatrix> matrix(Index rows, Index cols) {
    return Eigen::Map<RowMatrix>(data_.data(), rows, cols);
  }
  Eigen::Map<const RowMatrix> matrix(Index rows, Index cols) const {
    return Eigen::Map<const RowMatrix>(data_.data(), rows, cols);
  }

  /// Same values under a new shape of equal size.
  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool all_finite() const { return data_.allFinite(); }

  Scalar min() const { return data_.minCoeff(); }
  Scalar max() const { return data_.maxCoeff(); }
  Scalar sum() const { return data_.sum(); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, data_.template cast<Other>());
  }

  /// Bitwise equality of shape and storage (NaN payloads included).
  friend bool bit_equal(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.size() == 0 ||
            std::memcmp(a.data_.data(), b.data_.data(), sizeof(Scalar) * a.data_.size()) == 0);
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index e : shape) {
      if (e <= 0) throw Error("shape-mismatch", "non-positive extent in " + shape_string(shape));
    }
    return shape_size(shape);
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

/// Spatial extent {height, width} of an image tensor {C,H,W} or a map {H,W}.
template <typename Scalar>
Shape spatial_shape(const BasicTensor<Scalar>& t) {
  if (t.rank() == 2) return t.shape();
  if (t.rank() == 3) return {t.dim(1), t.dim(2)};
  throw Error("shape-mismatch", "expected {H,W} or {C,H,W}, got " + shape_string(t.shape()));
}

}  // namespace fei
