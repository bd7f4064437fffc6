#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace s2l {

/// Dense row-major tensor over a templated scalar. Rank is dynamic; storage
/// is a flat Eigen array so Eigen maps can view any tensor as a 2-D matrix
/// (leading axes collapsed into rows, last axis as columns).
template <typename Scalar>
class TensorT {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixRM =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<MatrixRM>;
  using ConstMatMap = Eigen::Map<const MatrixRM>;

  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Storage::Zero(count(shape_));
  }

  TensorT(std::vector<int> shape, Storage data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != count(shape_)) {
      throw std::invalid_argument("tensor: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, Scalar v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static TensorT from(std::vector<int> shape, std::initializer_list<Scalar> vals) {
    TensorT t(std::move(shape));
    if (static_cast<Eigen::Index>(vals.size()) != t.size()) {
      throw std::invalid_argument("tensor: initializer size mismatch");
    }
    Eigen::Index i = 0;
    for (Scalar v : vals) t.data_[i++] = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  /// Rows of the 2-D view: product of all but the last axis (1 for rank 0/1).
  Eigen::Index rows2d() const {
    if (shape_.size() <= 1) return 1;
    Eigen::Index r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }
  Eigen::Index cols2d() const { return shape_.empty() ? size() : shape_.back(); }

  MatMap mat() { return MatMap(data_.data(), rows2d(), cols2d()); }
  ConstMatMap mat() const { return ConstMatMap(data_.data(), rows2d(), cols2d()); }

  /// Same data, new shape (element count must match).
  TensorT reshaped(std::vector<int> shape) const {
    if (count(shape) != size()) {
      throw std::invalid_argument("reshape: cannot view " + shape_str(shape_) +
                                  " as " + shape_str(shape));
    }
    return TensorT(std::move(shape), data_);
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  bool bit_equal(const TensorT& o) const {
    if (shape_ != o.shape_) return false;
    return std::memcmp(data_.data(), o.data_.data(),
                       sizeof(Scalar) * static_cast<size_t>(data_.size())) == 0;
  }

  template <typename OtherScalar>
  TensorT<OtherScalar> cast() const {
    typename TensorT<OtherScalar>::Storage d =
        data_.template cast<OtherScalar>();
    return TensorT<OtherScalar>(shape_, std::move(d));
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
  }
  std::string shape_str() const { return shape_str(shape_); }

 private:
  static Eigen::Index count(const std::vector<int>& s) {
    Eigen::Index n = 1;
    for (int d : s) n *= d;
    return s.empty() ? 1 : n;
  }
  static void check_shape(const std::vector<int>& s) {
    for (int d : s) {
      if (d <= 0) {
        throw std::invalid_argument("tensor: non-positive dimension in " +
                                    shape_str(s));
      }
    }
  }

  std::vector<int> shape_;
  Storage data_;
};

using Tensor = TensorT<float>;

}  // namespace s2l
