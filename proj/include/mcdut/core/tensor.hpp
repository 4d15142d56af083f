#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mcdut/core/error.hpp"
#include "mcdut/core/rng.hpp"

namespace mcdut {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Dense row-major tensor with value semantics. Rank is dynamic; everything in
// the toolkit is built from ranks 1-4.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_)
      require(d >= 0, ErrorKind::InvalidInput, "negative tensor dimension");
    data_.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(static_cast<int64_t>(data_.size()) == shape_numel(shape_), ErrorKind::InternalConsistency,
            "tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<T>(rng.normal(static_cast<double>(mean), static_cast<double>(stddev)));
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<T>(rng.uniform_real(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

  T& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    require(shape_numel(shape) == numel(), ErrorKind::InternalConsistency,
            "reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  T mean() const {
    require(!data_.empty(), ErrorKind::InvalidInput, "mean of empty tensor");
    return sum() / static_cast<T>(data_.size());
  }

  T max_abs() const {
    T m = T(0);
    for (const T& v : data_) m = std::max(m, static_cast<T>(std::abs(static_cast<double>(v))));
    return m;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Eigen views over the flat buffer. rows*cols must equal numel.
template <typename T>
using EigenMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<EigenMatrix<T>> as_matrix(Tensor<T>& t, int64_t rows, int64_t cols) {
  require(rows * cols == t.numel(), ErrorKind::InternalConsistency, "matrix view size mismatch");
  return Eigen::Map<EigenMatrix<T>>(t.data(), rows, cols);
}

template <typename T>
Eigen::Map<const EigenMatrix<T>> as_matrix(const Tensor<T>& t, int64_t rows, int64_t cols) {
  require(rows * cols == t.numel(), ErrorKind::InternalConsistency, "matrix view size mismatch");
  return Eigen::Map<const EigenMatrix<T>>(t.data(), rows, cols);
}

}  // namespace mcdut
