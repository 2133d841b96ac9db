#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "live/error.hpp"

namespace live {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

/// A two-dimensional parameter or activation with an optional gradient.
///
/// Every tensor the model owns is a matrix (vectors are 1 x n), so shape is
/// always {rows, cols}. The gradient buffer is allocated lazily and, once
/// allocated, always matches the value's shape.
template <typename Scalar>
struct Tensor {
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;

  Tensor() = default;
  explicit Tensor(MatrixX<Scalar> v) : value(std::move(v)) {}
  Tensor(Index rows, Index cols) : value(MatrixX<Scalar>::Zero(rows, cols)) {}

  Index rows() const { return value.rows(); }
  Index cols() const { return value.cols(); }
  Index size() const { return value.size(); }
  std::vector<Index> shape() const { return {value.rows(), value.cols()}; }

  bool has_grad() const { return grad.size() != 0; }

  MatrixX<Scalar>& ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = MatrixX<Scalar>::Zero(value.rows(), value.cols());
    }
    return grad;
  }

  void zero_grad() {
    if (has_grad()) grad.setZero();
  }
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

}  // namespace live
