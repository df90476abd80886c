#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace qmr {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}
  Matrix(int rows, int cols, std::vector<double> values);

  static Matrix identity(int n);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
  }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  Matrix transposed() const;
  double frobenius_norm() const;

  bool operator==(const Matrix&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

Matrix multiply(const Matrix& a, const Matrix& b);

/// A * A^T, computed with the dispatched dot kernel.
Matrix gram_rows(const Matrix& a);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // column k pairs with values[k]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen symmetric_eigen(const Matrix& symmetric);

}  // namespace qmr
