#include "qmr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qmr/error.hpp"
#include "qmr/simd.hpp"

namespace qmr {

Matrix::Matrix(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != static_cast<std::size_t>(rows) * cols) {
    throw Error(ErrorKind::dimension, "matrix value count does not match shape");
  }
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double Matrix::frobenius_norm() const {
  return std::sqrt(simd::dot(data_.data(), data_.data(), data_.size()));
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::dimension, "matrix product shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double v = a(i, k);
      if (v != 0.0) simd::axpy(v, b.row(k).data(), dst.data(), dst.size());
    }
  }
  return out;
}

Matrix gram_rows(const Matrix& a) {
  Matrix g(a.rows(), a.rows());
  const auto n = static_cast<std::size_t>(a.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = i; j < a.rows(); ++j) {
      const double v = simd::dot(a.row(i).data(), a.row(j).data(), n);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

SymmetricEigen symmetric_eigen(const Matrix& symmetric) {
  const int n = symmetric.rows();
  if (symmetric.cols() != n) throw Error(ErrorKind::dimension, "eigendecomposition needs a square matrix");
  Matrix a = symmetric;
  Matrix v = Matrix::identity(n);

  auto off_diagonal = [&] {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return s;
  };
  double scale = 0.0;
  for (double x : a.values()) scale += x * x;

  for (int sweep = 0; sweep < 100 && off_diagonal() > 1e-32 * scale; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) > a(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (int k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (int r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

}  // namespace qmr
