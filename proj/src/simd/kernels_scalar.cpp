#include <cmath>

#include "qmr/simd.hpp"
#include "scalar_detail.hpp"

namespace qmr::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void warp_row_scalar(const WarpRow& r) { detail::warp_columns_scalar(r, 0); }

}  // namespace

namespace detail {

void warp_columns_scalar(const WarpRow& r, int begin) {
  const double max_y = r.height - 1;
  const double max_x = r.width - 1;
  for (int x = begin; x < r.width; ++x) {
    double py = r.row + r.disp_y[x];
    double px = x + r.disp_x[x];
    const bool inside_y = py >= 0.0 && py <= max_y;
    const bool inside_x = px >= 0.0 && px <= max_x;
    py = std::fmin(std::fmax(py, 0.0), max_y);
    px = std::fmin(std::fmax(px, 0.0), max_x);
    const double iy = std::fmin(std::floor(py), max_y - 1.0);
    const double ix = std::fmin(std::floor(px), max_x - 1.0);
    const double fy = py - iy;
    const double fx = px - ix;
    const double* p = r.image + static_cast<std::size_t>(iy) * r.width + static_cast<std::size_t>(ix);
    const double v00 = p[0];
    const double v01 = p[1];
    const double v10 = p[r.width];
    const double v11 = p[r.width + 1];
    const double top = (1.0 - fx) * v00 + fx * v01;
    const double bottom = (1.0 - fx) * v10 + fx * v11;
    r.out[x] = (1.0 - fy) * top + fy * bottom;
    if (r.grad_y) r.grad_y[x] = inside_y ? bottom - top : 0.0;
    if (r.grad_x) r.grad_x[x] = inside_x ? (1.0 - fy) * (v01 - v00) + fy * (v11 - v10) : 0.0;
  }
}

}  // namespace detail

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", &dot_scalar, &axpy_scalar, &warp_row_scalar};
  return table;
}

}  // namespace qmr::simd
