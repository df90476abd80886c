#include "qmr/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qmr/error.hpp"
#include "qmr/simd.hpp"

namespace qmr {
namespace {

void check_unit_interval(double u) {
  if (!(u >= 0.0 && u < 1.0)) throw Error(ErrorKind::validation, "B-spline parameter must lie in [0, 1)");
}

std::array<double, 4> basis_of_order(double u, int order) {
  switch (order) {
    case 0: {
      const double v = 1.0 - u;
      return {v * v * v / 6.0, (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0,
              (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0, u * u * u / 6.0};
    }
    case 1: {
      const double v = 1.0 - u;
      return {-0.5 * v * v, (3.0 * u * u - 4.0 * u) / 2.0, (-3.0 * u * u + 2.0 * u + 1.0) / 2.0, 0.5 * u * u};
    }
    default:
      return {1.0 - u, 3.0 * u - 2.0, -3.0 * u + 1.0, u};
  }
}

// Per-pixel cubic weights along one axis; derivative weights are already
// scaled to pixel units.
struct AxisBasis {
  std::vector<int> first;
  std::vector<std::array<double, 4>> weights;
};

AxisBasis axis_basis(int extent, int grid_size, double spacing, int order) {
  if (grid_size < ControlGrid::required_size(extent, spacing)) {
    throw Error(ErrorKind::dimension, "control grid of " + std::to_string(grid_size) + " points at spacing " +
                                          std::to_string(spacing) + " cannot cover " + std::to_string(extent) +
                                          " pixels");
  }
  AxisBasis b;
  b.first.resize(extent);
  b.weights.resize(extent);
  const double scale = std::pow(spacing, -order);
  for (int p = 0; p < extent; ++p) {
    const double t = p / spacing;
    const double cell = std::floor(t);
    b.first[p] = static_cast<int>(cell);
    auto w = basis_of_order(t - cell, order);
    for (auto& v : w) v *= scale;
    b.weights[p] = w;
  }
  return b;
}

// dense(H x W) = By * C(Gh x Gw) * Bx^T
void apply_separable(std::span<const double> coeffs, int gh, int gw, const AxisBasis& by, const AxisBasis& bx,
                     std::span<double> dense) {
  const int h = static_cast<int>(by.first.size());
  const int w = static_cast<int>(bx.first.size());
  std::vector<double> rows(static_cast<std::size_t>(gh) * w);
  for (int gy = 0; gy < gh; ++gy) {
    const double* c = coeffs.data() + static_cast<std::size_t>(gy) * gw;
    double* t = rows.data() + static_cast<std::size_t>(gy) * w;
    for (int x = 0; x < w; ++x) {
      const auto& wx = bx.weights[x];
      const double* cc = c + bx.first[x];
      t[x] = wx[0] * cc[0] + wx[1] * cc[1] + wx[2] * cc[2] + wx[3] * cc[3];
    }
  }
  std::fill(dense.begin(), dense.end(), 0.0);
  for (int y = 0; y < h; ++y) {
    double* out = dense.data() + static_cast<std::size_t>(y) * w;
    for (int l = 0; l < 4; ++l) {
      simd::axpy(by.weights[y][l], rows.data() + static_cast<std::size_t>(by.first[y] + l) * w, out, w);
    }
  }
}

// coeffs += By^T * dense * Bx
void apply_separable_adjoint(std::span<const double> dense, const AxisBasis& by, const AxisBasis& bx, int gh,
                             int gw, std::span<double> coeffs) {
  const int h = static_cast<int>(by.first.size());
  const int w = static_cast<int>(bx.first.size());
  std::vector<double> rows(static_cast<std::size_t>(gh) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    const double* d = dense.data() + static_cast<std::size_t>(y) * w;
    for (int l = 0; l < 4; ++l) {
      simd::axpy(by.weights[y][l], d, rows.data() + static_cast<std::size_t>(by.first[y] + l) * w, w);
    }
  }
  for (int gy = 0; gy < gh; ++gy) {
    const double* t = rows.data() + static_cast<std::size_t>(gy) * w;
    double* c = coeffs.data() + static_cast<std::size_t>(gy) * gw;
    for (int x = 0; x < w; ++x) {
      const auto& wx = bx.weights[x];
      double* cc = c + bx.first[x];
      cc[0] += wx[0] * t[x];
      cc[1] += wx[1] * t[x];
      cc[2] += wx[2] * t[x];
      cc[3] += wx[3] * t[x];
    }
  }
}

void warp_plane(std::span<const double> image, int height, int width, std::span<const double> disp_y,
                std::span<const double> disp_x, std::span<double> out) {
  for (int y = 0; y < height; ++y) {
    const std::size_t off = static_cast<std::size_t>(y) * width;
    simd::warp_row({image.data(), height, width, y, disp_y.data() + off, disp_x.data() + off, out.data() + off,
                    nullptr, nullptr});
  }
}

}  // namespace

std::array<double, 4> cubic_basis(double u) {
  check_unit_interval(u);
  return basis_of_order(u, 0);
}

std::array<double, 4> cubic_basis_first_derivative(double u) {
  check_unit_interval(u);
  return basis_of_order(u, 1);
}

std::array<double, 4> cubic_basis_second_derivative(double u) {
  check_unit_interval(u);
  return basis_of_order(u, 2);
}

DisplacementField ffd_upsample(const ControlGrid& grid, int height, int width) {
  const AxisBasis by = axis_basis(height, grid.grid_height(), grid.spacing(), 0);
  const AxisBasis bx = axis_basis(width, grid.grid_width(), grid.spacing(), 0);
  DisplacementField field(grid.frames(), height, width);
  for (int n = 0; n < grid.frames(); ++n)
    for (int c = 0; c < 2; ++c)
      apply_separable(grid.plane(n, c), grid.grid_height(), grid.grid_width(), by, bx, field.plane(n, c));
  return field;
}

ControlGrid ffd_adjoint(const DisplacementField& dense, const ControlGrid& shape) {
  if (dense.frames() != shape.frames()) throw Error(ErrorKind::dimension, "frame count mismatch in FFD adjoint");
  const AxisBasis by = axis_basis(dense.height(), shape.grid_height(), shape.spacing(), 0);
  const AxisBasis bx = axis_basis(dense.width(), shape.grid_width(), shape.spacing(), 0);
  ControlGrid out(shape.frames(), shape.grid_height(), shape.grid_width(), shape.spacing());
  for (int n = 0; n < shape.frames(); ++n)
    for (int c = 0; c < 2; ++c)
      apply_separable_adjoint(dense.plane(n, c), by, bx, shape.grid_height(), shape.grid_width(), out.plane(n, c));
  return out;
}

double ffd_evaluate(const ControlGrid& grid, int frame, int channel, double y, double x) {
  const double s = grid.spacing();
  auto locate = [s](double p, int grid_size, int& first) {
    const double hi = std::nextafter((grid_size - 3) * s, 0.0);
    const double t = std::clamp(p, 0.0, hi) / s;
    const double cell = std::min(std::floor(t), static_cast<double>(grid_size - 4));
    first = static_cast<int>(cell);
    return std::min(t - cell, std::nextafter(1.0, 0.0));
  };
  int iy = 0;
  int ix = 0;
  const auto wy = basis_of_order(locate(y, grid.grid_height(), iy), 0);
  const auto wx = basis_of_order(locate(x, grid.grid_width(), ix), 0);
  double v = 0.0;
  for (int l = 0; l < 4; ++l) {
    double row = 0.0;
    for (int m = 0; m < 4; ++m) row += wx[m] * grid.at(frame, channel, iy + l, ix + m);
    v += wy[l] * row;
  }
  return v;
}

double min_jacobian_determinant(const ControlGrid& grid, int height, int width) {
  const int gh = grid.grid_height();
  const int gw = grid.grid_width();
  const AxisBasis by0 = axis_basis(height, gh, grid.spacing(), 0);
  const AxisBasis by1 = axis_basis(height, gh, grid.spacing(), 1);
  const AxisBasis bx0 = axis_basis(width, gw, grid.spacing(), 0);
  const AxisBasis bx1 = axis_basis(width, gw, grid.spacing(), 1);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<double> yy(plane), yx(plane), xy(plane), xx(plane);
  double worst = std::numeric_limits<double>::infinity();
  for (int n = 0; n < grid.frames(); ++n) {
    apply_separable(grid.plane(n, channel_y), gh, gw, by1, bx0, yy);
    apply_separable(grid.plane(n, channel_y), gh, gw, by0, bx1, yx);
    apply_separable(grid.plane(n, channel_x), gh, gw, by1, bx0, xy);
    apply_separable(grid.plane(n, channel_x), gh, gw, by0, bx1, xx);
    for (std::size_t i = 0; i < plane; ++i) {
      worst = std::min(worst, (1.0 + yy[i]) * (1.0 + xx[i]) - yx[i] * xy[i]);
    }
  }
  return worst;
}

Image warp_image(const Image& image, std::span<const double> disp_y, std::span<const double> disp_x) {
  if (disp_y.size() != image.size() || disp_x.size() != image.size()) {
    throw Error(ErrorKind::dimension, "displacement does not match image size");
  }
  if (image.height() < 2 || image.width() < 2) throw Error(ErrorKind::dimension, "image too small to warp");
  Image out(image.height(), image.width());
  warp_plane(image.values(), image.height(), image.width(), disp_y, disp_x, out.values());
  return out;
}

ImageStack warp_stack(const ImageStack& stack, const DisplacementField& field) {
  if (field.frames() != stack.frames() || field.height() != stack.height() || field.width() != stack.width()) {
    throw Error(ErrorKind::dimension, "field does not match stack dimensions");
  }
  std::vector<double> out(stack.values().size());
  const std::size_t plane = stack.frame_size();
  for (int n = 0; n < stack.frames(); ++n) {
    warp_plane(stack.frame(n), stack.height(), stack.width(), field.plane(n, channel_y), field.plane(n, channel_x),
               std::span<double>(out).subspan(n * plane, plane));
  }
  return stack.with_values(std::move(out));
}

DisplacementField compose_displacements(const DisplacementField& outer, const DisplacementField& inner) {
  if (!outer.same_shape(inner)) throw Error(ErrorKind::dimension, "cannot compose fields of different shape");
  DisplacementField out(outer.frames(), outer.height(), outer.width());
  std::vector<double> sampled(outer.plane_size());
  for (int n = 0; n < outer.frames(); ++n) {
    for (int c = 0; c < 2; ++c) {
      warp_plane(inner.plane(n, c), outer.height(), outer.width(), outer.plane(n, channel_y),
                 outer.plane(n, channel_x), sampled);
      auto dst = out.plane(n, c);
      auto o = outer.plane(n, c);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = o[i] + sampled[i];
    }
  }
  return out;
}

BendingEnergy bending_energy_with_gradient(const ControlGrid& grid, int height, int width) {
  const int gh = grid.grid_height();
  const int gw = grid.grid_width();
  const AxisBasis by0 = axis_basis(height, gh, grid.spacing(), 0);
  const AxisBasis by1 = axis_basis(height, gh, grid.spacing(), 1);
  const AxisBasis by2 = axis_basis(height, gh, grid.spacing(), 2);
  const AxisBasis bx0 = axis_basis(width, gw, grid.spacing(), 0);
  const AxisBasis bx1 = axis_basis(width, gw, grid.spacing(), 1);
  const AxisBasis bx2 = axis_basis(width, gw, grid.spacing(), 2);

  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const double norm = 1.0 / (static_cast<double>(grid.frames()) * plane);
  std::vector<double> dyy(plane), dxx(plane), dxy(plane);

  BendingEnergy out{0.0, ControlGrid(grid.frames(), gh, gw, grid.spacing())};
  for (int n = 0; n < grid.frames(); ++n) {
    for (int c = 0; c < 2; ++c) {
      const auto coeffs = grid.plane(n, c);
      apply_separable(coeffs, gh, gw, by2, bx0, dyy);
      apply_separable(coeffs, gh, gw, by0, bx2, dxx);
      apply_separable(coeffs, gh, gw, by1, bx1, dxy);
      double sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        sum += dyy[i] * dyy[i] + dxx[i] * dxx[i] + 2.0 * dxy[i] * dxy[i];
        dyy[i] *= 2.0 * norm;
        dxx[i] *= 2.0 * norm;
        dxy[i] *= 4.0 * norm;
      }
      out.value += sum * norm;
      auto g = out.gradient.plane(n, c);
      apply_separable_adjoint(dyy, by2, bx0, gh, gw, g);
      apply_separable_adjoint(dxx, by0, bx2, gh, gw, g);
      apply_separable_adjoint(dxy, by1, bx1, gh, gw, g);
    }
  }
  return out;
}

double bending_energy(const ControlGrid& grid, int height, int width) {
  return bending_energy_with_gradient(grid, height, width).value;
}

}  // namespace qmr
