#pragma once

#include <array>
#include <span>

#include "qmr/field.hpp"
#include "qmr/stack.hpp"

namespace qmr {

/// Uniform cubic B-spline weights (B0..B3) for fractional offset u in [0, 1).
std::array<double, 4> cubic_basis(double u);
std::array<double, 4> cubic_basis_first_derivative(double u);
std::array<double, 4> cubic_basis_second_derivative(double u);

/// Dense field by tensor-product cubic interpolation of the lattice.
/// Throws dimension when the lattice is too small for height x width.
DisplacementField ffd_upsample(const ControlGrid& grid, int height, int width);

/// Transpose of ffd_upsample: maps a dense per-pixel gradient onto the
/// lattice coefficients of a grid shaped like `shape`.
ControlGrid ffd_adjoint(const DisplacementField& dense, const ControlGrid& shape);

/// Field value at a continuous pixel position (y, x).
double ffd_evaluate(const ControlGrid& grid, int frame, int channel, double y, double x);

/// Smallest Jacobian determinant of x -> x + u(x) over all pixels and frames,
/// from analytic spline derivatives.
double min_jacobian_determinant(const ControlGrid& grid, int height, int width);

/// Backward warp: out(x) = image(x + u(x)), bilinear, border-clamped.
Image warp_image(const Image& image, std::span<const double> disp_y, std::span<const double> disp_x);
ImageStack warp_stack(const ImageStack& stack, const DisplacementField& field);

/// Field whose single warp matches warping by `inner` and then by `outer`:
/// u(x) = u_outer(x) + u_inner(x + u_outer(x)), u_inner sampled bilinearly.
DisplacementField compose_displacements(const DisplacementField& outer, const DisplacementField& inner);

/// Pixel- and frame-averaged thin-plate bending energy of the dense field,
/// summed over both channels.
double bending_energy(const ControlGrid& grid, int height, int width);

struct BendingEnergy {
  double value = 0.0;
  ControlGrid gradient;
};
BendingEnergy bending_energy_with_gradient(const ControlGrid& grid, int height, int width);

}  // namespace qmr
