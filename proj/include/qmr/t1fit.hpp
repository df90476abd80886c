#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qmr/stack.hpp"

namespace qmr {

struct FitOptions {
  bool polarity_restore = false;  // magnitude data: search the sign-flip point
  bool look_locker = false;       // report T1 = T1* (B/A - 1) and its SD
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;
};

/// y(TI) = A - B exp(-TI / T1*).
double inversion_recovery(double a, double b, double t1_star, double ti);

struct PixelFit {
  double a = 0.0;
  double b = 0.0;
  double t1_star = 0.0;
  double t1 = 0.0;        // Look-Locker corrected when requested, else T1*
  double sd = 0.0;        // standard error of t1, ms
  double residual = 0.0;  // RMS of the residuals, signal units
  int flipped = 0;        // number of leading samples negated
  bool converged = false;
};

PixelFit fit_pixel(std::span<const double> inversion_times, std::span<const double> intensities,
                   const FitOptions& options = {});

struct T1MapResult {
  Image a_map;
  Image b_map;
  Image t1_star_map;
  Image t1_map;
  Image sd_map;
  Image residual_map;
  std::vector<std::uint8_t> converged;
};

/// Fits every pixel (or every masked pixel). Pixels outside the mask hold 0
/// and are marked unconverged. Needs inversion times on the stack.
T1MapResult fit_map(const ImageStack& stack, const RoiMask* mask, const FitOptions& options = {});

/// The five maps (A, B, T1*, T1, SD) as a stack for serialization.
ImageStack maps_to_stack(const T1MapResult& maps);

struct RoiStats {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t count = 0;
};

/// Statistics over masked pixels, restricted to converged ones when given.
RoiStats roi_stats(const Image& map, const RoiMask& mask,
                   std::span<const std::uint8_t> converged = {});

}  // namespace qmr
