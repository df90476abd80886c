#pragma once

// Data-parallel inner loops shared by the numerical modules. Each kernel has a
// scalar reference implementation and, on x86-64, an AVX2/FMA variant chosen
// at runtime. QMR_SIMD=scalar|avx2 overrides the automatic choice.

#include <cstddef>
#include <string_view>

namespace qmr::simd {

struct WarpRow {
  const double* image;   // source frame, row-major
  int height;
  int width;
  int row;               // output row y
  const double* disp_y;  // width displacements for this row
  const double* disp_x;
  double* out;           // width samples
  double* grad_y;        // optional d(out)/d(disp_y), may be null
  double* grad_x;        // optional d(out)/d(disp_x), may be null
};

struct KernelTable {
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // Backward bilinear sampling of one output row with border clamping.
  void (*warp_row)(const WarpRow& args);
};

const KernelTable& scalar_kernels();

/// Null when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels();

/// The table used by the library: AVX2 when available unless overridden.
const KernelTable& active();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void warp_row(const WarpRow& args) { active().warp_row(args); }

}  // namespace qmr::simd
