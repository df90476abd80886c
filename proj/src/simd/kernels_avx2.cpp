#include <immintrin.h>

#include <cmath>

#include "qmr/simd.hpp"
#include "scalar_detail.hpp"

namespace qmr::simd {
namespace {

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  acc0 = _mm256_add_pd(acc0, acc1);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc0);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void warp_row_avx2(const WarpRow& r) {
  const double max_y = r.height - 1;
  const double max_x = r.width - 1;
  const __m256d vmax_y = _mm256_set1_pd(max_y);
  const __m256d vmax_x = _mm256_set1_pd(max_x);
  const __m256d vlast_y = _mm256_set1_pd(max_y - 1.0);
  const __m256d vlast_x = _mm256_set1_pd(max_x - 1.0);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d vrow = _mm256_set1_pd(r.row);
  const __m128i vwidth = _mm_set1_epi32(r.width);
  const __m128i vone = _mm_set1_epi32(1);

  int x = 0;
  for (; x + 4 <= r.width; x += 4) {
    const __m256d xs = _mm256_setr_pd(x, x + 1, x + 2, x + 3);
    __m256d py = _mm256_add_pd(vrow, _mm256_loadu_pd(r.disp_y + x));
    __m256d px = _mm256_add_pd(xs, _mm256_loadu_pd(r.disp_x + x));
    const __m256d inside_y =
        _mm256_and_pd(_mm256_cmp_pd(py, zero, _CMP_GE_OQ), _mm256_cmp_pd(py, vmax_y, _CMP_LE_OQ));
    const __m256d inside_x =
        _mm256_and_pd(_mm256_cmp_pd(px, zero, _CMP_GE_OQ), _mm256_cmp_pd(px, vmax_x, _CMP_LE_OQ));
    py = _mm256_min_pd(_mm256_max_pd(py, zero), vmax_y);
    px = _mm256_min_pd(_mm256_max_pd(px, zero), vmax_x);
    const __m256d iy = _mm256_min_pd(_mm256_floor_pd(py), vlast_y);
    const __m256d ix = _mm256_min_pd(_mm256_floor_pd(px), vlast_x);
    const __m256d fy = _mm256_sub_pd(py, iy);
    const __m256d fx = _mm256_sub_pd(px, ix);

    const __m128i idx = _mm_add_epi32(_mm_mullo_epi32(_mm256_cvttpd_epi32(iy), vwidth), _mm256_cvttpd_epi32(ix));
    const __m256d v00 = _mm256_i32gather_pd(r.image, idx, 8);
    const __m256d v01 = _mm256_i32gather_pd(r.image, _mm_add_epi32(idx, vone), 8);
    const __m128i idx_down = _mm_add_epi32(idx, vwidth);
    const __m256d v10 = _mm256_i32gather_pd(r.image, idx_down, 8);
    const __m256d v11 = _mm256_i32gather_pd(r.image, _mm_add_epi32(idx_down, vone), 8);

    const __m256d gx = _mm256_sub_pd(one, fx);
    const __m256d gy = _mm256_sub_pd(one, fy);
    const __m256d top = _mm256_add_pd(_mm256_mul_pd(gx, v00), _mm256_mul_pd(fx, v01));
    const __m256d bottom = _mm256_add_pd(_mm256_mul_pd(gx, v10), _mm256_mul_pd(fx, v11));
    _mm256_storeu_pd(r.out + x, _mm256_add_pd(_mm256_mul_pd(gy, top), _mm256_mul_pd(fy, bottom)));
    if (r.grad_y) _mm256_storeu_pd(r.grad_y + x, _mm256_and_pd(inside_y, _mm256_sub_pd(bottom, top)));
    if (r.grad_x) {
      const __m256d d = _mm256_add_pd(_mm256_mul_pd(gy, _mm256_sub_pd(v01, v00)),
                                      _mm256_mul_pd(fy, _mm256_sub_pd(v11, v10)));
      _mm256_storeu_pd(r.grad_x + x, _mm256_and_pd(inside_x, d));
    }
  }
  detail::warp_columns_scalar(r, x);
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", &dot_avx2, &axpy_avx2, &warp_row_avx2};
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &table : nullptr;
}

}  // namespace qmr::simd
