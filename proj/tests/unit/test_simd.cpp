#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "qmr/simd.hpp"

using namespace qmr;

namespace {

// Plain bilinear sampler with border clamping, written independently of the
// kernels.
double bilinear(const std::vector<double>& img, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = std::min(static_cast<int>(std::floor(y)), h - 2);
  const int x0 = std::min(static_cast<int>(std::floor(x)), w - 2);
  const double fy = y - y0, fx = x - x0;
  auto at = [&](int yy, int xx) { return img[static_cast<std::size_t>(yy) * w + xx]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

struct RowCase {
  std::vector<double> out, gy, gx;
};

RowCase run_row(const simd::KernelTable& k, const std::vector<double>& img, int h, int w, int row,
                const std::vector<double>& dy, const std::vector<double>& dx) {
  RowCase r{std::vector<double>(w), std::vector<double>(w), std::vector<double>(w)};
  k.warp_row({img.data(), h, w, row, dy.data(), dx.data(), r.out.data(), r.gy.data(), r.gx.data()});
  return r;
}

}  // namespace

TEST_SUITE("simd") {
  TEST_CASE("scalar warp_row matches an independent bilinear sampler") {
    const int h = 13, w = 17;
    const auto img = test::uniform(h * w, 1);
    for (int row : {0, 6, 12}) {
      const auto dy = test::uniform(w, 10 + row, -4.0, 4.0);
      const auto dx = test::uniform(w, 20 + row, -4.0, 4.0);
      const RowCase r = run_row(simd::scalar_kernels(), img, h, w, row, dy, dx);
      for (int x = 0; x < w; ++x) {
        CHECK(r.out[x] == doctest::Approx(bilinear(img, h, w, row + dy[x], x + dx[x])).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("scalar warp_row derivatives match finite differences away from kinks") {
    const int h = 12, w = 12;
    const auto img = test::uniform(h * w, 2);
    std::vector<double> dy(w, 0.37), dx(w, -0.41);
    const RowCase r = run_row(simd::scalar_kernels(), img, h, w, 5, dy, dx);
    const double eps = 1e-6;
    for (int x = 1; x < w - 1; ++x) {
      const double fy = (bilinear(img, h, w, 5 + 0.37 + eps, x - 0.41) - bilinear(img, h, w, 5 + 0.37 - eps, x - 0.41)) / (2 * eps);
      const double fx = (bilinear(img, h, w, 5 + 0.37, x - 0.41 + eps) - bilinear(img, h, w, 5 + 0.37, x - 0.41 - eps)) / (2 * eps);
      CHECK(r.gy[x] == doctest::Approx(fy).epsilon(1e-6));
      CHECK(r.gx[x] == doctest::Approx(fx).epsilon(1e-6));
    }
  }

  TEST_CASE("active table is one of the known variants") {
    const auto name = simd::active().name;
    CHECK((name == "scalar" || name == "avx2"));
  }

  TEST_CASE("avx2 kernels agree with the scalar reference") {
    const simd::KernelTable* avx2 = simd::avx2_kernels();
    if (avx2 == nullptr) {
      MESSAGE("AVX2 kernels unavailable on this build or CPU; equivalence not exercised");
      return;
    }
    const simd::KernelTable& scalar = simd::scalar_kernels();

    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 1000u}) {
      const auto a = test::uniform(n, n + 1, -1.0, 1.0);
      const auto b = test::uniform(n, n + 2, -1.0, 1.0);
      double abs_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(a[i] * b[i]);
      // Reduction order differs; bound by the summation error of |a||b|.
      CHECK(std::abs(avx2->dot(a.data(), b.data(), n) - scalar.dot(a.data(), b.data(), n)) <=
            1e-15 * (abs_sum + 1.0) * static_cast<double>(n + 1));

      std::vector<double> y1 = b, y2 = b;
      scalar.axpy(0.731, a.data(), y1.data(), n);
      avx2->axpy(0.731, a.data(), y2.data(), n);
      CHECK(y1 == y2);
    }

    // Bitwise identical warps, including clamped, exact-integer and
    // out-of-range positions.
    for (int w : {5, 8, 13, 112}) {
      const int h = 9;
      const auto img = test::uniform(static_cast<std::size_t>(h) * w, w);
      for (int row = 0; row < h; ++row) {
        auto dy = test::uniform(w, 100 + row, -6.0, 6.0);
        auto dx = test::uniform(w, 200 + row, -6.0, 6.0);
        for (int x = 0; x < w; x += 3) {
          dy[x] = std::round(dy[x]);
          dx[x] = std::round(dx[x]);
        }
        const RowCase s = run_row(scalar, img, h, w, row, dy, dx);
        const RowCase v = run_row(*avx2, img, h, w, row, dy, dx);
        CHECK(s.out == v.out);
        CHECK(s.gy == v.gy);
        CHECK(s.gx == v.gx);
      }
    }
  }
}
