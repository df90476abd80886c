#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "qmr/field.hpp"
#include "qmr/stack.hpp"

namespace qmr::test {

inline std::vector<double> uniform(std::size_t count, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(count);
  for (double& v : out) v = dist(rng);
  return out;
}

inline ImageStack random_stack(int frames, int height, int width, std::uint64_t seed, double lo = 0.0,
                               double hi = 1.0) {
  return ImageStack(frames, height, width, uniform(static_cast<std::size_t>(frames) * height * width, seed, lo, hi));
}

// Smooth blobs, values in roughly [0.1, 0.9].
inline Image smooth_image(int height, int width, double phase = 0.0) {
  Image img(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      img(y, x) = 0.5 + 0.2 * std::sin(0.35 * y + phase) * std::cos(0.27 * x - 0.5 * phase) +
                  0.15 * std::exp(-((y - height / 2.0) * (y - height / 2.0) + (x - width / 3.0) * (x - width / 3.0)) /
                                  (0.05 * height * width));
    }
  }
  return img;
}

inline ControlGrid random_grid(int frames, int height, int width, double spacing, double scale, std::uint64_t seed) {
  ControlGrid g = ControlGrid::for_image(frames, height, width, spacing);
  const auto values = uniform(g.coefficients().size(), seed, -scale, scale);
  std::copy(values.begin(), values.end(), g.coefficients().begin());
  return g;
}

inline double rms_difference(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

/// Fresh per-test scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("qmr-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace qmr::test
