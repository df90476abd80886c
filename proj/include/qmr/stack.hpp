#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qmr {

/// A single H x W frame of 64-bit intensities, row-major.
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);
  Image(int height, int width, std::vector<double> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

using Spacing = std::array<double, 2>;

/// N frames of H x W intensities with optional per-frame inversion times (ms).
///
/// Immutable after construction; every transformation returns a new stack.
/// The constructor enforces N >= 2, H, W >= 8, finite intensities and, when
/// present, exactly N strictly positive inversion times.
class ImageStack {
 public:
  ImageStack(int frames, int height, int width, std::vector<double> values,
             std::optional<std::vector<double>> inversion_times = std::nullopt,
             Spacing spacing = {1.0, 1.0});

  static ImageStack from_frames(const std::vector<Image>& frames,
                                std::optional<std::vector<double>> inversion_times = std::nullopt,
                                Spacing spacing = {1.0, 1.0});

  int frames() const noexcept { return frames_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t frame_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> frame(int n) const;
  Image frame_image(int n) const;

  const std::optional<std::vector<double>>& inversion_times() const noexcept { return inversion_times_; }
  const Spacing& spacing() const noexcept { return spacing_; }

  /// Same metadata, new intensities.
  ImageStack with_values(std::vector<double> values) const;
  ImageStack with_inversion_times(std::optional<std::vector<double>> inversion_times) const;

  bool operator==(const ImageStack&) const = default;

 private:
  int frames_;
  int height_;
  int width_;
  std::vector<double> data_;
  std::optional<std::vector<double>> inversion_times_;
  Spacing spacing_;
};

/// Boolean region of interest with a label ("myocardium", "blood-pool", ...).
class RoiMask {
 public:
  RoiMask(int height, int width, std::vector<std::uint8_t> mask, std::string label = "roi");

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const std::string& label() const noexcept { return label_; }
  std::span<const std::uint8_t> values() const noexcept { return mask_; }
  bool contains(std::size_t index) const { return mask_[index] != 0; }
  bool contains(int y, int x) const { return mask_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  std::size_t count() const noexcept;

  static RoiMask unite(const RoiMask& a, const RoiMask& b, std::string label);

  bool operator==(const RoiMask&) const = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> mask_;
  std::string label_;
};

/// Shared affine intensity map: normalized = (raw - offset) * scale.
struct IntensityMap {
  double offset = 0.0;
  double scale = 1.0;

  double apply(double raw) const { return (raw - offset) * scale; }
  double invert(double normalized) const { return normalized / scale + offset; }
};

struct NormalizedStack {
  ImageStack stack;
  IntensityMap map;
};

/// Maps the global minimum to 0 and the global maximum to 1 with one affine
/// map shared by every frame. Throws degenerate on a constant stack.
NormalizedStack normalize_stack(const ImageStack& stack);

/// Centered crop to height x width (the 224 -> 112 preprocessing step).
ImageStack crop_center(const ImageStack& stack, int height, int width);

}  // namespace qmr
