#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace qmr {

/// Displacement channels. Channel 0 displaces rows (y), channel 1 columns (x).
enum Channel : int { channel_y = 0, channel_x = 1 };

/// Per-frame cubic B-spline control lattice, stored planar as
/// [frame][channel][grid_y][grid_x]. Control point k sits at pixel
/// coordinate (k - 1) * spacing, so the lattice carries one cell of padding
/// before the first pixel and two after the last.
class ControlGrid {
 public:
  ControlGrid() = default;
  ControlGrid(int frames, int grid_height, int grid_width, double spacing);

  /// Smallest lattice size covering pixels [0, extent) at the given spacing.
  static int required_size(int extent, double spacing);

  /// Zero lattice sized for an image of height x width.
  static ControlGrid for_image(int frames, int height, int width, double spacing);

  int frames() const noexcept { return frames_; }
  int grid_height() const noexcept { return grid_height_; }
  int grid_width() const noexcept { return grid_width_; }
  double spacing() const noexcept { return spacing_; }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(grid_height_) * grid_width_;
  }

  std::span<double> coefficients() noexcept { return data_; }
  std::span<const double> coefficients() const noexcept { return data_; }
  std::span<double> plane(int frame, int channel);
  std::span<const double> plane(int frame, int channel) const;

  double& at(int frame, int channel, int gy, int gx) {
    return data_[index(frame, channel, gy, gx)];
  }
  double at(int frame, int channel, int gy, int gx) const {
    return data_[index(frame, channel, gy, gx)];
  }

  bool same_shape(const ControlGrid& other) const noexcept;
  bool operator==(const ControlGrid&) const = default;

 private:
  std::size_t index(int frame, int channel, int gy, int gx) const {
    return ((static_cast<std::size_t>(frame) * 2 + channel) * grid_height_ + gy) * grid_width_ + gx;
  }

  int frames_ = 0;
  int grid_height_ = 0;
  int grid_width_ = 0;
  double spacing_ = 1.0;
  std::vector<double> data_;
};

/// Dense per-frame displacement in pixels, planar [frame][channel][y][x].
class DisplacementField {
 public:
  DisplacementField() = default;
  DisplacementField(int frames, int height, int width);

  int frames() const noexcept { return frames_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> plane(int frame, int channel);
  std::span<const double> plane(int frame, int channel) const;

  double& at(int frame, int channel, int y, int x) {
    return data_[(static_cast<std::size_t>(frame) * 2 + channel) * plane_size() +
                 static_cast<std::size_t>(y) * width_ + x];
  }
  double at(int frame, int channel, int y, int x) const {
    return data_[(static_cast<std::size_t>(frame) * 2 + channel) * plane_size() +
                 static_cast<std::size_t>(y) * width_ + x];
  }

  bool same_shape(const DisplacementField& other) const noexcept;
  double max_magnitude() const;
  double mean_magnitude() const;
  bool operator==(const DisplacementField&) const = default;

 private:
  int frames_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

}  // namespace qmr
