#include "qmr/field.hpp"

#include <cmath>

#include "qmr/error.hpp"

namespace qmr {

ControlGrid::ControlGrid(int frames, int grid_height, int grid_width, double spacing)
    : frames_(frames), grid_height_(grid_height), grid_width_(grid_width), spacing_(spacing) {
  if (frames < 1) throw Error(ErrorKind::config, "control grid needs at least one frame");
  if (grid_height < 4 || grid_width < 4) throw Error(ErrorKind::config, "cubic control grid must be at least 4 x 4");
  if (!(spacing > 0.0)) throw Error(ErrorKind::config, "control spacing must be positive");
  data_.assign(static_cast<std::size_t>(frames) * 2 * plane_size(), 0.0);
}

int ControlGrid::required_size(int extent, double spacing) {
  if (extent < 1 || !(spacing > 0.0)) throw Error(ErrorKind::config, "invalid extent or spacing");
  return static_cast<int>(std::floor((extent - 1) / spacing)) + 4;
}

ControlGrid ControlGrid::for_image(int frames, int height, int width, double spacing) {
  return ControlGrid(frames, required_size(height, spacing), required_size(width, spacing), spacing);
}

std::span<double> ControlGrid::plane(int frame, int channel) {
  return std::span<double>(data_).subspan((static_cast<std::size_t>(frame) * 2 + channel) * plane_size(),
                                          plane_size());
}

std::span<const double> ControlGrid::plane(int frame, int channel) const {
  return std::span<const double>(data_).subspan((static_cast<std::size_t>(frame) * 2 + channel) * plane_size(),
                                                plane_size());
}

bool ControlGrid::same_shape(const ControlGrid& other) const noexcept {
  return frames_ == other.frames_ && grid_height_ == other.grid_height_ && grid_width_ == other.grid_width_ &&
         spacing_ == other.spacing_;
}

DisplacementField::DisplacementField(int frames, int height, int width)
    : frames_(frames), height_(height), width_(width) {
  if (frames < 1 || height < 1 || width < 1) throw Error(ErrorKind::dimension, "empty displacement field");
  data_.assign(static_cast<std::size_t>(frames) * 2 * plane_size(), 0.0);
}

std::span<double> DisplacementField::plane(int frame, int channel) {
  return std::span<double>(data_).subspan((static_cast<std::size_t>(frame) * 2 + channel) * plane_size(),
                                          plane_size());
}

std::span<const double> DisplacementField::plane(int frame, int channel) const {
  return std::span<const double>(data_).subspan((static_cast<std::size_t>(frame) * 2 + channel) * plane_size(),
                                                plane_size());
}

bool DisplacementField::same_shape(const DisplacementField& other) const noexcept {
  return frames_ == other.frames_ && height_ == other.height_ && width_ == other.width_;
}

double DisplacementField::max_magnitude() const {
  double best = 0.0;
  for (int n = 0; n < frames_; ++n) {
    auto uy = plane(n, channel_y);
    auto ux = plane(n, channel_x);
    for (std::size_t i = 0; i < plane_size(); ++i) best = std::max(best, std::hypot(uy[i], ux[i]));
  }
  return best;
}

double DisplacementField::mean_magnitude() const {
  double sum = 0.0;
  for (int n = 0; n < frames_; ++n) {
    auto uy = plane(n, channel_y);
    auto ux = plane(n, channel_x);
    for (std::size_t i = 0; i < plane_size(); ++i) sum += std::hypot(uy[i], ux[i]);
  }
  return sum / (static_cast<double>(frames_) * plane_size());
}

}  // namespace qmr
