#include "qmr/stack.hpp"

#include <algorithm>
#include <cmath>

#include "qmr/error.hpp"

namespace qmr {

Image::Image(int height, int width, double fill)
    : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
  if (height < 0 || width < 0) throw Error(ErrorKind::dimension, "negative image extent");
}

Image::Image(int height, int width, std::vector<double> values)
    : height_(height), width_(width), data_(std::move(values)) {
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw Error(ErrorKind::dimension, "image value count does not match extent");
  }
}

ImageStack::ImageStack(int frames, int height, int width, std::vector<double> values,
                       std::optional<std::vector<double>> inversion_times, Spacing spacing)
    : frames_(frames),
      height_(height),
      width_(width),
      data_(std::move(values)),
      inversion_times_(std::move(inversion_times)),
      spacing_(spacing) {
  if (frames < 2) throw Error(ErrorKind::validation, "a stack needs at least 2 frames");
  if (height < 8 || width < 8) throw Error(ErrorKind::validation, "frames must be at least 8 x 8");
  if (data_.size() != static_cast<std::size_t>(frames) * height * width) {
    throw Error(ErrorKind::dimension, "stack value count does not match N x H x W");
  }
  if (!std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); })) {
    throw Error(ErrorKind::validation, "stack contains non-finite intensities");
  }
  if (inversion_times_) {
    if (static_cast<int>(inversion_times_->size()) != frames) {
      throw Error(ErrorKind::validation, "inversion time count must equal frame count");
    }
    for (double ti : *inversion_times_) {
      if (!(ti > 0.0) || !std::isfinite(ti)) {
        throw Error(ErrorKind::validation, "inversion times must be finite and positive");
      }
    }
  }
  if (!(spacing_[0] > 0.0) || !(spacing_[1] > 0.0)) {
    throw Error(ErrorKind::validation, "pixel spacing must be positive");
  }
}

ImageStack ImageStack::from_frames(const std::vector<Image>& frames,
                                   std::optional<std::vector<double>> inversion_times, Spacing spacing) {
  if (frames.empty()) throw Error(ErrorKind::validation, "a stack needs at least 2 frames");
  const int h = frames.front().height();
  const int w = frames.front().width();
  std::vector<double> values;
  values.reserve(frames.size() * frames.front().size());
  for (const auto& f : frames) {
    if (f.height() != h || f.width() != w) throw Error(ErrorKind::dimension, "frames differ in size");
    values.insert(values.end(), f.values().begin(), f.values().end());
  }
  return ImageStack(static_cast<int>(frames.size()), h, w, std::move(values), std::move(inversion_times),
                    spacing);
}

std::span<const double> ImageStack::frame(int n) const {
  if (n < 0 || n >= frames_) throw Error(ErrorKind::dimension, "frame index out of range");
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(n) * frame_size(), frame_size());
}

Image ImageStack::frame_image(int n) const {
  auto f = frame(n);
  return Image(height_, width_, std::vector<double>(f.begin(), f.end()));
}

ImageStack ImageStack::with_values(std::vector<double> values) const {
  return ImageStack(frames_, height_, width_, std::move(values), inversion_times_, spacing_);
}

ImageStack ImageStack::with_inversion_times(std::optional<std::vector<double>> inversion_times) const {
  return ImageStack(frames_, height_, width_, data_, std::move(inversion_times), spacing_);
}

RoiMask::RoiMask(int height, int width, std::vector<std::uint8_t> mask, std::string label)
    : height_(height), width_(width), mask_(std::move(mask)), label_(std::move(label)) {
  if (mask_.size() != static_cast<std::size_t>(height) * width) {
    throw Error(ErrorKind::dimension, "mask value count does not match extent");
  }
  for (auto& v : mask_) {
    if (v > 1) throw Error(ErrorKind::validation, "mask values must be 0 or 1");
  }
  if (count() == 0) throw Error(ErrorKind::validation, "mask '" + label_ + "' is empty");
}

std::size_t RoiMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

RoiMask RoiMask::unite(const RoiMask& a, const RoiMask& b, std::string label) {
  if (a.height_ != b.height_ || a.width_ != b.width_) throw Error(ErrorKind::dimension, "mask extents differ");
  std::vector<std::uint8_t> m(a.mask_.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (a.mask_[i] | b.mask_[i]);
  return RoiMask(a.height_, a.width_, std::move(m), std::move(label));
}

NormalizedStack normalize_stack(const ImageStack& stack) {
  const auto values = stack.values();
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*hi > *lo)) throw Error(ErrorKind::degenerate, "cannot normalize a constant stack");
  IntensityMap map{*lo, 1.0 / (*hi - *lo)};
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(map.apply(values[i]), 0.0, 1.0);
  return {stack.with_values(std::move(out)), map};
}

ImageStack crop_center(const ImageStack& stack, int height, int width) {
  if (height > stack.height() || width > stack.width()) {
    throw Error(ErrorKind::dimension, "crop larger than the stack");
  }
  const int y0 = (stack.height() - height) / 2;
  const int x0 = (stack.width() - width) / 2;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(stack.frames()) * height * width);
  for (int n = 0; n < stack.frames(); ++n) {
    auto f = stack.frame(n);
    for (int y = 0; y < height; ++y) {
      auto row = f.subspan(static_cast<std::size_t>(y + y0) * stack.width() + x0, width);
      out.insert(out.end(), row.begin(), row.end());
    }
  }
  return ImageStack(stack.frames(), height, width, std::move(out), stack.inversion_times(), stack.spacing());
}

}  // namespace qmr
