#pragma once

// QMRSTACK container:
//   bytes 0-8   "QMRSTACK1"
//   byte  9     '\n'
//   bytes 10-13 little-endian uint32 header length n
//   n bytes     UTF-8 JSON header (n_frames, height, width, dtype, optional
//               inversion_times_ms, spacing_mm, channels, label)
//   payload     n_frames * height * width * channels values, frame-major,
//               row-major, channels interleaved; dtype "f32le" or "u8".

#include <filesystem>

#include "qmr/field.hpp"
#include "qmr/stack.hpp"

namespace qmr {

/// Intensities are written as 32-bit floats. Any stack whose values are
/// float-representable (in particular every stack read by load_stack)
/// round-trips bit-exactly.
void save_stack(const ImageStack& stack, const std::filesystem::path& path);
ImageStack load_stack(const std::filesystem::path& path);

void save_mask(const RoiMask& mask, const std::filesystem::path& path);
RoiMask load_mask(const std::filesystem::path& path);

/// Fields use dtype "f32le" with channels = 2 (y, x).
void save_field(const DisplacementField& field, const std::filesystem::path& path);
DisplacementField load_field(const std::filesystem::path& path);

}  // namespace qmr
