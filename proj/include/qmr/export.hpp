#pragma once

#include <filesystem>

#include "qmr/stack.hpp"

namespace qmr {

/// Linear window [lo, hi] -> [0, 255], clamped. Non-finite pixels map to 0.
/// Throws config when hi <= lo.
void save_png(const Image& image, const std::filesystem::path& path, double lo, double hi);
void save_pgm(const Image& image, const std::filesystem::path& path, double lo, double hi);

/// Window from the finite extremes of the image (a flat image gets [v, v + 1]).
void save_png(const Image& image, const std::filesystem::path& path);

}  // namespace qmr
