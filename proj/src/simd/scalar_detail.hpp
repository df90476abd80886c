#pragma once

#include "qmr/simd.hpp"

namespace qmr::simd::detail {

// Scalar warp over columns [begin, width); vector variants use it for tails.
void warp_columns_scalar(const WarpRow& r, int begin);

}  // namespace qmr::simd::detail
