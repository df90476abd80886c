#include <cstdlib>
#include <string>

#include "qmr/simd.hpp"

namespace qmr::simd {

#ifndef QMR_HAVE_AVX2
const KernelTable* avx2_kernels() { return nullptr; }
#endif

namespace {

const KernelTable& select() {
  const char* env = std::getenv("QMR_SIMD");
  const std::string wanted = env ? env : "";
  if (wanted == "scalar") return scalar_kernels();
  if (const KernelTable* avx2 = avx2_kernels()) return *avx2;
  return scalar_kernels();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace qmr::simd
