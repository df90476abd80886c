#include "qmr/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <vector>

#include <png.h>

#include "qmr/error.hpp"

namespace qmr {
namespace {

std::vector<unsigned char> quantize(const Image& image, double lo, double hi) {
  if (!(hi > lo)) throw Error(ErrorKind::config, "display window must satisfy hi > lo");
  std::vector<unsigned char> out(image.size());
  const auto values = image.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v)) continue;
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    out[i] = static_cast<unsigned char>(std::lround(t * 255.0));
  }
  return out;
}

}  // namespace

void save_png(const Image& image, const std::filesystem::path& path, double lo, double hi) {
  const std::vector<unsigned char> pixels = quantize(image, lo, hi);
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height(); ++y) {
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * image.width());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void save_pgm(const Image& image, const std::filesystem::path& path, double lo, double hi) {
  const std::vector<unsigned char> pixels = quantize(image, lo, hi);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  os << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw Error(ErrorKind::io, "failed writing '" + path.string() + "'");
}

void save_png(const Image& image, const std::filesystem::path& path) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : image.values()) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  save_png(image, path, lo, hi > lo ? hi : lo + 1.0);
}

}  // namespace qmr
