#include "qmr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "qmr/bspline.hpp"
#include "qmr/error.hpp"
#include "qmr/t1fit.hpp"

namespace qmr {
namespace {

struct Params {
  double a, b, t1_star;
};

bool covers(const Tissue& t, double y, double x) {
  const double r = std::hypot(y - t.center_y, x - t.center_x);
  if (t.shape == TissueShape::disk) return r <= t.outer_radius;
  return r >= t.inner_radius && r <= t.outer_radius;
}

// Index of the topmost tissue at a point, -1 for background.
int tissue_at(const PhantomConfig& config, double y, double x) {
  for (int i = static_cast<int>(config.tissues.size()) - 1; i >= 0; --i) {
    if (covers(config.tissues[i], y, x)) return i;
  }
  return -1;
}

// Smooth membership in [0, 1]; a Gaussian-CDF edge of the configured width.
double membership(const Tissue& t, double y, double x, double width) {
  if (width <= 0.0) return covers(t, y, x) ? 1.0 : 0.0;
  const double r = std::hypot(y - t.center_y, x - t.center_x);
  auto step = [&](double d) { return 0.5 * std::erfc(-d / (width * std::sqrt(2.0))); };
  double m = step(t.outer_radius - r);
  if (t.shape == TissueShape::annulus) m *= step(r - t.inner_radius);
  return m;
}

// Tissues are composited in order, blending A, B and T1* so every point
// still follows the three-parameter recovery model exactly.
Params params_at(const PhantomConfig& config, double y, double x) {
  Params p{config.background.a, config.background.b, config.background.t1_star_ms};
  for (const Tissue& t : config.tissues) {
    const double m = membership(t, y, x, config.edge_width);
    if (m == 0.0) continue;
    p.a += m * (t.a - p.a);
    p.b += m * (t.b - p.b);
    p.t1_star += m * (t.t1_star_ms - p.t1_star);
  }
  return p;
}

Tissue make(std::string label, TissueShape shape, double cy, double cx, double inner, double outer, double t1s,
            double a, bool roi = false) {
  return {std::move(label), shape, cy, cx, inner, outer, t1s, a, 1.9 * a, roi};
}

}  // namespace

const char* to_string(ContrastMode mode) { return mode == ContrastMode::pre_gd ? "pre-gd" : "post-gd"; }

ContrastMode parse_contrast_mode(const std::string& text) {
  if (text == "pre-gd" || text == "pre_gd") return ContrastMode::pre_gd;
  if (text == "post-gd" || text == "post_gd") return ContrastMode::post_gd;
  throw Error(ErrorKind::config, "unknown contrast mode '" + text + "' (expected pre-gd or post-gd)");
}

std::vector<double> molli_inversion_times() {
  return {120.0, 200.0, 280.0, 1120.0, 1200.0, 1280.0, 2120.0, 2200.0, 2280.0, 3120.0, 4120.0};
}

void PhantomConfig::validate() const {
  if (height < 8 || width < 8) throw Error(ErrorKind::config, "phantom must be at least 8 x 8");
  if (frames() < 2) throw Error(ErrorKind::config, "phantom needs at least two inversion times");
  for (double ti : inversion_times) {
    if (!(ti > 0.0) || !std::isfinite(ti)) throw Error(ErrorKind::config, "inversion times must be positive");
  }
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw Error(ErrorKind::config, "amplitude must be >= 0");
  if (!(motion_spacing > 0.0)) throw Error(ErrorKind::config, "motion spacing must be positive");
  if (!(motion_radius >= 0.0)) throw Error(ErrorKind::config, "motion radius must be >= 0");
  if (!(edge_width >= 0.0) || !std::isfinite(edge_width)) throw Error(ErrorKind::config, "edge width must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw Error(ErrorKind::config, "noise sigma must be >= 0");
  auto check = [&](const Tissue& t) {
    if (!(t.t1_star_ms > 0.0)) throw Error(ErrorKind::config, "tissue '" + t.label + "' needs T1* > 0");
    if (!std::isfinite(t.a) || !std::isfinite(t.b)) throw Error(ErrorKind::config, "non-finite tissue signal");
  };
  check(background);
  for (const Tissue& t : tissues) {
    check(t);
    if (t.label.empty() || t.label == "background" || t.label == "roi") {
      throw Error(ErrorKind::config, "tissue labels must be non-empty and not reserved");
    }
    if (!(t.outer_radius > 0.0) || (t.shape == TissueShape::annulus && !(t.inner_radius < t.outer_radius))) {
      throw Error(ErrorKind::config, "tissue '" + t.label + "' has invalid radii");
    }
    if (t.center_y - t.outer_radius < 0.0 || t.center_x - t.outer_radius < 0.0 ||
        t.center_y + t.outer_radius > height - 1 || t.center_x + t.outer_radius > width - 1) {
      throw Error(ErrorKind::config, "tissue '" + t.label + "' extends outside the image");
    }
  }
}

PhantomConfig PhantomConfig::preset(ContrastMode mode) {
  const bool pre = mode == ContrastMode::pre_gd;
  PhantomConfig c;
  c.contrast = mode;
  c.inversion_times = molli_inversion_times();
  c.background = make("background", TissueShape::disk, 0, 0, 0, 0, pre ? 300.0 : 200.0, 0.3);
  const double body = pre ? 900.0 : 380.0;
  c.tissues = {
      make("body", TissueShape::disk, 56, 56, 0, 50, body, 0.8),
      make("texture-1", TissueShape::disk, 22, 40, 0, 7, pre ? 700.0 : 300.0, 0.9),
      make("texture-2", TissueShape::disk, 26, 80, 0, 6, pre ? 1100.0 : 450.0, 0.6),
      make("texture-3", TissueShape::disk, 88, 30, 0, 8, pre ? 800.0 : 320.0, 1.0),
      make("texture-4", TissueShape::disk, 92, 76, 0, 6, pre ? 1000.0 : 420.0, 0.7),
      make("texture-5", TissueShape::disk, 56, 96, 0, 5, pre ? 650.0 : 280.0, 0.9),
      make("right-ventricle", TissueShape::disk, 56, 30, 0, 11, pre ? 1600.0 : 350.0, 1.0),
      make("myocardium", TissueShape::annulus, 56, 58, 13, 21, pre ? 1200.0 : 500.0, 0.7, true),
      make("blood-pool", TissueShape::disk, 56, 58, 0, 13, pre ? 1600.0 : 350.0, 1.0, true),
      make("papillary-1", TissueShape::disk, 50, 64, 0, 3, pre ? 1200.0 : 500.0, 0.7, true),
      make("papillary-2", TissueShape::disk, 63, 63, 0, 3, pre ? 1200.0 : 500.0, 0.7, true),
  };
  return c;
}

const RoiMask& PhantomTruth::mask(const std::string& label) const {
  for (const RoiMask& m : masks) {
    if (m.label() == label) return m;
  }
  throw Error(ErrorKind::config, "phantom has no mask '" + label + "'");
}

PhantomTruth generate_phantom(const PhantomConfig& config) {
  config.validate();
  const int h = config.height;
  const int w = config.width;
  const int frames = config.frames();
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // Planted correcting fields: random control values on the points near the
  // motion centre, zero-mean across frames, scaled to the requested peak.
  ControlGrid grids = ControlGrid::for_image(frames, h, w, config.motion_spacing);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  if (config.amplitude > 0.0) {
    for (int gy = 0; gy < grids.grid_height(); ++gy) {
      for (int gx = 0; gx < grids.grid_width(); ++gx) {
        const double py = (gy - 1) * config.motion_spacing;
        const double px = (gx - 1) * config.motion_spacing;
        if (std::hypot(py - config.motion_center_y, px - config.motion_center_x) > config.motion_radius) continue;
        for (int c = 0; c < 2; ++c) {
          double mean = 0.0;
          for (int n = 0; n < frames; ++n) {
            grids.at(n, c, gy, gx) = normal(rng);
            mean += grids.at(n, c, gy, gx);
          }
          mean /= frames;
          for (int n = 0; n < frames; ++n) grids.at(n, c, gy, gx) -= mean;
        }
      }
    }
    const double peak = ffd_upsample(grids, h, w).max_magnitude();
    if (peak > 0.0) {
      for (double& v : grids.coefficients()) v *= config.amplitude / peak;
    }
    if (min_jacobian_determinant(grids, h, w) <= 0.0) {
      throw Error(ErrorKind::config, "planted motion folds; reduce the amplitude");
    }
  }
  const DisplacementField fields = ffd_upsample(grids, h, w);

  std::vector<double> clean(frames * plane);
  for (int n = 0; n < frames; ++n) {
    const double ti = config.inversion_times[n];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Source point p with p + T(p) = (y, x), by fixed-point iteration.
        double sy = y, sx = x;
        if (config.amplitude > 0.0) {
          for (int it = 0; it < 100; ++it) {
            const double ny = y - ffd_evaluate(grids, n, channel_y, sy, sx);
            const double nx = x - ffd_evaluate(grids, n, channel_x, sy, sx);
            const double change = std::abs(ny - sy) + std::abs(nx - sx);
            sy = ny;
            sx = nx;
            if (change < 1e-12) break;
          }
        }
        const Params p = params_at(config, sy, sx);
        const double signal = inversion_recovery(p.a, p.b, p.t1_star, ti);
        clean[n * plane + static_cast<std::size_t>(y) * w + x] = config.magnitude ? std::abs(signal) : signal;
      }
    }
  }
  std::vector<double> observed = clean;
  if (config.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config.noise_sigma);
    for (double& v : observed) v += noise(rng);
  }

  Image t1_star(h, w), t1(h, w);
  std::vector<std::vector<std::uint8_t>> tissue_masks(config.tissues.size() + 1, std::vector<std::uint8_t>(plane, 0));
  std::vector<std::uint8_t> roi(plane, 0), motion(plane, 0);
  // Cubic kernels reach two control spacings past the moving points.
  const double motion_extent = config.motion_radius + 2.0 * config.motion_spacing;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const int k = tissue_at(config, y, x);
      tissue_masks[k + 1][i] = 1;
      if (k >= 0 && config.tissues[k].roi) roi[i] = 1;
      const Params p = params_at(config, y, x);
      t1_star(y, x) = p.t1_star;
      t1(y, x) = p.t1_star * (p.b / p.a - 1.0);
      if (std::hypot(y - config.motion_center_y, x - config.motion_center_x) <= motion_extent) motion[i] = 1;
    }
  }
  std::vector<RoiMask> masks;
  auto add = [&](std::vector<std::uint8_t>& m, const std::string& label) {
    if (std::find(m.begin(), m.end(), 1) != m.end()) masks.emplace_back(h, w, std::move(m), label);
  };
  add(tissue_masks[0], "background");
  for (std::size_t k = 0; k < config.tissues.size(); ++k) add(tissue_masks[k + 1], config.tissues[k].label);
  add(roi, "roi");
  if (std::find(motion.begin(), motion.end(), 1) == motion.end()) {
    motion[static_cast<std::size_t>(std::clamp(static_cast<int>(config.motion_center_y), 0, h - 1)) * w +
           std::clamp(static_cast<int>(config.motion_center_x), 0, w - 1)] = 1;
  }

  const auto& ti = config.inversion_times;
  return PhantomTruth{ImageStack(frames, h, w, std::move(clean), ti),
                      ImageStack(frames, h, w, std::move(observed), ti),
                      fields,
                      std::move(grids),
                      std::move(masks),
                      RoiMask(h, w, std::move(motion), "motion"),
                      std::move(t1_star),
                      std::move(t1)};
}

double signal_range(const PhantomConfig& config) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  auto visit = [&](const Tissue& t) {
    for (double ti : config.inversion_times) {
      double v = inversion_recovery(t.a, t.b, t.t1_star_ms, ti);
      if (config.magnitude) v = std::abs(v);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  };
  visit(config.background);
  for (const Tissue& t : config.tissues) visit(t);
  return hi > lo ? hi - lo : 0.0;
}

EndpointError endpoint_error(const DisplacementField& estimated, const DisplacementField& truth,
                             const RoiMask& region) {
  if (estimated.frames() != truth.frames() || estimated.height() != truth.height() ||
      estimated.width() != truth.width()) {
    throw Error(ErrorKind::dimension, "displacement fields differ in shape");
  }
  if (region.height() != truth.height() || region.width() != truth.width()) {
    throw Error(ErrorKind::dimension, "region does not match the fields");
  }
  const int frames = truth.frames();
  const std::size_t plane = truth.plane_size();
  std::vector<double> errors;
  errors.reserve(region.count() * frames);
  std::vector<double> diff(frames * 2);
  for (std::size_t i = 0; i < plane; ++i) {
    if (!region.contains(i)) continue;
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (int n = 0; n < frames; ++n) {
        diff[n * 2 + c] = estimated.plane(n, c)[i] - truth.plane(n, c)[i];
        mean += diff[n * 2 + c];
      }
      mean /= frames;
      for (int n = 0; n < frames; ++n) diff[n * 2 + c] -= mean;
    }
    for (int n = 0; n < frames; ++n) errors.push_back(std::hypot(diff[n * 2], diff[n * 2 + 1]));
  }
  EndpointError out;
  if (errors.empty()) return out;
  double sum = 0.0;
  for (double e : errors) sum += e;
  out.mean = sum / static_cast<double>(errors.size());
  const std::size_t k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(errors.size()))) - 1;
  std::nth_element(errors.begin(), errors.begin() + static_cast<std::ptrdiff_t>(k), errors.end());
  out.p95 = errors[k];
  return out;
}

}  // namespace qmr
