#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qmr/field.hpp"
#include "qmr/stack.hpp"

namespace qmr {

enum class TissueShape { disk, annulus };
enum class ContrastMode { pre_gd, post_gd };

const char* to_string(ContrastMode mode);
ContrastMode parse_contrast_mode(const std::string& text);

/// A tissue region with its own inversion-recovery parameters. Later tissues
/// paint over earlier ones; masks take the topmost tissue at each pixel.
struct Tissue {
  std::string label;
  TissueShape shape = TissueShape::disk;
  double center_y = 0.0;
  double center_x = 0.0;
  double inner_radius = 0.0;  // annulus only
  double outer_radius = 0.0;
  double t1_star_ms = 1000.0;
  double a = 1.0;
  double b = 2.0;
  bool roi = false;           // part of the evaluation ROI
};

struct PhantomConfig {
  int height = 112;
  int width = 112;
  std::vector<double> inversion_times;  // ms, one per frame
  Tissue background;                    // fills the whole image
  std::vector<Tissue> tissues;
  double amplitude = 4.0;               // largest planted displacement, px
  double motion_spacing = 16.0;         // control spacing of planted motion, px
  double motion_center_y = 56.0;
  double motion_center_x = 56.0;
  double motion_radius = 12.0;          // control points within this radius move
  double edge_width = 1.0;              // px; tissue boundaries are blended, 0 = hard
  double noise_sigma = 0.0;             // signal units
  bool magnitude = true;
  ContrastMode contrast = ContrastMode::pre_gd;
  std::uint64_t seed = 7;

  int frames() const { return static_cast<int>(inversion_times.size()); }
  void validate() const;

  /// 112 x 112 x 11 MOLLI-like phantom: background, a textured body, a
  /// left-ventricular blood pool inside a myocardial annulus, papillary
  /// muscles and a right ventricle. Tissue T1* values are design values.
  static PhantomConfig preset(ContrastMode mode);
};

/// 5(3)3 MOLLI inversion times, sorted: 120, 200, 280, ... ms.
std::vector<double> molli_inversion_times();

struct PhantomTruth {
  ImageStack clean;                 // deformed, noiseless
  ImageStack observed;              // clean + noise
  DisplacementField true_fields;    // correcting fields: warp(clean_n, T_n) is undeformed
  ControlGrid true_grids;
  std::vector<RoiMask> masks;       // one per tissue, then "roi" (union of roi tissues)
  RoiMask motion_region;            // where planted motion is nonzero
  Image true_t1_star;
  Image true_t1;                    // Look-Locker T1 = T1* (B/A - 1)

  const RoiMask& mask(const std::string& label) const;
};

PhantomTruth generate_phantom(const PhantomConfig& config);

/// Spread of the noiseless tissue signals over all inversion times; noise
/// levels given as a fraction of the signal range scale by this.
double signal_range(const PhantomConfig& config);

struct EndpointError {
  double mean = 0.0;
  double p95 = 0.0;
};

/// Euclidean error between fields after subtracting each one's mean over
/// frames (the unobservable common drift), over the region.
EndpointError endpoint_error(const DisplacementField& estimated, const DisplacementField& truth,
                             const RoiMask& region);

}  // namespace qmr
