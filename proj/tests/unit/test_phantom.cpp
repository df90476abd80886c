#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "qmr/bspline.hpp"
#include "qmr/error.hpp"
#include "qmr/metrics.hpp"
#include "qmr/phantom.hpp"
#include "qmr/t1fit.hpp"

using namespace qmr;

namespace {

PhantomConfig still(ContrastMode mode = ContrastMode::pre_gd) {
  PhantomConfig c = PhantomConfig::preset(mode);
  c.amplitude = 0.0;
  c.noise_sigma = 0.0;
  return c;
}

double field_norm(const DisplacementField& f, int n, std::size_t i) {
  return std::hypot(f.plane(n, 0)[i], f.plane(n, 1)[i]);
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("MOLLI schedule") {
    const auto tis = molli_inversion_times();
    CHECK(tis.size() == 11);
    CHECK(tis.front() == 120.0);
    CHECK(std::is_sorted(tis.begin(), tis.end()));
    CHECK(PhantomConfig::preset(ContrastMode::pre_gd).frames() == 11);
    CHECK(parse_contrast_mode("post-gd") == ContrastMode::post_gd);
    CHECK_THROWS_AS(parse_contrast_mode("late"), Error);
  }

  TEST_CASE("same seed regenerates bit-identically") {
    PhantomConfig c = PhantomConfig::preset(ContrastMode::pre_gd);
    c.amplitude = 4.0;
    c.noise_sigma = 0.01;
    const PhantomTruth a = generate_phantom(c);
    const PhantomTruth b = generate_phantom(c);
    CHECK(a.observed == b.observed);
    CHECK(a.true_fields == b.true_fields);
    c.seed = 8;
    CHECK_FALSE(generate_phantom(c).observed == a.observed);
  }

  TEST_CASE("noiseless static phantom follows the signal model") {
    // Hard edges, so every pixel holds a single tissue.
    PhantomConfig c = still();
    c.edge_width = 0.0;
    c.magnitude = false;
    const PhantomTruth t = generate_phantom(c);
    CHECK(t.observed == t.clean);
    for (const Tissue& tissue : c.tissues) {
      const RoiMask& m = t.mask(tissue.label);
      for (int n = 0; n < t.clean.frames(); ++n)
        for (std::size_t i = 0; i < m.values().size(); ++i) {
          if (!m.contains(i)) continue;
          CHECK(t.clean.frame(n)[i] ==
                doctest::Approx(tissue.a - tissue.b * std::exp(-c.inversion_times[n] / tissue.t1_star_ms)).epsilon(1e-14));
        }
    }
    const T1MapResult maps = fit_map(t.clean, nullptr);
    double worst = 0.0;
    for (std::size_t i = 0; i < maps.converged.size(); ++i) {
      CHECK(maps.converged[i] == 1);
      worst = std::max(worst, std::abs(maps.t1_star_map.values()[i] / t.true_t1_star.values()[i] - 1.0));
    }
    CHECK(worst <= 1e-6);
  }

  TEST_CASE("magnitude static phantom closes the loop with polarity restoration") {
    PhantomConfig c = still();
    c.edge_width = 0.0;
    const PhantomTruth t = generate_phantom(c);
    FitOptions opt;
    opt.polarity_restore = true;
    opt.look_locker = true;
    const T1MapResult maps = fit_map(t.clean, &t.mask("roi"), opt);
    for (std::size_t i = 0; i < maps.converged.size(); ++i) {
      if (!t.mask("roi").contains(i)) continue;
      CHECK(maps.t1_star_map.values()[i] == doctest::Approx(t.true_t1_star.values()[i]).epsilon(1e-6));
      CHECK(maps.t1_map.values()[i] == doctest::Approx(t.true_t1.values()[i]).epsilon(1e-6));
    }
  }

  TEST_CASE("a single repeated inversion time gives identical frames") {
    PhantomConfig c = still();
    c.inversion_times.assign(11, 900.0);
    const PhantomTruth t = generate_phantom(c);
    for (int n = 1; n < 11; ++n) CHECK(std::equal(t.clean.frame(n).begin(), t.clean.frame(n).end(), t.clean.frame(0).begin()));
    CHECK(d_pca(t.clean, 1) == 100.0);
  }

  TEST_CASE("post-contrast tissues have shorter T1*") {
    const PhantomConfig pre = PhantomConfig::preset(ContrastMode::pre_gd);
    const PhantomConfig post = PhantomConfig::preset(ContrastMode::post_gd);
    REQUIRE(pre.tissues.size() == post.tissues.size());
    CHECK(post.background.t1_star_ms < pre.background.t1_star_ms);
    for (std::size_t k = 0; k < pre.tissues.size(); ++k) CHECK(post.tissues[k].t1_star_ms < pre.tissues[k].t1_star_ms);
  }

  TEST_CASE("planted motion: bounded, fold-free, sparse and invertible") {
    for (ContrastMode mode : {ContrastMode::pre_gd, ContrastMode::post_gd}) {
      PhantomConfig c = PhantomConfig::preset(mode);
      c.amplitude = 4.0;
      const PhantomTruth t = generate_phantom(c);
      const double peak = t.true_fields.max_magnitude();
      CHECK(peak == doctest::Approx(4.0).epsilon(1e-9));
      CHECK(min_jacobian_determinant(t.true_grids, c.height, c.width) > 0.0);

      double outside = 0.0;
      for (int n = 0; n < t.true_fields.frames(); ++n)
        for (std::size_t i = 0; i < t.true_fields.plane_size(); ++i)
          if (!t.motion_region.contains(i)) outside = std::max(outside, field_norm(t.true_fields, n, i));
      INFO("largest displacement outside the motion region " << outside);
      CHECK(outside <= 0.05 * peak);

      // Correcting fields undo the deformation: compare with the static phantom.
      PhantomConfig s = c;
      s.amplitude = 0.0;
      const PhantomTruth ref = generate_phantom(s);
      const ImageStack undone = warp_stack(t.clean, t.true_fields);
      double before = 0.0, after = 0.0;
      for (std::size_t i = 0; i < undone.values().size(); ++i) {
        before += std::pow(t.clean.values()[i] - ref.clean.values()[i], 2);
        after += std::pow(undone.values()[i] - ref.clean.values()[i], 2);
      }
      CHECK(after < 0.1 * before);

      // Roi masks move with the tissue: the myocardium of the undone stack
      // has less spread in every frame than the deformed one.
      const RoiMask& myo = t.mask("myocardium");
      double spread_before = 0.0, spread_after = 0.0;
      for (int n = 0; n < 11; ++n) {
        spread_before += roi_stats(t.clean.frame_image(n), myo).std;
        spread_after += roi_stats(undone.frame_image(n), myo).std;
      }
      CHECK(spread_after < spread_before);
    }
  }

  TEST_CASE("noise has the requested spread") {
    PhantomConfig c = still();
    c.noise_sigma = 0.02;
    const PhantomTruth t = generate_phantom(c);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < t.clean.values().size(); ++i) {
      const double d = t.observed.values()[i] - t.clean.values()[i];
      sum += d;
      sq += d * d;
    }
    const double n = static_cast<double>(t.clean.values().size());
    CHECK(std::abs(sum / n) <= 4 * 0.02 / std::sqrt(n));
    CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.01));
    CHECK(signal_range(c) > 0.5);
  }

  TEST_CASE("misalignment raises the fitting error") {
    PhantomConfig c = PhantomConfig::preset(ContrastMode::pre_gd);
    c.noise_sigma = 0.0;
    c.amplitude = 0.0;
    const PhantomTruth aligned = generate_phantom(c);
    c.amplitude = 4.0;
    const PhantomTruth moved = generate_phantom(c);
    FitOptions opt;
    opt.polarity_restore = true;
    const RoiMask& roi = aligned.mask("roi");
    const T1MapResult a = fit_map(aligned.observed, &roi, opt);
    const T1MapResult m = fit_map(moved.observed, &roi, opt);
    CHECK(roi_stats(m.sd_map, roi, m.converged).mean > roi_stats(a.sd_map, roi, a.converged).mean);
  }

  TEST_CASE("endpoint error") {
    PhantomConfig c = PhantomConfig::preset(ContrastMode::pre_gd);
    c.amplitude = 4.0;
    const PhantomTruth t = generate_phantom(c);
    const RoiMask& region = t.motion_region;
    const EndpointError same = endpoint_error(t.true_fields, t.true_fields, region);
    CHECK(same.mean == 0.0);
    CHECK(same.p95 == 0.0);

    DisplacementField drifted = t.true_fields;
    for (int n = 0; n < drifted.frames(); ++n) {
      for (auto& v : drifted.plane(n, 0)) v += 1.25;
      for (auto& v : drifted.plane(n, 1)) v -= 0.5;
    }
    const EndpointError gauge = endpoint_error(drifted, t.true_fields, region);
    CHECK(gauge.mean <= 1e-12);
    CHECK(gauge.p95 <= 1e-12);

    // The planted fields are zero-mean over frames, so the zero estimate
    // leaves the plain mean magnitude.
    double sum = 0.0, count = 0.0;
    for (int n = 0; n < t.true_fields.frames(); ++n)
      for (std::size_t i = 0; i < t.true_fields.plane_size(); ++i)
        if (region.contains(i)) {
          sum += field_norm(t.true_fields, n, i);
          count += 1;
        }
    const EndpointError zero = endpoint_error(DisplacementField(11, 112, 112), t.true_fields, region);
    CHECK(zero.mean == doctest::Approx(sum / count).epsilon(1e-12));
    CHECK(zero.p95 >= zero.mean);
    CHECK_THROWS_AS(endpoint_error(DisplacementField(2, 112, 112), t.true_fields, region), Error);
  }

  TEST_CASE("invalid configurations") {
    PhantomConfig c = PhantomConfig::preset(ContrastMode::pre_gd);
    c.amplitude = -1.0;
    CHECK_THROWS_AS(generate_phantom(c), Error);
    c = PhantomConfig::preset(ContrastMode::pre_gd);
    c.tissues[0].outer_radius = 80.0;
    CHECK_THROWS_AS(generate_phantom(c), Error);
    c = PhantomConfig::preset(ContrastMode::pre_gd);
    c.amplitude = 40.0;
    try {
      generate_phantom(c);
      FAIL("folding motion accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config);
    }
  }
}
