#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "qmr/bspline.hpp"
#include "qmr/error.hpp"
#include "qmr/metrics.hpp"
#include "qmr/phantom.hpp"
#include "qmr/registration.hpp"

using namespace qmr;

namespace {

ImageStack repeated(const Image& img, int frames) {
  std::vector<double> v;
  for (int n = 0; n < frames; ++n) v.insert(v.end(), img.values().begin(), img.values().end());
  return ImageStack(frames, img.height(), img.width(), v);
}

// Frame `moving` is the image moved down by `dy` pixels (analytic resampling).
ImageStack with_shifted_frame(int h, int w, int frames, int moving, double dy) {
  std::vector<double> v;
  for (int n = 0; n < frames; ++n) {
    const double off = n == moving ? dy : 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double yy = y - off;
        v.push_back(0.5 + 0.35 * std::exp(-((yy - h / 2.0) * (yy - h / 2.0) + (x - w / 2.0) * (x - w / 2.0)) / 40.0) -
                    0.25 * std::exp(-((yy - h / 3.0) * (yy - h / 3.0) + (x - 2.0 * w / 3.0) * (x - 2.0 * w / 3.0)) / 20.0));
      }
  }
  return ImageStack(frames, h, w, v);
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_SUITE("registration") {
  TEST_CASE("defaults") {
    const RegistrationConfig cfg;
    CHECK(cfg.lambda_smooth == 0.001);
    CHECK(cfg.lambda_cyclic == 0.01);
    CHECK(cfg.rounds == 3);
    CHECK(cfg.bins == 32);
    CHECK(cfg.control_spacing == 4.0);
    CHECK(cfg.similarity == Similarity::nmi);
    CHECK(parse_similarity("ncc") == Similarity::ncc);
    CHECK_THROWS_AS(parse_similarity("ssd"), Error);
    RegistrationConfig bad;
    bad.rounds = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = {};
    bad.lambda_cyclic = -1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("implicit reference is the pixelwise mean") {
    const Image x = test::smooth_image(10, 12);
    CHECK(implicit_reference(repeated(x, 4)) == x);

    const ImageStack two = test::random_stack(2, 9, 9, 1);
    const Image mid = implicit_reference(two);
    for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid.values()[i] == (two.frame(0)[i] + two.frame(1)[i]) / 2);

    const ImageStack eleven = test::random_stack(11, 16, 16, 2);
    const Image ref = implicit_reference(eleven);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      long double s = 0;
      for (int n = 0; n < 11; ++n) s += eleven.frame(n)[i];
      CHECK(std::abs(ref.values()[i] - static_cast<double>(s / 11)) <= 1e-15);
    }
  }

  TEST_CASE("total loss components") {
    const ImageStack aligned = repeated(test::smooth_image(24, 24), 4);
    const RegistrationConfig cfg;
    const ControlGrid zero = ControlGrid::for_image(4, 24, 24, cfg.control_spacing);
    const LossBreakdown l = total_loss(aligned, zero, cfg);
    CHECK(l.similarity == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(l.smooth == 0.0);
    CHECK(l.cyclic == 0.0);
    CHECK(l.total == doctest::Approx(-1.0).epsilon(1e-12));

    const ImageStack random = test::random_stack(3, 24, 24, 3);
    const LossBreakdown r = total_loss(random, ControlGrid::for_image(3, 24, 24, cfg.control_spacing), cfg);
    CHECK(r.smooth == 0.0);
    CHECK(r.cyclic == 0.0);

    // Component isolation against standalone metrics.
    const ControlGrid g = test::random_grid(3, 24, 24, cfg.control_spacing, 0.8, 4);
    RegistrationConfig off = cfg;
    off.lambda_smooth = 0.0;
    off.lambda_cyclic = 0.0;
    const DisplacementField field = ffd_upsample(g, 24, 24);
    const ImageStack warped = warp_stack(random, field);
    const double sim = groupwise_nmi_loss(warped, implicit_reference(warped));
    CHECK(std::abs(total_loss(random, g, off).total - sim) <= 1e-12);

    const LossBreakdown full = total_loss(random, g, cfg);
    CHECK(full.smooth == doctest::Approx(bending_energy(g, 24, 24)).epsilon(1e-12));
    CHECK(full.cyclic == doctest::Approx(cyclic_loss(field)).epsilon(1e-12));
    CHECK(full.total == doctest::Approx(full.similarity + 0.001 * full.smooth + 0.01 * full.cyclic).epsilon(1e-14));
  }

  TEST_CASE("gradient vanishes at zero on an aligned stack") {
    const ImageStack aligned = repeated(test::smooth_image(20, 20), 3);
    const RegistrationConfig cfg;
    const LossAndGradient lg = loss_gradient(aligned, ControlGrid::for_image(3, 20, 20, 4.0), cfg);
    double norm = 0.0;
    for (double g : lg.gradient.coefficients()) norm += g * g;
    CHECK(std::sqrt(norm) <= 1e-6);
  }

  TEST_CASE("loss gradient matches central differences") {
    // 8 x 8 lattice over 32 x 32 pixels.
    const double spacing = 7.75;
    const ImageStack stack = normalize_stack(with_shifted_frame(32, 32, 3, 1, 1.3)).stack;
    for (Similarity sim : {Similarity::nmi, Similarity::ncc}) {
      RegistrationConfig cfg;
      cfg.similarity = sim;
      cfg.control_spacing = spacing;
      cfg.lambda_smooth = 0.05;
      cfg.lambda_cyclic = 0.05;
      ControlGrid g = test::random_grid(3, 32, 32, spacing, 0.6, 7);
      REQUIRE(g.grid_height() == 8);
      const LossAndGradient lg = loss_gradient(stack, g, cfg);
      const double step = 1e-3;
      double scale = max_abs(lg.gradient.coefficients());
      int bad = 0, checked = 0;
      double worst = 0.0;
      for (std::size_t i = 0; i < g.coefficients().size(); i += 3) {
        auto central = [&](double h) {
          const double keep = g.coefficients()[i];
          g.coefficients()[i] = keep + h;
          const double up = total_loss(stack, g, cfg).total;
          g.coefficients()[i] = keep - h;
          const double down = total_loss(stack, g, cfg).total;
          g.coefficients()[i] = keep;
          return (up - down) / (2 * h);
        };
        auto rel_error = [&](double fd) {
          return std::abs(fd - lg.gradient.coefficients()[i]) / std::max(std::abs(fd), 1e-2 * scale);
        };
        // The loss is only piecewise smooth (histogram bins, pixel rows), so a
        // stencil that straddles a kink is repeated with a shorter step.
        double rel = rel_error(central(step));
        if (rel > 1e-2) rel = rel_error(central(step / 10));
        worst = std::max(worst, rel);
        bad += rel > 1e-2;
        ++checked;
      }
      INFO("similarity " << std::string(to_string(sim)) << ", worst relative error " << worst);
      CHECK(bad == 0);
      CHECK(checked > 100);
    }
  }

  TEST_CASE("gradient is linear in the loss weights") {
    const ImageStack stack = test::random_stack(3, 20, 20, 8);
    const ControlGrid g = test::random_grid(3, 20, 20, 4.0, 0.5, 9);
    auto grad = [&](double ls, double lc) {
      RegistrationConfig cfg;
      cfg.lambda_smooth = ls;
      cfg.lambda_cyclic = lc;
      return loss_gradient(stack, g, cfg).gradient;
    };
    const ControlGrid g0 = grad(0.0, 0.01), g1 = grad(0.001, 0.01), g2 = grad(0.002, 0.01);
    for (std::size_t i = 0; i < g0.coefficients().size(); ++i) {
      CHECK(std::abs((g2.coefficients()[i] - g1.coefficients()[i]) - (g1.coefficients()[i] - g0.coefficients()[i])) <=
            1e-10);
    }
    const ControlGrid c0 = grad(0.001, 0.0), c1 = grad(0.001, 0.01), c2 = grad(0.001, 0.02);
    for (std::size_t i = 0; i < c0.coefficients().size(); ++i) {
      CHECK(std::abs((c2.coefficients()[i] - c1.coefficients()[i]) - (c1.coefficients()[i] - c0.coefficients()[i])) <=
            1e-10);
    }
  }

  TEST_CASE("optimize_round leaves an aligned stack alone") {
    const ImageStack aligned = repeated(test::smooth_image(24, 24, 0.7), 5);
    const RegistrationConfig cfg;
    const ControlGrid zero = ControlGrid::for_image(5, 24, 24, cfg.control_spacing);
    const RoundOutcome out = optimize_round(aligned, zero, cfg);
    CHECK(std::abs(total_loss(aligned, out.grids, cfg).total - total_loss(aligned, zero, cfg).total) <= 1e-6);
    CHECK(ffd_upsample(out.grids, 24, 24).mean_magnitude() <= 0.1);
  }

  TEST_CASE("optimize_round never increases the loss and is deterministic") {
    const ImageStack stack = normalize_stack(with_shifted_frame(32, 32, 4, 2, 1.5)).stack;
    RegistrationConfig cfg;
    cfg.steps_per_round = 60;
    const ControlGrid zero = ControlGrid::for_image(4, 32, 32, cfg.control_spacing);
    const RoundOutcome a = optimize_round(stack, zero, cfg);
    const RoundOutcome b = optimize_round(stack, zero, cfg);
    CHECK(a.grids == b.grids);
    CHECK(a.accepted_steps > 0);
    for (std::size_t t = 1; t < a.trace.size(); ++t) CHECK(a.trace[t].total <= a.trace[t - 1].total);
    CHECK(total_loss(stack, a.grids, cfg).total <= total_loss(stack, zero, cfg).total);
  }

  TEST_CASE("a translated frame is brought back") {
    const int h = 48, w = 48, n = 5;
    const ImageStack stack = normalize_stack(with_shifted_frame(h, w, n, 2, 2.0)).stack;
    const RegistrationConfig cfg;
    const RoundOutcome out = optimize_round(stack, ControlGrid::for_image(n, h, w, cfg.control_spacing), cfg);
    const DisplacementField est = ffd_upsample(out.grids, h, w);

    // Correcting field: +2 rows on the moving frame, zero elsewhere.
    DisplacementField truth(n, h, w);
    for (auto& v : truth.plane(2, channel_y)) v = 2.0;
    std::vector<std::uint8_t> centre(static_cast<std::size_t>(h) * w, 0);
    for (int y = 12; y < 36; ++y)
      for (int x = 12; x < 36; ++x) centre[static_cast<std::size_t>(y) * w + x] = 1;
    const EndpointError before = endpoint_error(DisplacementField(n, h, w), truth, RoiMask(h, w, centre));
    const EndpointError after = endpoint_error(est, truth, RoiMask(h, w, centre));
    INFO("endpoint error " << before.mean << " -> " << after.mean);
    CHECK(after.mean <= 0.5);
  }

  TEST_CASE("identical frames are a fixed point of the round loop") {
    const ImageStack aligned = repeated(test::smooth_image(32, 32, 1.1), 6);
    RegistrationConfig cfg;
    cfg.rounds = 2;
    const RegistrationResult r = rpca_register(aligned, cfg);
    CHECK_FALSE(r.aborted);
    CHECK(r.fields.max_magnitude() <= 0.1);
    CHECK(r.fields.mean_magnitude() <= 0.1);
  }

  TEST_CASE("one round equals decompose, optimize and warp") {
    const ImageStack raw = with_shifted_frame(32, 32, 4, 1, 1.5);
    RegistrationConfig cfg;
    cfg.rounds = 1;
    cfg.steps_per_round = 40;
    const RegistrationResult r = rpca_register(raw, cfg);
    REQUIRE(r.grids_per_round.size() == 1);

    const ImageStack norm = normalize_stack(raw).stack;
    const Decomposition dec = godec_decompose(norm, cfg.rpca);
    const ImageStack low = normalize_stack(dec.low_rank).stack;
    const RoundOutcome out = optimize_round(low, ControlGrid::for_image(4, 32, 32, cfg.control_spacing), cfg);
    CHECK(out.grids == r.grids_per_round[0]);
    const DisplacementField field = ffd_upsample(out.grids, 32, 32);
    CHECK(test::rms_difference(field.values(), r.fields.values()) <= 1e-12);
    CHECK(warp_stack(raw, field) == r.warped);
  }

  TEST_CASE("round loop: consistency, traces and determinism") {
    const ImageStack raw = with_shifted_frame(32, 32, 5, 3, 2.0);
    RegistrationConfig cfg;
    cfg.rounds = 2;
    cfg.steps_per_round = 50;
    const RegistrationResult a = rpca_register(raw, cfg);
    const RegistrationResult b = rpca_register(raw, cfg);
    CHECK(a.fields == b.fields);
    CHECK(a.warped == b.warped);
    CHECK(test::rms_difference(warp_stack(raw, a.fields).values(), a.warped.values()) <= 1e-3);
    REQUIRE(a.loss_traces.size() == 2);
    for (const auto& trace : a.loss_traces)
      for (std::size_t t = 1; t < trace.size(); ++t) CHECK(trace[t].total <= trace[t - 1].total);
    REQUIRE(a.round_reports.size() == 2);
    CHECK(a.round_reports[1].d_pca_after >= a.round_reports[0].d_pca_before);
  }
}
