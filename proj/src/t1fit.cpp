#include "qmr/t1fit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "qmr/error.hpp"

namespace qmr {
namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

// Solves a symmetric positive definite 3x3 system by Cholesky; false if not SPD.
bool cholesky_solve(const Mat3& a, const Vec3& b, Vec3& x) {
  Mat3 l{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[i][j];
      for (int k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      if (i == j) {
        if (!(s > 0.0)) return false;
        l[i][i] = std::sqrt(s);
      } else {
        l[i][j] = s / l[j][j];
      }
    }
  }
  Vec3 z{};
  for (int i = 0; i < 3; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l[i][k] * z[k];
    z[i] = s / l[i][i];
  }
  for (int i = 2; i >= 0; --i) {
    double s = z[i];
    for (int k = i + 1; k < 3; ++k) s -= l[k][i] * x[k];
    x[i] = s / l[i][i];
  }
  return true;
}

struct Fit {
  Vec3 p{};  // A, B, T1*
  double rss = std::numeric_limits<double>::infinity();
  bool converged = false;
  Mat3 jtj{};
};

double rss_of(const Vec3& p, std::span<const double> ti, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < ti.size(); ++i) {
    const double r = y[i] - inversion_recovery(p[0], p[1], p[2], ti[i]);
    s += r * r;
  }
  return s;
}

void normal_equations(const Vec3& p, std::span<const double> ti, std::span<const double> y, Mat3& jtj, Vec3& jtr) {
  jtj = {};
  jtr = {};
  for (std::size_t i = 0; i < ti.size(); ++i) {
    const double e = std::exp(-ti[i] / p[2]);
    const Vec3 j{1.0, -e, -p[1] * e * ti[i] / (p[2] * p[2])};
    const double r = y[i] - (p[0] - p[1] * e);
    for (int a = 0; a < 3; ++a) {
      jtr[a] += j[a] * r;
      for (int b = 0; b < 3; ++b) jtj[a][b] += j[a] * j[b];
    }
  }
}

// Closed-form A, B for a fixed T1*; returns the residual sum of squares.
double linear_fit(double t1s, std::span<const double> ti, std::span<const double> y, double& a, double& b) {
  const double n = static_cast<double>(ti.size());
  double se = 0.0, see = 0.0, sy = 0.0, sey = 0.0;
  for (std::size_t i = 0; i < ti.size(); ++i) {
    const double e = std::exp(-ti[i] / t1s);
    se += e;
    see += e * e;
    sy += y[i];
    sey += e * y[i];
  }
  const double det = n * see - se * se;
  if (!(std::abs(det) > 1e-300)) {
    a = sy / n;
    b = 0.0;
  } else {
    // y = a + c e with c = -b
    const double c = (n * sey - se * sy) / det;
    a = (sy - c * se) / n;
    b = -c;
  }
  return rss_of({a, b, t1s}, ti, y);
}

Fit levenberg_marquardt(std::span<const double> ti, std::span<const double> y, const FitOptions& options) {
  // Log-spaced grid over T1* anchors the nonlinear search.
  const double ti_max = *std::max_element(ti.begin(), ti.end());
  const double ti_min = std::max(*std::min_element(ti.begin(), ti.end()), 1.0);
  const double lo = std::log(ti_min * 0.05);
  const double hi = std::log(ti_max * 20.0);
  constexpr int grid = 48;
  Fit best;
  for (int g = 0; g < grid; ++g) {
    const double t1s = std::exp(lo + (hi - lo) * g / (grid - 1));
    double a = 0.0, b = 0.0;
    const double r = linear_fit(t1s, ti, y, a, b);
    if (r < best.rss) {
      best.rss = r;
      best.p = {a, b, t1s};
    }
  }

  double y_scale = 0.0;
  for (double v : y) y_scale = std::max(y_scale, std::abs(v));
  y_scale = std::max(y_scale, 1e-300);

  Vec3 p = best.p;
  double rss = best.rss;
  double mu = 1e-3;
  Mat3 jtj;
  Vec3 jtr;
  bool converged = false;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    normal_equations(p, ti, y, jtj, jtr);
    const double grad_scale = y_scale * y_scale * static_cast<double>(ti.size());
    double gmax = 0.0;
    for (int a = 0; a < 3; ++a) gmax = std::max(gmax, std::abs(jtr[a]) * std::sqrt(jtj[a][a] > 0 ? 1.0 / jtj[a][a] : 0.0));
    if (gmax <= options.gradient_tolerance * std::sqrt(grad_scale) || rss <= 1e-28 * grad_scale) {
      converged = true;
      break;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 30 && !improved; ++attempt) {
      Mat3 damped = jtj;
      for (int a = 0; a < 3; ++a) damped[a][a] += mu * std::max(jtj[a][a], 1e-300);
      Vec3 delta{};
      if (!cholesky_solve(damped, jtr, delta)) {
        mu *= 10.0;
        continue;
      }
      const Vec3 trial{p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]};
      if (!(trial[2] > 0.0) || !std::isfinite(trial[2])) {
        mu *= 10.0;
        continue;
      }
      const double trial_rss = rss_of(trial, ti, y);
      if (trial_rss <= rss) {
        const double change = std::abs(delta[2]) / trial[2] + std::abs(delta[0]) / (std::abs(trial[0]) + y_scale) +
                              std::abs(delta[1]) / (std::abs(trial[1]) + y_scale);
        p = trial;
        const double previous = rss;
        rss = trial_rss;
        mu = std::max(mu * 0.3, 1e-12);
        improved = true;
        if (change < 1e-14 || previous - rss <= 1e-15 * previous) converged = true;
      } else {
        mu *= 10.0;
      }
    }
    if (!improved) {
      // No descent direction left: we are at the numerical minimum.
      converged = true;
    }
    if (converged) break;
  }
  normal_equations(p, ti, y, jtj, jtr);
  best.p = p;
  best.rss = rss;
  best.converged = converged;
  best.jtj = jtj;
  return best;
}

// Inverse of a symmetric 3x3 matrix after Jacobi scaling; false when ill-conditioned.
bool covariance(const Mat3& jtj, Mat3& inv) {
  Vec3 d{};
  for (int a = 0; a < 3; ++a) {
    if (!(jtj[a][a] > 0.0)) return false;
    d[a] = 1.0 / std::sqrt(jtj[a][a]);
  }
  Mat3 s{};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) s[a][b] = jtj[a][b] * d[a] * d[b];
  const double det = s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1]) -
                     s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0]) +
                     s[0][2] * (s[1][0] * s[2][1] - s[1][1] * s[2][0]);
  if (!(det > 1e-13)) return false;
  Mat3 c{};
  c[0][0] = s[1][1] * s[2][2] - s[1][2] * s[2][1];
  c[0][1] = s[0][2] * s[2][1] - s[0][1] * s[2][2];
  c[0][2] = s[0][1] * s[1][2] - s[0][2] * s[1][1];
  c[1][1] = s[0][0] * s[2][2] - s[0][2] * s[2][0];
  c[1][2] = s[0][2] * s[1][0] - s[0][0] * s[1][2];
  c[2][2] = s[0][0] * s[1][1] - s[0][1] * s[1][0];
  c[1][0] = c[0][1];
  c[2][0] = c[0][2];
  c[2][1] = c[1][2];
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) inv[a][b] = c[a][b] / det * d[a] * d[b];
  return true;
}

}  // namespace

double inversion_recovery(double a, double b, double t1_star, double ti) { return a - b * std::exp(-ti / t1_star); }

PixelFit fit_pixel(std::span<const double> inversion_times, std::span<const double> intensities,
                   const FitOptions& options) {
  const std::size_t n = inversion_times.size();
  if (n != intensities.size()) throw Error(ErrorKind::dimension, "inversion time and sample counts differ");
  if (n < 4) throw Error(ErrorKind::validation, "a three-parameter fit needs at least four samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return inversion_times[i] < inversion_times[j]; });
  std::vector<double> ti(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    ti[i] = inversion_times[order[i]];
    y[i] = intensities[order[i]];
    if (!std::isfinite(ti[i]) || !std::isfinite(y[i])) throw Error(ErrorKind::validation, "non-finite fit input");
  }

  Fit best = levenberg_marquardt(ti, y, options);
  int flipped = 0;
  if (options.polarity_restore) {
    std::vector<double> signed_y = y;
    for (std::size_t k = 1; k < n; ++k) {
      signed_y[k - 1] = -y[k - 1];
      Fit candidate = levenberg_marquardt(ti, signed_y, options);
      if (candidate.rss < best.rss) {
        best = candidate;
        flipped = static_cast<int>(k);
      }
    }
  }

  PixelFit out;
  out.a = best.p[0];
  out.b = best.p[1];
  out.t1_star = best.p[2];
  out.flipped = flipped;
  out.residual = std::sqrt(best.rss / static_cast<double>(n));
  out.t1 = options.look_locker ? out.t1_star * (out.b / out.a - 1.0) : out.t1_star;

  double y_scale = 0.0;
  for (double v : y) y_scale = std::max(y_scale, std::abs(v));
  const bool identifiable = std::abs(out.b) > 1e-6 * std::max(y_scale, 1e-300) && out.t1_star > 0.0 &&
                            out.t1_star < 1e3 * ti.back() && std::isfinite(out.t1);
  Mat3 inv{};
  const bool conditioned = covariance(best.jtj, inv);
  out.converged = best.converged && identifiable && conditioned && !(options.look_locker && out.a == 0.0);
  if (conditioned && n > 3) {
    const double sigma2 = best.rss / static_cast<double>(n - 3);
    Vec3 g{0.0, 0.0, 1.0};
    if (options.look_locker) {
      g = {-out.t1_star * out.b / (out.a * out.a), out.t1_star / out.a, out.b / out.a - 1.0};
    }
    double var = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) var += g[a] * inv[a][b] * g[b];
    out.sd = std::sqrt(std::max(var * sigma2, 0.0));
    if (!std::isfinite(out.sd)) out.sd = 0.0;
  }
  return out;
}

T1MapResult fit_map(const ImageStack& stack, const RoiMask* mask, const FitOptions& options) {
  if (!stack.inversion_times()) throw Error(ErrorKind::config, "T1 fitting needs inversion times on the stack");
  const int h = stack.height();
  const int w = stack.width();
  if (mask && (mask->height() != h || mask->width() != w)) throw Error(ErrorKind::dimension, "mask shape mismatch");
  const auto& ti = *stack.inversion_times();
  const std::size_t plane = stack.frame_size();
  T1MapResult out{Image(h, w), Image(h, w), Image(h, w), Image(h, w), Image(h, w), Image(h, w),
                  std::vector<std::uint8_t>(plane, 0)};
  std::vector<double> samples(stack.frames());
  for (std::size_t i = 0; i < plane; ++i) {
    if (mask && !mask->values()[i]) continue;
    for (int n = 0; n < stack.frames(); ++n) samples[n] = stack.frame(n)[i];
    const PixelFit f = fit_pixel(ti, samples, options);
    out.a_map.values()[i] = f.a;
    out.b_map.values()[i] = f.b;
    out.t1_star_map.values()[i] = f.t1_star;
    out.t1_map.values()[i] = f.t1;
    out.sd_map.values()[i] = f.sd;
    out.residual_map.values()[i] = f.residual;
    out.converged[i] = f.converged ? 1 : 0;
  }
  return out;
}

ImageStack maps_to_stack(const T1MapResult& maps) {
  return ImageStack::from_frames({maps.a_map, maps.b_map, maps.t1_star_map, maps.t1_map, maps.sd_map});
}

RoiStats roi_stats(const Image& map, const RoiMask& mask, std::span<const std::uint8_t> converged) {
  if (map.height() != mask.height() || map.width() != mask.width()) {
    throw Error(ErrorKind::dimension, "map and mask shapes differ");
  }
  if (!converged.empty() && converged.size() != map.values().size()) {
    throw Error(ErrorKind::dimension, "convergence flags do not match the map");
  }
  RoiStats s;
  double sum = 0.0, sq = 0.0;
  const auto values = map.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!mask.values()[i] || (!converged.empty() && !converged[i])) continue;
    sum += values[i];
    ++s.count;
  }
  if (s.count == 0) throw Error(ErrorKind::degenerate, "no usable pixels in ROI '" + mask.label() + "'");
  s.mean = sum / static_cast<double>(s.count);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!mask.values()[i] || (!converged.empty() && !converged[i])) continue;
    sq += (values[i] - s.mean) * (values[i] - s.mean);
  }
  s.std = std::sqrt(sq / static_cast<double>(s.count));
  return s;
}

}  // namespace qmr
