#include "qmr/registration.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "qmr/bspline.hpp"
#include "qmr/error.hpp"
#include "qmr/metrics.hpp"
#include "qmr/simd.hpp"

namespace qmr {
namespace {

// Bilinear value of `image` at (y, x), both inside the grid.
double sample(std::span<const double> image, int w, int h, double y, double x) {
  const int iy = std::min(static_cast<int>(y), h - 2);
  const int ix = std::min(static_cast<int>(x), w - 2);
  const double fy = y - iy, fx = x - ix;
  const double* p = image.data() + static_cast<std::size_t>(iy) * w + ix;
  return (1.0 - fy) * ((1.0 - fx) * p[0] + fx * p[1]) + fy * ((1.0 - fx) * p[w] + fx * p[w + 1]);
}

// At sample positions lying exactly on a pixel row or column the bilinear
// derivative is one-sided; replace it with the mean of both sides.
void symmetrize_kinks(std::span<const double> image, int h, int w, int y, const double* uy, const double* ux,
                      double* gy, double* gx) {
  for (int x = 0; x < w; ++x) {
    const double py = y + uy[x];
    const double px = x + ux[x];
    if (py > 0.0 && py < h - 1 && px >= 0.0 && px <= w - 1 && py == std::floor(py)) {
      gy[x] = 0.5 * (sample(image, w, h, py + 1.0, px) - sample(image, w, h, py - 1.0, px));
    }
    if (px > 0.0 && px < w - 1 && py >= 0.0 && py <= h - 1 && px == std::floor(px)) {
      gx[x] = 0.5 * (sample(image, w, h, py, px + 1.0) - sample(image, w, h, py, px - 1.0));
    }
  }
}

// Separable Gaussian blur with clamped borders, and its exact transpose.
class Blur {
 public:
  Blur(double sigma, int h, int w) : h_(h), w_(w), tmp_(static_cast<std::size_t>(h) * w) {
    if (sigma <= 0.0) return;
    radius_ = static_cast<int>(std::ceil(3.0 * sigma));
    kernel_.resize(2 * radius_ + 1);
    double total = 0.0;
    for (int k = -radius_; k <= radius_; ++k) total += kernel_[k + radius_] = std::exp(-0.5 * k * k / (sigma * sigma));
    for (double& k : kernel_) k /= total;
  }

  bool active() const { return !kernel_.empty(); }

  void apply(const double* in, double* out) {
    std::fill(tmp_.begin(), tmp_.end(), 0.0);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int k = -radius_; k <= radius_; ++k) s += kernel_[k + radius_] * in[y * w_ + std::clamp(x + k, 0, w_ - 1)];
        tmp_[y * w_ + x] = s;
      }
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int k = -radius_; k <= radius_; ++k) s += kernel_[k + radius_] * tmp_[std::clamp(y + k, 0, h_ - 1) * w_ + x];
        out[y * w_ + x] = s;
      }
  }

  void transpose(const double* in, double* out) {
    std::fill(tmp_.begin(), tmp_.end(), 0.0);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        for (int k = -radius_; k <= radius_; ++k) tmp_[std::clamp(y + k, 0, h_ - 1) * w_ + x] += kernel_[k + radius_] * in[y * w_ + x];
    std::fill(out, out + static_cast<std::size_t>(h_) * w_, 0.0);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        for (int k = -radius_; k <= radius_; ++k) out[y * w_ + std::clamp(x + k, 0, w_ - 1)] += kernel_[k + radius_] * tmp_[y * w_ + x];
  }

 private:
  int h_, w_;
  int radius_ = 0;
  std::vector<double> kernel_;
  std::vector<double> tmp_;
};

struct Evaluation {
  LossBreakdown loss;
  ControlGrid gradient;  // empty unless requested
};

Evaluation evaluate(const ImageStack& stack, const ControlGrid& grids, const RegistrationConfig& config,
                    bool want_gradient) {
  const int frames = stack.frames();
  const int h = stack.height();
  const int w = stack.width();
  if (grids.frames() != frames) throw Error(ErrorKind::dimension, "one control lattice per frame is required");
  const std::size_t plane = stack.frame_size();

  const DisplacementField field = ffd_upsample(grids, h, w);
  std::vector<double> warped(stack.values().size());
  std::vector<double> grad_y, grad_x;
  if (want_gradient) {
    grad_y.resize(warped.size());
    grad_x.resize(warped.size());
  }
  for (int n = 0; n < frames; ++n) {
    const auto src = stack.frame(n);
    const auto uy = field.plane(n, channel_y);
    const auto ux = field.plane(n, channel_x);
    for (int y = 0; y < h; ++y) {
      const std::size_t off = n * plane + static_cast<std::size_t>(y) * w;
      const std::size_t row = static_cast<std::size_t>(y) * w;
      simd::warp_row({src.data(), h, w, y, uy.data() + row, ux.data() + row, warped.data() + off,
                      want_gradient ? grad_y.data() + off : nullptr, want_gradient ? grad_x.data() + off : nullptr});
      if (want_gradient) {
        symmetrize_kinks(src, h, w, y, uy.data() + row, ux.data() + row, grad_y.data() + off, grad_x.data() + off);
      }
    }
  }

  Blur blur(config.similarity_sigma, h, w);
  std::vector<double> compared;
  if (blur.active()) {
    compared.resize(warped.size());
    for (int n = 0; n < frames; ++n) blur.apply(warped.data() + n * plane, compared.data() + n * plane);
  }
  const std::vector<double>& input = blur.active() ? compared : warped;

  std::vector<double> d_intensity(warped.size(), 0.0);
  Evaluation ev;
  if (config.similarity == Similarity::nmi) {
    ev.loss.similarity = groupwise_nmi_loss_with_gradient(input, frames, config.bins, d_intensity);
  } else {
    ev.loss.similarity = groupwise_ncc_loss_with_gradient(input, frames, h, w, config.ncc_window, d_intensity);
  }
  if (blur.active() && want_gradient) {
    std::vector<double> d_compared = std::move(d_intensity);
    d_intensity.assign(warped.size(), 0.0);
    for (int n = 0; n < frames; ++n) blur.transpose(d_compared.data() + n * plane, d_intensity.data() + n * plane);
  }

  const BendingEnergy bending = bending_energy_with_gradient(grids, h, w);
  ev.loss.smooth = bending.value;
  DisplacementField cyclic_grad(frames, h, w);
  ev.loss.cyclic = cyclic_loss_with_gradient(field, cyclic_grad);
  ev.loss.total = ev.loss.similarity + config.lambda_smooth * ev.loss.smooth + config.lambda_cyclic * ev.loss.cyclic;
  if (!std::isfinite(ev.loss.total)) {
    throw Error(ErrorKind::convergence, "registration loss became non-finite");
  }
  if (!want_gradient) return ev;

  DisplacementField dense(frames, h, w);
  for (int n = 0; n < frames; ++n) {
    auto dy = dense.plane(n, channel_y);
    auto dx = dense.plane(n, channel_x);
    const auto cy = cyclic_grad.plane(n, channel_y);
    const auto cx = cyclic_grad.plane(n, channel_x);
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = n * plane + i;
      dy[i] = d_intensity[k] * grad_y[k] + config.lambda_cyclic * cy[i];
      dx[i] = d_intensity[k] * grad_x[k] + config.lambda_cyclic * cx[i];
    }
  }
  ev.gradient = ffd_adjoint(dense, grids);
  auto g = ev.gradient.coefficients();
  simd::axpy(config.lambda_smooth, bending.gradient.coefficients().data(), g.data(), g.size());
  return ev;
}

double mean_abs_displacement(const DisplacementField& field) { return field.mean_magnitude(); }

}  // namespace

const char* to_string(Similarity similarity) { return similarity == Similarity::nmi ? "nmi" : "ncc"; }

Similarity parse_similarity(const std::string& text) {
  if (text == "nmi" || text == "NMI") return Similarity::nmi;
  if (text == "ncc" || text == "NCC") return Similarity::ncc;
  throw Error(ErrorKind::config, "unknown similarity '" + text + "' (expected nmi or ncc)");
}

void RegistrationConfig::validate() const {
  if (!(lambda_smooth >= 0.0) || !(lambda_cyclic >= 0.0)) throw Error(ErrorKind::config, "loss weights must be >= 0");
  if (rounds < 1) throw Error(ErrorKind::config, "rounds must be >= 1");
  if (steps_per_round < 0) throw Error(ErrorKind::config, "steps_per_round must be >= 0");
  if (!(step_size > 0.0)) throw Error(ErrorKind::config, "step_size must be positive");
  if (!(control_spacing > 0.0)) throw Error(ErrorKind::config, "control_spacing must be positive");
  if (bins < 2) throw Error(ErrorKind::config, "bins must be >= 2");
  if (!(similarity_sigma >= 0.0)) throw Error(ErrorKind::config, "similarity_sigma must be >= 0");
  if (ncc_window < 3 || ncc_window % 2 == 0) throw Error(ErrorKind::config, "ncc_window must be odd and >= 3");
}

Image implicit_reference(const ImageStack& warped) {
  Image ref(warped.height(), warped.width());
  auto dst = ref.values();
  for (int n = 0; n < warped.frames(); ++n) simd::axpy(1.0, warped.frame(n).data(), dst.data(), dst.size());
  const double inv = 1.0 / warped.frames();
  for (auto& v : dst) v *= inv;
  return ref;
}

LossBreakdown total_loss(const ImageStack& stack, const ControlGrid& grids, const RegistrationConfig& config) {
  return evaluate(stack, grids, config, false).loss;
}

LossAndGradient loss_gradient(const ImageStack& stack, const ControlGrid& grids, const RegistrationConfig& config) {
  Evaluation ev = evaluate(stack, grids, config, true);
  return {ev.loss, std::move(ev.gradient)};
}

RoundOutcome optimize_round(const ImageStack& stack, const ControlGrid& init, const RegistrationConfig& config) {
  config.validate();
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;

  RoundOutcome out;
  out.grids = init;
  Evaluation current = evaluate(stack, out.grids, config, true);
  out.trace.push_back(current.loss);

  const std::size_t count = out.grids.coefficients().size();
  std::vector<double> m(count, 0.0), v(count, 0.0), direction(count);
  double lr = config.step_size;
  double bias1 = 1.0;
  double bias2 = 1.0;
  for (int step = 0; step < config.steps_per_round; ++step) {
    const auto g = current.gradient.coefficients();
    bias1 *= beta1;
    bias2 *= beta2;
    double largest_rms = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      largest_rms = std::max(largest_rms, std::sqrt(v[i] / (1.0 - bias2)));
    }
    if (largest_rms == 0.0) break;  // exact stationary point
    // One shared denominator: the largest coefficient moves about lr per
    // step and weakly driven coefficients move proportionally less.
    for (std::size_t i = 0; i < count; ++i) direction[i] = (m[i] / (1.0 - bias1)) / largest_rms;

    ControlGrid trial = out.grids;
    simd::axpy(-lr, direction.data(), trial.coefficients().data(), count);
    Evaluation next = evaluate(stack, trial, config, true);
    if (next.loss.total <= current.loss.total) {
      out.grids = std::move(trial);
      current = std::move(next);
      out.trace.push_back(current.loss);
      ++out.accepted_steps;
      lr = std::min(lr * 1.1, config.step_size);
    } else {
      ++out.rejected_steps;
      lr *= 0.5;
      if (lr < 1e-3 * config.step_size) break;
    }
  }
  spdlog::debug("round finished: {} accepted, {} rejected, loss {:.6f} -> {:.6f}", out.accepted_steps,
                out.rejected_steps, out.trace.front().total, out.trace.back().total);
  return out;
}

RegistrationResult rpca_register(const ImageStack& stack, const RegistrationConfig& config) {
  config.validate();
  const NormalizedStack normalized = normalize_stack(stack);
  RpcaConfig rpca = config.rpca;
  if (config.seed != 0) rpca.seed = config.seed;

  RegistrationResult result{DisplacementField(stack.frames(), stack.height(), stack.width()), {}, stack, {}, {},
                            false, {}};
  ImageStack current = normalized.stack;
  for (int round = 1; round <= config.rounds; ++round) {
    RoundReport report;
    report.round = round;
    report.d_pca_before = d_pca(current, 1);
    try {
      const Decomposition dec = godec_decompose(current, rpca);
      report.rpca_iterations = dec.iterations_used;
      report.rpca_error = dec.final_relative_error;
      const ImageStack low = normalize_stack(dec.low_rank).stack;

      const ControlGrid zero =
          ControlGrid::for_image(stack.frames(), stack.height(), stack.width(), config.control_spacing);
      RoundOutcome outcome = optimize_round(low, zero, config);
      const DisplacementField round_field = ffd_upsample(outcome.grids, stack.height(), stack.width());
      result.fields = compose_displacements(round_field, result.fields);
      report.accepted_steps = outcome.accepted_steps;
      report.rejected_steps = outcome.rejected_steps;
      report.mean_displacement = mean_abs_displacement(round_field);
      result.grids_per_round.push_back(std::move(outcome.grids));
      result.loss_traces.push_back(std::move(outcome.trace));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::convergence && e.kind() != ErrorKind::degenerate) throw;
      result.aborted = true;
      result.diagnostic = "round " + std::to_string(round) + ": " + e.what();
      spdlog::error("{}", result.diagnostic);
      break;
    }
    current = warp_stack(normalized.stack, result.fields);
    report.d_pca_after = d_pca(current, 1);
    spdlog::info("round {}: d_pca {:.3f} -> {:.3f}, mean |u| {:.3f} px", round, report.d_pca_before,
                 report.d_pca_after, report.mean_displacement);
    result.round_reports.push_back(report);
  }
  result.warped = warp_stack(stack, result.fields);
  return result;
}

}  // namespace qmr
