#include "qmr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "qmr/error.hpp"
#include "qmr/linalg.hpp"
#include "qmr/simd.hpp"

namespace qmr {
namespace {

constexpr double kVarianceFloor = 1e-5;
constexpr double kLogFloor = 1e-12;

struct BinPosition {
  int index;
  double frac;
};

BinPosition locate_bin(double v, int bins) {
  if (!(v >= -1e-9 && v <= 1.0 + 1e-9)) {
    throw Error(ErrorKind::validation, "histogram input outside [0, 1]: " + std::to_string(v));
  }
  const double t = std::clamp(v, 0.0, 1.0) * (bins - 1);
  const int i = std::min(static_cast<int>(t), bins - 2);
  return {i, t - i};
}

void check_bins(int bins) {
  if (bins < 2) throw Error(ErrorKind::config, "histograms need at least 2 bins");
}

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::dimension, "images differ in size");
  if (a.empty()) throw Error(ErrorKind::dimension, "empty image");
}

bool is_constant(std::span<const double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *lo == *hi;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Corner weights of one pair on the diagonal split of its bin cell, and their
// derivatives with respect to the two fractional positions.
struct Corners {
  std::size_t cell[3];
  double weight[3];
  double d_first[3];
  double d_second[3];
};

Corners corners(BinPosition pa, BinPosition pb, int bins) {
  const auto at = [bins](int i, int j) { return static_cast<std::size_t>(i) * bins + j; };
  const int i = pa.index;
  const int j = pb.index;
  if (pa.frac >= pb.frac) {
    return {{at(i, j), at(i + 1, j), at(i + 1, j + 1)},
            {1.0 - pa.frac, pa.frac - pb.frac, pb.frac},
            {-1.0, 1.0, 0.0},
            {0.0, -1.0, 1.0}};
  }
  return {{at(i, j), at(i, j + 1), at(i + 1, j + 1)},
          {1.0 - pb.frac, pb.frac - pa.frac, pa.frac},
          {0.0, -1.0, 1.0},
          {-1.0, 1.0, 0.0}};
}

std::vector<double> mean_frame(std::span<const double> frames, int n_frames) {
  const std::size_t pixels = frames.size() / n_frames;
  std::vector<double> ref(pixels, 0.0);
  for (int n = 0; n < n_frames; ++n) simd::axpy(1.0, frames.data() + n * pixels, ref.data(), pixels);
  const double inv = 1.0 / n_frames;
  for (auto& v : ref) v *= inv;
  return ref;
}

// Separable box sum over the truncated (2r+1)^2 neighbourhood.
void box_sum(std::span<const double> in, int height, int width, int radius, std::span<double> out,
             std::vector<double>& scratch) {
  scratch.assign(in.size(), 0.0);
  for (int y = 0; y < height; ++y) {
    const double* row = in.data() + static_cast<std::size_t>(y) * width;
    double* dst = scratch.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      const int lo = std::max(0, x - radius);
      const int hi = std::min(width - 1, x + radius);
      double s = 0.0;
      for (int k = lo; k <= hi; ++k) s += row[k];
      dst[x] = s;
    }
  }
  std::fill(out.begin(), out.end(), 0.0);
  for (int y = 0; y < height; ++y) {
    const int lo = std::max(0, y - radius);
    const int hi = std::min(height - 1, y + radius);
    double* dst = out.data() + static_cast<std::size_t>(y) * width;
    for (int k = lo; k <= hi; ++k) simd::axpy(1.0, scratch.data() + static_cast<std::size_t>(k) * width, dst, width);
  }
}

double window_count(int y, int x, int height, int width, int radius) {
  const int rows = std::min(height - 1, y + radius) - std::max(0, y - radius) + 1;
  const int cols = std::min(width - 1, x + radius) - std::max(0, x - radius) + 1;
  return static_cast<double>(rows) * cols;
}

double ncc_impl(std::span<const double> a, std::span<const double> b, int height, int width, int window,
                std::span<double> grad_a, std::span<double> grad_b) {
  if (a.size() != static_cast<std::size_t>(height) * width || b.size() != a.size()) {
    throw Error(ErrorKind::dimension, "images differ in size");
  }
  if (window < 3 || window % 2 == 0) throw Error(ErrorKind::config, "NCC window must be odd and at least 3");
  if (window > height || window > width) throw Error(ErrorKind::config, "NCC window larger than image");
  const int r = window / 2;
  const std::size_t n = a.size();

  std::vector<double> scratch;
  std::vector<double> sa(n), sb(n), saa(n), sbb(n), sab(n), tmp(n);
  box_sum(a, height, width, r, sa, scratch);
  box_sum(b, height, width, r, sb, scratch);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = a[i] * a[i];
  box_sum(tmp, height, width, r, saa, scratch);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = b[i] * b[i];
  box_sum(tmp, height, width, r, sbb, scratch);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = a[i] * b[i];
  box_sum(tmp, height, width, r, sab, scratch);

  const bool want_grad = !grad_a.empty();
  // Per-centre coefficients for the gradient, reusing the moment buffers.
  std::vector<double> alpha, alpha_mb, alpha_ma, beta_a, beta_a_ma, beta_b, beta_b_mb;
  if (want_grad) {
    alpha.resize(n);
    alpha_mb.resize(n);
    alpha_ma.resize(n);
    beta_a.resize(n);
    beta_a_ma.resize(n);
    beta_b.resize(n);
    beta_b_mb.resize(n);
  }

  double total = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      const double cnt = window_count(y, x, height, width, r);
      const double ma = sa[i] / cnt;
      const double mb = sb[i] / cnt;
      const double var_a = saa[i] / cnt - ma * ma;
      const double var_b = sbb[i] / cnt - mb * mb;
      const double cov = sab[i] / cnt - ma * mb;
      const double va = std::max(var_a, kVarianceFloor);
      const double vb = std::max(var_b, kVarianceFloor);
      const double denom = std::sqrt(va * vb);
      const double ncc = cov / denom;
      total += ncc;
      if (want_grad) {
        const double al = 1.0 / (cnt * denom);
        const double ba = var_a > kVarianceFloor ? ncc / (va * cnt) : 0.0;
        const double bb = var_b > kVarianceFloor ? ncc / (vb * cnt) : 0.0;
        alpha[i] = al;
        alpha_mb[i] = al * mb;
        alpha_ma[i] = al * ma;
        beta_a[i] = ba;
        beta_a_ma[i] = ba * ma;
        beta_b[i] = bb;
        beta_b_mb[i] = bb * mb;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  if (want_grad) {
    std::vector<double> s_alpha(n), s_alpha_mb(n), s_alpha_ma(n), s_ba(n), s_ba_ma(n), s_bb(n), s_bb_mb(n);
    box_sum(alpha, height, width, r, s_alpha, scratch);
    box_sum(alpha_mb, height, width, r, s_alpha_mb, scratch);
    box_sum(alpha_ma, height, width, r, s_alpha_ma, scratch);
    box_sum(beta_a, height, width, r, s_ba, scratch);
    box_sum(beta_a_ma, height, width, r, s_ba_ma, scratch);
    box_sum(beta_b, height, width, r, s_bb, scratch);
    box_sum(beta_b_mb, height, width, r, s_bb_mb, scratch);
    for (std::size_t i = 0; i < n; ++i) {
      grad_a[i] = inv * (b[i] * s_alpha[i] - s_alpha_mb[i] - a[i] * s_ba[i] + s_ba_ma[i]);
      grad_b[i] = inv * (a[i] * s_alpha[i] - s_alpha_ma[i] - b[i] * s_bb[i] + s_bb_mb[i]);
    }
  }
  return total * inv;
}

}  // namespace

std::vector<double> JointHistogram::marginal_first() const {
  std::vector<double> m(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) m[i] += (*this)(i, j);
  return m;
}

std::vector<double> JointHistogram::marginal_second() const {
  std::vector<double> m(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) m[j] += (*this)(i, j);
  return m;
}

JointHistogram soft_joint_histogram(std::span<const double> a, std::span<const double> b, int bins) {
  check_pair(a, b);
  check_bins(bins);
  JointHistogram h{bins, std::vector<double>(static_cast<std::size_t>(bins) * bins, 0.0)};
  for (std::size_t p = 0; p < a.size(); ++p) {
    const Corners c = corners(locate_bin(a[p], bins), locate_bin(b[p], bins), bins);
    for (int k = 0; k < 3; ++k) h.counts[c.cell[k]] += c.weight[k];
  }
  const double inv = 1.0 / static_cast<double>(a.size());
  for (auto& v : h.counts) v *= inv;
  return h;
}

NmiTerms nmi_with_gradient(std::span<const double> a, std::span<const double> b, int bins,
                           std::span<double> grad_a, std::span<double> grad_b) {
  check_pair(a, b);
  check_bins(bins);
  if (is_constant(a) || is_constant(b)) throw Error(ErrorKind::degenerate, "NMI of a constant image is undefined");

  const std::size_t pixels = a.size();
  std::vector<BinPosition> pos_a(pixels), pos_b(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    pos_a[p] = locate_bin(a[p], bins);
    pos_b[p] = locate_bin(b[p], bins);
  }
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    const Corners c = corners(pos_a[p], pos_b[p], bins);
    for (int k = 0; k < 3; ++k) joint[c.cell[k]] += c.weight[k];
  }
  const double inv = 1.0 / static_cast<double>(pixels);
  for (auto& v : joint) v *= inv;
  std::vector<double> ma(bins, 0.0), mb(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      ma[i] += joint[static_cast<std::size_t>(i) * bins + j];
      mb[j] += joint[static_cast<std::size_t>(i) * bins + j];
    }

  NmiTerms t;
  t.entropy_first = entropy(ma);
  t.entropy_second = entropy(mb);
  t.joint_entropy = entropy(joint);
  const double s = t.entropy_first + t.entropy_second;
  if (!(s > 0.0)) throw Error(ErrorKind::degenerate, "NMI needs a positive marginal entropy");
  t.nmi = 2.0 * (s - t.joint_entropy) / s;

  if (!grad_a.empty() || !grad_b.empty()) {
    // d NMI / d p_ij with marginals expressed through the joint; additive
    // constants cancel because corner weights sum to one.
    std::vector<double> cell_grad(joint.size());
    const double joint_scale = 2.0 / s;
    const double marginal_scale = -2.0 * t.joint_entropy / (s * s);
    for (int i = 0; i < bins; ++i) {
      for (int j = 0; j < bins; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * bins + j;
        cell_grad[k] = joint_scale * std::log(std::max(joint[k], kLogFloor)) +
                       marginal_scale * (std::log(std::max(ma[i], kLogFloor)) + std::log(std::max(mb[j], kLogFloor)));
      }
    }
    const double chain = (bins - 1) * inv;
    for (std::size_t p = 0; p < pixels; ++p) {
      const Corners c = corners(pos_a[p], pos_b[p], bins);
      double ga = 0.0;
      double gb = 0.0;
      for (int k = 0; k < 3; ++k) {
        ga += cell_grad[c.cell[k]] * c.d_first[k];
        gb += cell_grad[c.cell[k]] * c.d_second[k];
      }
      if (!grad_a.empty()) grad_a[p] = ga * chain;
      if (!grad_b.empty()) grad_b[p] = gb * chain;
    }
  }
  return t;
}

double nmi(std::span<const double> a, std::span<const double> b, int bins) {
  return nmi_with_gradient(a, b, bins, {}, {}).nmi;
}

double nmi(const Image& a, const Image& b, int bins) {
  if (a.height() != b.height() || a.width() != b.width()) throw Error(ErrorKind::dimension, "images differ in size");
  return nmi(a.values(), b.values(), bins);
}

double groupwise_nmi_loss(const ImageStack& warped, const Image& reference, int bins) {
  if (reference.height() != warped.height() || reference.width() != warped.width()) {
    throw Error(ErrorKind::dimension, "reference does not match stack");
  }
  double sum = 0.0;
  for (int n = 0; n < warped.frames(); ++n) sum += nmi(warped.frame(n), reference.values(), bins);
  return -sum / warped.frames();
}

double groupwise_nmi_loss_with_gradient(std::span<const double> frames, int n_frames, int bins,
                                        std::span<double> gradient) {
  const std::size_t pixels = frames.size() / n_frames;
  const std::vector<double> ref = mean_frame(frames, n_frames);
  std::vector<double> ref_grad(pixels, 0.0);
  std::vector<double> gb(pixels);
  const double w = -1.0 / n_frames;
  double loss = 0.0;
  for (int n = 0; n < n_frames; ++n) {
    auto frame = frames.subspan(n * pixels, pixels);
    auto g = gradient.subspan(n * pixels, pixels);
    loss += w * nmi_with_gradient(frame, ref, bins, g, gb).nmi;
    for (std::size_t p = 0; p < pixels; ++p) g[p] *= w;
    simd::axpy(w / n_frames, gb.data(), ref_grad.data(), pixels);
  }
  for (int n = 0; n < n_frames; ++n) simd::axpy(1.0, ref_grad.data(), gradient.data() + n * pixels, pixels);
  return loss;
}

double local_ncc(const Image& a, const Image& b, int window) {
  if (a.height() != b.height() || a.width() != b.width()) throw Error(ErrorKind::dimension, "images differ in size");
  return ncc_impl(a.values(), b.values(), a.height(), a.width(), window, {}, {});
}

double local_ncc_with_gradient(const Image& a, const Image& b, int window, std::span<double> grad_a,
                               std::span<double> grad_b) {
  if (a.height() != b.height() || a.width() != b.width()) throw Error(ErrorKind::dimension, "images differ in size");
  if (grad_a.size() != a.size() || grad_b.size() != b.size()) {
    throw Error(ErrorKind::dimension, "gradient buffers do not match image size");
  }
  return ncc_impl(a.values(), b.values(), a.height(), a.width(), window, grad_a, grad_b);
}

double groupwise_ncc_loss_with_gradient(std::span<const double> frames, int n_frames, int height, int width,
                                        int window, std::span<double> gradient) {
  const std::size_t pixels = static_cast<std::size_t>(height) * width;
  const std::vector<double> ref = mean_frame(frames, n_frames);
  std::vector<double> ref_grad(pixels, 0.0);
  std::vector<double> gb(pixels);
  const double w = -1.0 / n_frames;
  double loss = 0.0;
  for (int n = 0; n < n_frames; ++n) {
    auto frame = frames.subspan(n * pixels, pixels);
    auto g = gradient.subspan(n * pixels, pixels);
    loss += w * ncc_impl(frame, ref, height, width, window, g, gb);
    for (std::size_t p = 0; p < pixels; ++p) g[p] *= w;
    simd::axpy(w / n_frames, gb.data(), ref_grad.data(), pixels);
  }
  for (int n = 0; n < n_frames; ++n) simd::axpy(1.0, ref_grad.data(), gradient.data() + n * pixels, pixels);
  return loss;
}

double cyclic_loss_with_gradient(const DisplacementField& fields, DisplacementField& gradient) {
  const std::size_t plane = fields.plane_size();
  std::vector<double> sum(plane);
  double total = 0.0;
  const bool want_grad = gradient.same_shape(fields);
  std::vector<std::vector<double>> sums;
  for (int c = 0; c < 2; ++c) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (int n = 0; n < fields.frames(); ++n) simd::axpy(1.0, fields.plane(n, c).data(), sum.data(), plane);
    total += simd::dot(sum.data(), sum.data(), plane);
    if (want_grad) sums.push_back(sum);
  }
  const double norm = 1.0 / (2.0 * static_cast<double>(plane));
  const double loss = std::sqrt(total * norm);
  if (want_grad) {
    const double scale = loss > 0.0 ? norm / loss : 0.0;
    for (int n = 0; n < fields.frames(); ++n) {
      for (int c = 0; c < 2; ++c) {
        auto g = gradient.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) g[i] = scale * sums[c][i];
      }
    }
  }
  return loss;
}

double cyclic_loss(const DisplacementField& fields) {
  DisplacementField none;
  return cyclic_loss_with_gradient(fields, none);
}

std::vector<double> correlation_spectrum(const ImageStack& stack, const RoiMask* mask) {
  if (mask && (mask->height() != stack.height() || mask->width() != stack.width())) {
    throw Error(ErrorKind::dimension, "mask does not match stack");
  }
  const int n = stack.frames();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < stack.frame_size(); ++i)
    if (!mask || mask->contains(i)) keep.push_back(i);
  if (keep.size() < 2) throw Error(ErrorKind::degenerate, "correlation needs at least 2 pixels");

  Matrix z(n, static_cast<int>(keep.size()));
  for (int f = 0; f < n; ++f) {
    auto frame = stack.frame(f);
    auto row = z.row(f);
    double mean = 0.0;
    for (std::size_t k = 0; k < keep.size(); ++k) mean += frame[keep[k]];
    mean /= static_cast<double>(keep.size());
    double var = 0.0;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      row[k] = frame[keep[k]] - mean;
      var += row[k] * row[k];
    }
    if (!(var > 0.0)) throw Error(ErrorKind::degenerate, "frame " + std::to_string(f) + " is constant");
    const double inv = 1.0 / std::sqrt(var);
    for (auto& v : row) v *= inv;
  }
  Matrix corr = gram_rows(z);
  std::vector<double> norms(n);
  for (int i = 0; i < n; ++i) norms[i] = corr(i, i);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) corr(i, j) = i == j ? 1.0 : corr(i, j) / std::sqrt(norms[i] * norms[j]);
  }
  std::vector<double> values = symmetric_eigen(corr).values;
  double sum = 0.0;
  for (double v : values) sum += std::max(v, 0.0);
  for (auto& v : values) v = v > 1e-12 * sum ? v : 0.0;
  return values;
}

double d_pca(const ImageStack& stack, int top_k, const RoiMask* mask) {
  if (top_k < 1 || top_k > stack.frames()) {
    throw Error(ErrorKind::config, "top_k must lie in [1, " + std::to_string(stack.frames()) + "]");
  }
  const std::vector<double> values = correlation_spectrum(stack, mask);
  double sum = 0.0;
  double tail = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (static_cast<int>(i) >= top_k) tail += values[i];
  }
  return 100.0 * (1.0 - tail / sum);
}

}  // namespace qmr
