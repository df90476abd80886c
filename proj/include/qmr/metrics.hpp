#pragma once

#include <optional>
#include <span>
#include <vector>

#include "qmr/field.hpp"
#include "qmr/stack.hpp"

namespace qmr {

inline constexpr int default_bins = 32;

/// Normalized B x B joint histogram over [0, 1] x [0, 1]; counts(i, j) is
/// indexed by the bin of the first image (i) and of the second (j).
struct JointHistogram {
  int bins = 0;
  std::vector<double> counts;

  double operator()(int i, int j) const { return counts[static_cast<std::size_t>(i) * bins + j]; }
  std::vector<double> marginal_first() const;
  std::vector<double> marginal_second() const;
};

/// Partial-volume joint histogram. Bin centres sit at k / (B - 1). Each pair
/// (a, b) spreads unit mass over the corners of its bin cell with linear
/// barycentric weights on the diagonal split of the cell, so both marginals
/// are plain hat-kernel histograms and identical images fill only the
/// diagonal.
JointHistogram soft_joint_histogram(std::span<const double> a, std::span<const double> b, int bins);

struct NmiTerms {
  double nmi = 0.0;
  double entropy_first = 0.0;
  double entropy_second = 0.0;
  double joint_entropy = 0.0;
};

/// 2 MI(a, b) / (H(a) + H(b)) with natural-log entropies.
double nmi(std::span<const double> a, std::span<const double> b, int bins = default_bins);
double nmi(const Image& a, const Image& b, int bins = default_bins);

/// NMI plus its gradient with respect to every intensity of a and b.
NmiTerms nmi_with_gradient(std::span<const double> a, std::span<const double> b, int bins,
                           std::span<double> grad_a, std::span<double> grad_b);

/// -(1/N) sum_n NMI(warped_n, reference).
double groupwise_nmi_loss(const ImageStack& warped, const Image& reference, int bins = default_bins);

/// Groupwise NMI loss against the implicit (mean) reference of `frames`
/// (N consecutive planes of `pixels` values), with the gradient taken through
/// the reference as well.
double groupwise_nmi_loss_with_gradient(std::span<const double> frames, int n_frames, int bins,
                                        std::span<double> gradient);

/// Mean over pixels of windowed normalized cross-correlation. Windows are
/// truncated at the image border; local variances are floored at 1e-5.
double local_ncc(const Image& a, const Image& b, int window);

/// Local NCC plus gradient with respect to both images.
double local_ncc_with_gradient(const Image& a, const Image& b, int window, std::span<double> grad_a,
                               std::span<double> grad_b);

/// Groupwise NCC loss against the implicit reference, gradient included.
double groupwise_ncc_loss_with_gradient(std::span<const double> frames, int n_frames, int height,
                                        int width, int window, std::span<double> gradient);

/// sqrt( 1/(2HW) * sum_{pixels, channels} (sum_n u_n)^2 ).
double cyclic_loss(const DisplacementField& fields);

/// Cyclic loss and its gradient with respect to every field value (zero at
/// the non-differentiable origin).
double cyclic_loss_with_gradient(const DisplacementField& fields, DisplacementField& gradient);

/// Percentage of the frame correlation spectrum captured by the top-k
/// eigenvalues. Pixels outside `mask` are ignored when a mask is given.
double d_pca(const ImageStack& stack, int top_k, const RoiMask* mask = nullptr);

/// Eigenvalues (descending) of the frame correlation matrix.
std::vector<double> correlation_spectrum(const ImageStack& stack, const RoiMask* mask = nullptr);

}  // namespace qmr
