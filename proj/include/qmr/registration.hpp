#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qmr/field.hpp"
#include "qmr/rpca.hpp"
#include "qmr/stack.hpp"

namespace qmr {

enum class Similarity { nmi, ncc };

const char* to_string(Similarity similarity);
Similarity parse_similarity(const std::string& text);

struct RegistrationConfig {
  double lambda_smooth = 0.001;
  double lambda_cyclic = 0.01;
  int rounds = 3;
  int steps_per_round = 300;
  double step_size = 0.5;        // pixels, largest first move of any coefficient
  double control_spacing = 4.0;  // pixels
  int bins = 32;
  int ncc_window = 9;
  double similarity_sigma = 0.0;  // Gaussian blur (px) of warped frames before comparison, 0 = off
  Similarity similarity = Similarity::nmi;
  RpcaConfig rpca;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double similarity = 0.0;
  double smooth = 0.0;
  double cyclic = 0.0;
};

struct LossAndGradient {
  LossBreakdown loss;
  ControlGrid gradient;
};

/// Pixelwise mean over frames.
Image implicit_reference(const ImageStack& warped);

/// L_similarity + lambda_smooth * L_smooth + lambda_cyclic * L_cyclic for
/// the stack warped by the upsampled grids. NMI mode expects intensities in
/// [0, 1].
LossBreakdown total_loss(const ImageStack& stack, const ControlGrid& grids, const RegistrationConfig& config);

/// Total loss and its analytic gradient with respect to every coefficient.
LossAndGradient loss_gradient(const ImageStack& stack, const ControlGrid& grids, const RegistrationConfig& config);

struct RoundOutcome {
  ControlGrid grids;
  std::vector<LossBreakdown> trace;  // initial loss, then one record per accepted step
  int accepted_steps = 0;
  int rejected_steps = 0;
};

/// Gradient descent with moment-based per-coefficient scaling and
/// backtracking. The returned grids never have a higher total loss than
/// `init`.
RoundOutcome optimize_round(const ImageStack& stack, const ControlGrid& init, const RegistrationConfig& config);

struct RoundReport {
  int round = 0;
  double d_pca_before = 0.0;
  double d_pca_after = 0.0;
  int rpca_iterations = 0;
  double rpca_error = 0.0;
  int accepted_steps = 0;
  int rejected_steps = 0;
  double mean_displacement = 0.0;  // of this round's field, pixels
};

struct RegistrationResult {
  DisplacementField fields;                 // composed over all rounds
  std::vector<ControlGrid> grids_per_round;
  ImageStack warped;                        // original input warped by `fields`
  std::vector<std::vector<LossBreakdown>> loss_traces;  // per round
  std::vector<RoundReport> round_reports;
  bool aborted = false;
  std::string diagnostic;
};

/// Decompose, register the low-rank part, compose, and re-warp the original
/// input, for config.rounds rounds.
RegistrationResult rpca_register(const ImageStack& stack, const RegistrationConfig& config);

}  // namespace qmr
