#pragma once

#include <cstdint>
#include <vector>

#include "qmr/linalg.hpp"
#include "qmr/stack.hpp"

namespace qmr {

/// 1 / sqrt(max(m, n)), the customary nuclear-norm/l1 trade-off. GoDec does
/// not use it; it is reported alongside decompositions for reference.
double compute_default_lambda(int m, int n);

struct TruncatedSvd {
  Matrix left;                  // rows x r
  std::vector<double> singular; // r values, nonincreasing
  Matrix right;                 // cols x r
  int iterations = 0;
};

struct SvdOptions {
  std::uint64_t seed = 0x5eedULL;
  int max_iterations = 20000;
  double tolerance = 1e-14;  // residual relative to the largest Gram diagonal
  const Matrix* warm_start = nullptr;  // rows x k starting basis, k >= r
};

/// Top-r singular triplets by subspace iteration on the smaller Gram matrix
/// followed by Rayleigh-Ritz. Deterministic for a fixed seed.
TruncatedSvd truncated_svd(const Matrix& matrix, int rank, const SvdOptions& options = {});

struct RpcaConfig {
  int rank = 0;                 // 0 selects floor(N / 2)
  double sparse_fraction = 0.10;
  int max_iterations = 100;
  double tolerance = 1e-7;
  std::uint64_t seed = 0x5eedULL;
};

struct Decomposition {
  ImageStack low_rank;
  ImageStack sparse;
  int rank = 0;
  int iterations_used = 0;
  double final_relative_error = 0.0;
  std::vector<double> objective_trace;   // ||M - L_t - S_t||_F per iteration
  std::vector<double> singular_values;   // of the final low-rank part
  double lambda = 0.0;
};

/// Matrix view of a stack: one flattened frame per row.
Matrix stack_to_matrix(const ImageStack& stack);

/// Alternates a rank-r projection and a hard threshold keeping the
/// ceil(sparse_fraction * N * H * W) largest-magnitude residual entries.
Decomposition godec_decompose(const ImageStack& stack, const RpcaConfig& config = {});

}  // namespace qmr
