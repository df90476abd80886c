#include "qmr/rpca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "qmr/error.hpp"
#include "qmr/simd.hpp"

namespace qmr {
namespace {

// Modified Gram-Schmidt, applied twice. Columns that collapse are replaced by
// fresh draws from `rng` and re-orthogonalized.
void orthonormalize_columns(Matrix& q, std::mt19937_64& rng) {
  const int m = q.rows();
  const int k = q.cols();
  std::normal_distribution<double> normal;
  for (int c = 0; c < k; ++c) {
    for (int attempt = 0; attempt < 4; ++attempt) {
      double original = 0.0;
      for (int r = 0; r < m; ++r) original += q(r, c) * q(r, c);
      original = std::sqrt(original);
      for (int pass = 0; pass < 2; ++pass) {
        for (int p = 0; p < c; ++p) {
          double proj = 0.0;
          for (int r = 0; r < m; ++r) proj += q(r, p) * q(r, c);
          for (int r = 0; r < m; ++r) q(r, c) -= proj * q(r, p);
        }
      }
      double norm = 0.0;
      for (int r = 0; r < m; ++r) norm += q(r, c) * q(r, c);
      norm = std::sqrt(norm);
      if (norm > 1e-10 * original && norm > 0.0) {
        for (int r = 0; r < m; ++r) q(r, c) /= norm;
        break;
      }
      for (int r = 0; r < m; ++r) q(r, c) = normal(rng);
    }
  }
}

// Subspace iteration with Rayleigh-Ritz on the symmetric PSD matrix g.
// Returns (basis, ritz values) with columns sorted by descending value.
SymmetricEigen top_eigenpairs(const Matrix& g, int rank, const SvdOptions& options, int& iterations) {
  const int m = g.rows();
  const int block = std::min(m, rank + 5);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;

  Matrix q(m, block);
  for (auto& v : q.values()) v = normal(rng);
  if (options.warm_start && options.warm_start->rows() == m) {
    const int cols = std::min(block, options.warm_start->cols());
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < cols; ++c) q(r, c) = (*options.warm_start)(r, c);
  }
  orthonormalize_columns(q, rng);

  double g_scale = 0.0;
  for (int i = 0; i < m; ++i) g_scale = std::max(g_scale, std::abs(g(i, i)));

  SymmetricEigen ritz;
  Matrix gq = multiply(g, q);
  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (iterations = 1; iterations <= options.max_iterations; ++iterations) {
    // Rayleigh-Ritz on the current basis.
    Matrix t = multiply(q.transposed(), gq);
    for (int i = 0; i < block; ++i)
      for (int j = i + 1; j < block; ++j) t(i, j) = t(j, i) = 0.5 * (t(i, j) + t(j, i));
    SymmetricEigen small = symmetric_eigen(t);
    q = multiply(q, small.vectors);
    gq = multiply(gq, small.vectors);
    ritz.values = small.values;

    double worst = 0.0;
    for (int c = 0; c < rank; ++c) {
      double res = 0.0;
      for (int r = 0; r < m; ++r) {
        const double d = gq(r, c) - small.values[c] * q(r, c);
        res += d * d;
      }
      worst = std::max(worst, std::sqrt(res));
    }
    if (block == m || worst <= options.tolerance * std::max(g_scale, 1e-300) || g_scale == 0.0) break;
    // Residuals at the rounding floor stop shrinking; give up after a while.
    if (worst < 0.5 * best) {
      best = worst;
      stalled = 0;
    } else if (++stalled > 25) {
      break;
    }

    q = gq;
    orthonormalize_columns(q, rng);
    gq = multiply(g, q);
  }
  ritz.vectors = q;
  return ritz;
}

}  // namespace

double compute_default_lambda(int m, int n) {
  if (m < 1 || n < 1) throw Error(ErrorKind::config, "matrix dimensions must be positive");
  return 1.0 / std::sqrt(static_cast<double>(std::max(m, n)));
}

TruncatedSvd truncated_svd(const Matrix& matrix, int rank, const SvdOptions& options) {
  if (rank < 1 || rank > std::min(matrix.rows(), matrix.cols())) {
    throw Error(ErrorKind::config, "truncated SVD rank " + std::to_string(rank) + " out of range");
  }
  if (matrix.rows() > matrix.cols()) {
    TruncatedSvd t = truncated_svd(matrix.transposed(), rank, options);
    std::swap(t.left, t.right);
    return t;
  }

  const Matrix g = gram_rows(matrix);
  TruncatedSvd out;
  SymmetricEigen eig = top_eigenpairs(g, rank, options, out.iterations);

  const int m = matrix.rows();
  const int n = matrix.cols();
  out.left = Matrix(m, rank);
  out.right = Matrix(n, rank);
  out.singular.resize(rank);
  std::vector<double> column(n);
  for (int c = 0; c < rank; ++c) {
    const double sigma = std::sqrt(std::max(eig.values[c], 0.0));
    out.singular[c] = sigma;
    for (int r = 0; r < m; ++r) out.left(r, c) = eig.vectors(r, c);
    if (sigma == 0.0) continue;
    std::fill(column.begin(), column.end(), 0.0);
    for (int r = 0; r < m; ++r) simd::axpy(eig.vectors(r, c), matrix.row(r).data(), column.data(), n);
    for (int j = 0; j < n; ++j) out.right(j, c) = column[j] / sigma;
  }
  return out;
}

Matrix stack_to_matrix(const ImageStack& stack) {
  return Matrix(stack.frames(), static_cast<int>(stack.frame_size()),
                std::vector<double>(stack.values().begin(), stack.values().end()));
}

Decomposition godec_decompose(const ImageStack& stack, const RpcaConfig& config) {
  const int frames = stack.frames();
  const auto pixels = static_cast<int>(stack.frame_size());
  const int rank = config.rank > 0 ? config.rank : frames / 2;
  if (rank < 1 || rank > std::min(frames, pixels)) {
    throw Error(ErrorKind::config, "rPCA rank " + std::to_string(rank) + " out of range for " +
                                       std::to_string(frames) + " frames");
  }
  if (!(config.sparse_fraction > 0.0 && config.sparse_fraction <= 1.0)) {
    throw Error(ErrorKind::config, "sparse_fraction must lie in (0, 1]");
  }
  if (config.max_iterations < 1 || !(config.tolerance >= 0.0)) {
    throw Error(ErrorKind::config, "invalid GoDec iteration settings");
  }

  const Matrix m = stack_to_matrix(stack);
  const std::size_t total = m.values().size();
  const auto keep = static_cast<std::size_t>(std::ceil(config.sparse_fraction * static_cast<double>(total)));
  const double norm_m = m.frobenius_norm();

  Decomposition out{stack.with_values(std::vector<double>(total, 0.0)),
                    stack.with_values(std::vector<double>(total, 0.0)),
                    rank, 1, 0.0, {}, std::vector<double>(rank, 0.0),
                    compute_default_lambda(frames, pixels)};
  if (norm_m == 0.0) {
    out.objective_trace.push_back(0.0);
    return out;
  }

  const auto mv = m.values();
  std::vector<double> low(total, 0.0);
  std::vector<double> sparse(total, 0.0);
  std::vector<double> work(total);
  std::vector<std::size_t> order(total);
  Matrix basis;
  double objective = norm_m;

  auto residual_norm = [&](const std::vector<double>& l, const std::vector<double>& s) {
    for (std::size_t i = 0; i < total; ++i) work[i] = mv[i] - l[i] - s[i];
    return std::sqrt(simd::dot(work.data(), work.data(), total));
  };

  int iteration = 0;
  for (iteration = 1; iteration <= config.max_iterations; ++iteration) {
    // L-step: best rank-r approximation of M - S.
    Matrix x(frames, pixels);
    for (std::size_t i = 0; i < total; ++i) x.values()[i] = mv[i] - sparse[i];
    SvdOptions svd_options;
    svd_options.seed = config.seed;
    svd_options.warm_start = basis.rows() > 0 ? &basis : nullptr;
    TruncatedSvd svd = truncated_svd(x, rank, svd_options);
    basis = svd.left;

    Matrix coeffs(rank, pixels);  // U^T X
    for (int c = 0; c < rank; ++c)
      for (int r = 0; r < frames; ++r) simd::axpy(svd.left(r, c), x.row(r).data(), coeffs.row(c).data(), pixels);
    std::vector<double> candidate(total, 0.0);
    for (int r = 0; r < frames; ++r)
      for (int c = 0; c < rank; ++c)
        simd::axpy(svd.left(r, c), coeffs.row(c).data(), candidate.data() + static_cast<std::size_t>(r) * pixels,
                   pixels);

    double after_l = residual_norm(candidate, sparse);
    if (after_l <= objective) {
      low = std::move(candidate);
      out.singular_values = svd.singular;
    } else {
      after_l = objective;
    }

    // S-step: keep the largest-magnitude entries of M - L.
    for (std::size_t i = 0; i < total; ++i) work[i] = mv[i] - low[i];
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto by_magnitude = [&](std::size_t a, std::size_t b) {
      const double fa = std::abs(work[a]);
      const double fb = std::abs(work[b]);
      return fa > fb || (fa == fb && a < b);
    };
    std::vector<double> next(total, 0.0);
    if (keep < total) {
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), by_magnitude);
    }
    for (std::size_t i = 0; i < std::min(keep, total); ++i) next[order[i]] = work[order[i]];

    double after_s = residual_norm(low, next);
    if (after_s <= after_l) {
      sparse = std::move(next);
    } else {
      after_s = after_l;
    }

    out.objective_trace.push_back(after_s);
    const double change = std::abs(objective - after_s);
    objective = after_s;
    if (change <= config.tolerance * norm_m) break;
  }

  out.iterations_used = std::min(iteration, config.max_iterations);
  out.final_relative_error = objective / norm_m;
  out.low_rank = stack.with_values(std::move(low));
  out.sparse = stack.with_values(std::move(sparse));
  return out;
}

}  // namespace qmr
