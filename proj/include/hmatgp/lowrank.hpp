#pragma once

#include "hmatgp/kernel.hpp"

#include <optional>

namespace hmatgp {

/// left * diag(sigma) * right^T with orthonormal left/right, sigma descending.
struct LowRankFactor {
  Matrix left;
  Vector sigma;
  Matrix right;

  Index rank() const { return sigma.size(); }
  Matrix dense() const { return left * sigma.asDiagonal() * right.transpose(); }
  static LowRankFactor zero(Index n1, Index n2, Index k);
};

/// left * middle * right^T with a general middle; the form the solver consumes.
struct BlockFactor {
  Matrix left;
  Matrix middle;
  Matrix right;

  Index rank() const { return middle.rows(); }
  Matrix dense() const { return left * middle * right.transpose(); }
  static BlockFactor from(const LowRankFactor& f);
};

struct FactorDerivative {
  Matrix d_left;
  Vector d_sigma;
  Matrix d_right;
};

struct FactorWithDerivative {
  LowRankFactor value;
  std::vector<LowRankFactor> deriv_value;
  std::vector<std::optional<FactorDerivative>> factor_derivs;
};

struct LowRankOptions {
  Index n_max = 5'000'000;
  /// Blocks with n1*n2 at or below this use a truncated dense SVD.
  Index dense_budget = 0;
  /// Extra sketch columns; the solver keeps this at 0.
  Index oversampling = 0;
  /// Sketch the full block instead of a column subsample.
  bool full_columns = false;
};

Index subsample_count(Index m, Index k, Index n_max);

/// Orthonormal basis (n1 x (k + oversampling)) for the sampled range of the block.
Matrix range_finder(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec,
                    Index k, Rng& rng, const LowRankOptions& opts = {});

struct InterpolativeDecomposition {
  Matrix X;
  IndexList skeleton;
};

/// Row ID via pivoted QR of Q^T: Q ~= X * Q(skeleton, :), X(skeleton, :) = I.
InterpolativeDecomposition interpolative_decomposition(const Matrix& Q);

LowRankFactor rsvd_id(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec,
                      Index k, Rng& rng, const LowRankOptions& opts = {});

/// Factorizes the block and each lengthscale derivative with shared columns and sketch.
FactorWithDerivative rsvd_id_d(const NodeSet& nodes, IndexSpan I1, IndexSpan I2,
                               const KernelSpec& spec, Index k, Rng& rng,
                               const LowRankOptions& opts = {});

/// First-order perturbation of a thin SVD along dA = da.left * diag(da.sigma) * da.right^T.
/// Throws DegenerateSpectrum when singular values are too close or too small.
FactorDerivative svd_derivative(const LowRankFactor& a, const LowRankFactor& da,
                                double gap_tolerance = 1e-10);

enum class NystromMode { rand, qr };

BlockFactor nystrom_baseline(const NodeSet& nodes, IndexSpan I1, IndexSpan I2,
                             const KernelSpec& spec, Index k, NystromMode mode, Rng& rng,
                             const LowRankOptions& opts = {});

/// Thin SVD truncated to k.
LowRankFactor truncated_svd(const Matrix& A, Index k);

}  // namespace hmatgp
