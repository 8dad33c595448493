#pragma once

#include "hmatgp/lowrank.hpp"
#include "hmatgp/partition.hpp"

namespace hmatgp {

enum class LowRankMethod { rsvd_id, nystrom_rand, nystrom_qr };

struct SolveConfig {
  Index eta = 105;
  Index k = 20;
  Index n_max = 5'000'000;
  double noise_variance = 1e-3;
  std::uint64_t seed = 0;
  /// Off-diagonal blocks with n1*n2 at or below this are factorized densely.
  /// Negative means min(eta^2, kDefaultDenseCap): a dense SVD of a larger sibling pair costs more
  /// than the leaf factorizations it sits between.
  Index dense_budget = -1;
  static constexpr Index kDefaultDenseCap = 40'000;
  LowRankMethod method = LowRankMethod::rsvd_id;

  void validate() const;
  LowRankOptions lowrank_options() const;
};

struct SMWIngredients {
  Matrix x_d;   ///< A_ii^{-1} Y_i
  Matrix q_l;   ///< A_ii^{-1} Gamma
  Matrix q_lr;  ///< Gamma^T q_l
  Matrix q_ry;  ///< Gamma^T x_d
};

/// [[M^{-1}, q_lr2], [q_lr1, M^{-T}]] with singular values clamped below eps*sigma_1*k.
struct SMWCorrection {
  Matrix c_smw;
};

SMWCorrection assemble_correction(const BlockFactor& factor, const Matrix& q_lr1, const Matrix& q_lr2);

/// Result of coupling two sibling solves through the off-diagonal factor.
/// The correction is solved in the scaled form K = C * C_smw = [[I, M q_lr2], [M^T q_lr1, I]],
/// which never inverts M.
struct SMWCombined {
  Matrix x;  ///< stacked [x_D1 - q_l1 s1; x_D2 - q_l2 s2]
  Matrix s;  ///< C_smw^{-1} [q_ry2; q_ry1], 2k x d_y
  Eigen::PartialPivLU<Matrix> k_lu;
  double log_abs_det_k = 0.0;
  int sign_k = 1;
};

SMWCombined smw_combine(const SMWIngredients& ing1, const SMWIngredients& ing2,
                        const BlockFactor& factor);

/// Dense factorization of a leaf block A + sigma^2 I: Cholesky with LU fallback.
class LeafFactor {
 public:
  explicit LeafFactor(const Matrix& A);
  Matrix solve(const Matrix& B) const;
  double log_abs_det() const { return log_abs_det_; }
  int sign() const { return sign_; }

 private:
  Eigen::LLT<Matrix> llt_;
  Eigen::PartialPivLU<Matrix> lu_;
  bool use_lu_ = false;
  double log_abs_det_ = 0.0;
  int sign_ = 1;
};

/// Hierarchical solve of (A + sigma^2 I) X = Y with the size-rule/permute tree.
Matrix back_solve(const NodeSet& nodes, const Matrix& Y, const KernelSpec& spec, const SolveConfig& cfg);

/// Hierarchical solve on a prebuilt tree (any aggregation). Y and X are in the original order.
Matrix back_solve_tree(const NodeSet& nodes, const PartitionTree& tree, const Matrix& Y,
                       const KernelSpec& spec, const SolveConfig& cfg);

/// Ingredients for one child: nodes_i are taken in their given order (no re-permutation).
SMWIngredients smw_ing(const NodeSet& nodes_i, const Matrix& gamma_sibling, const Matrix& Y_i,
                       const KernelSpec& spec, const SolveConfig& cfg);

Matrix dense_solve(const NodeSet& nodes, const Matrix& Y, const KernelSpec& spec,
                   double noise_variance, Index cap = 8000);

/// Off-diagonal factor of a tree node's block, drawn from its keyed stream.
BlockFactor offdiag_factor(const NodeSet& permuted, const PartitionTree& tree, const TreeNode& node,
                           const KernelSpec& spec, const SolveConfig& cfg);

}  // namespace hmatgp
