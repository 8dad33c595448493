#include "hmatgp/hsolve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hmatgp {

void SolveConfig::validate() const {
  if (eta < 1 || k < 1 || n_max < 1) throw InvalidArgument("SolveConfig needs eta, k, n_max >= 1");
  if (!(noise_variance >= 0.0)) throw InvalidArgument("noise variance must be nonnegative");
}

LowRankOptions SolveConfig::lowrank_options() const {
  LowRankOptions o;
  o.n_max = n_max;
  o.dense_budget = dense_budget < 0 ? std::min<Index>(eta * eta, kDefaultDenseCap) : dense_budget;
  return o;
}

SMWCorrection assemble_correction(const BlockFactor& factor, const Matrix& q_lr1, const Matrix& q_lr2) {
  const Index k = factor.rank();
  Matrix minv;
  if (factor.middle.isDiagonal()) {
    Vector s = factor.middle.diagonal();
    const double floor = std::numeric_limits<double>::epsilon() * (k ? s.maxCoeff() : 0.0) * static_cast<double>(k);
    for (Index i = 0; i < k; ++i) s[i] = std::max(s[i], floor);
    minv = s.cwiseInverse().asDiagonal();
  } else {
    minv = factor.middle.inverse();
  }
  SMWCorrection c;
  c.c_smw.resize(2 * k, 2 * k);
  c.c_smw << minv, q_lr2, q_lr1, minv.transpose();
  return c;
}

SMWCombined smw_combine(const SMWIngredients& ing1, const SMWIngredients& ing2, const BlockFactor& factor) {
  const Index k = factor.rank();
  const Index n1 = ing1.x_d.rows(), n2 = ing2.x_d.rows(), c = ing1.x_d.cols();
  SMWCombined out;
  out.x.resize(n1 + n2, c);
  if (k == 0 || factor.middle.norm() == 0.0) {
    out.x << ing1.x_d, ing2.x_d;
    out.s = Matrix::Zero(2 * k, c);
    out.k_lu = Eigen::PartialPivLU<Matrix>(Matrix::Identity(2 * k, 2 * k));
    return out;
  }
  const Matrix& M = factor.middle;
  Matrix K(2 * k, 2 * k);
  K << Matrix::Identity(k, k), M * ing2.q_lr, M.transpose() * ing1.q_lr, Matrix::Identity(k, k);
  Matrix rhs(2 * k, c);
  rhs << M * ing2.q_ry, M.transpose() * ing1.q_ry;
  out.k_lu.compute(K);
  const Matrix& LU = out.k_lu.matrixLU();
  int sign = out.k_lu.permutationP().determinant() > 0 ? 1 : -1;
  double logdet = 0.0;
  for (Index i = 0; i < 2 * k; ++i) {
    const double p = LU(i, i);
    if (p == 0.0) throw NumericError("SMW correction matrix is singular");
    if (p < 0) sign = -sign;
    logdet += std::log(std::abs(p));
  }
  out.log_abs_det_k = logdet;
  out.sign_k = sign;
  out.s = out.k_lu.solve(rhs);
  out.x.topRows(n1) = ing1.x_d - ing1.q_l * out.s.topRows(k);
  out.x.bottomRows(n2) = ing2.x_d - ing2.q_l * out.s.bottomRows(k);
  return out;
}

LeafFactor::LeafFactor(const Matrix& A) : llt_(A) {
  if (llt_.info() == Eigen::Success) {
    log_abs_det_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    return;
  }
  use_lu_ = true;
  lu_.compute(A);
  const Matrix& LU = lu_.matrixLU();
  sign_ = lu_.permutationP().determinant() > 0 ? 1 : -1;
  for (Index i = 0; i < A.rows(); ++i) {
    if (LU(i, i) == 0.0) throw NotPositiveDefinite("leaf block is singular");
    if (LU(i, i) < 0) sign_ = -sign_;
    log_abs_det_ += std::log(std::abs(LU(i, i)));
  }
}

Matrix LeafFactor::solve(const Matrix& B) const { return use_lu_ ? Matrix(lu_.solve(B)) : Matrix(llt_.solve(B)); }

BlockFactor offdiag_factor(const NodeSet& permuted, const PartitionTree& tree, const TreeNode& node,
                           const KernelSpec& spec, const SolveConfig& cfg) {
  const TreeNode& a = tree.nodes[static_cast<std::size_t>(node.first)];
  const TreeNode& b = tree.nodes[static_cast<std::size_t>(node.second)];
  const IndexList I1 = iota_list(a.offset, a.size), I2 = iota_list(b.offset, b.size);
  Rng rng = block_stream(cfg.seed, static_cast<std::uint64_t>(node.level), static_cast<std::uint64_t>(node.ordinal));
  switch (cfg.method) {
    case LowRankMethod::rsvd_id:
      return BlockFactor::from(rsvd_id(permuted, I1, I2, spec, cfg.k, rng, cfg.lowrank_options()));
    case LowRankMethod::nystrom_rand:
      return nystrom_baseline(permuted, I1, I2, spec, cfg.k, NystromMode::rand, rng, cfg.lowrank_options());
    case LowRankMethod::nystrom_qr:
      return nystrom_baseline(permuted, I1, I2, spec, cfg.k, NystromMode::qr, rng, cfg.lowrank_options());
  }
  throw InvalidArgument("unknown low-rank method");
}

namespace {

Matrix hstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

class Solver {
 public:
  Solver(const NodeSet& permuted, const PartitionTree& tree, const KernelSpec& spec, const SolveConfig& cfg)
      : nodes_(permuted), tree_(tree), spec_(spec), cfg_(cfg) {}

  Matrix solve(int id, const Matrix& Y) const {
    const TreeNode& node = tree_.nodes[static_cast<std::size_t>(id)];
    if (node.is_leaf()) {
      const IndexList I = iota_list(node.offset, node.size);
      Matrix A = eval_block(nodes_, I, I, spec_);
      A.diagonal().array() += cfg_.noise_variance;
      return LeafFactor(A).solve(Y);
    }
    const BlockFactor f = offdiag_factor(nodes_, tree_, node, spec_, cfg_);
    const TreeNode& a = tree_.nodes[static_cast<std::size_t>(node.first)];
    const SMWIngredients ing1 = ingredients(node.first, Y.topRows(a.size), f.left);
    const SMWIngredients ing2 = ingredients(node.second, Y.bottomRows(node.size - a.size), f.right);
    return smw_combine(ing1, ing2, f).x;
  }

  SMWIngredients ingredients(int id, const Matrix& Y, const Matrix& gamma) const {
    const Matrix Z = solve(id, hstack(Y, gamma));
    SMWIngredients ing;
    ing.x_d = Z.leftCols(Y.cols());
    ing.q_l = Z.rightCols(gamma.cols());
    ing.q_lr = gamma.transpose() * ing.q_l;
    ing.q_ry = gamma.transpose() * ing.x_d;
    return ing;
  }

 private:
  const NodeSet& nodes_;
  const PartitionTree& tree_;
  const KernelSpec& spec_;
  const SolveConfig& cfg_;
};

}  // namespace

Matrix back_solve_tree(const NodeSet& nodes, const PartitionTree& tree, const Matrix& Y,
                       const KernelSpec& spec, const SolveConfig& cfg) {
  cfg.validate();
  spec.validate(nodes.dim());
  if (Y.rows() != nodes.size()) throw InvalidArgument("right-hand side row count differs from node count");
  const NodeSet permuted = nodes.select(tree.perm);
  Matrix Yp(Y.rows(), Y.cols());
  for (Index i = 0; i < Y.rows(); ++i) Yp.row(i) = Y.row(tree.perm[static_cast<std::size_t>(i)]);
  const Matrix Xp = Solver(permuted, tree, spec, cfg).solve(0, Yp);
  Matrix X(Y.rows(), Y.cols());
  for (Index i = 0; i < Y.rows(); ++i) X.row(tree.perm[static_cast<std::size_t>(i)]) = Xp.row(i);
  return X;
}

Matrix back_solve(const NodeSet& nodes, const Matrix& Y, const KernelSpec& spec, const SolveConfig& cfg) {
  cfg.validate();
  spec.validate(nodes.dim());
  return back_solve_tree(nodes, build_tree(nodes, cfg.eta, spec), Y, spec, cfg);
}

SMWIngredients smw_ing(const NodeSet& nodes_i, const Matrix& gamma_sibling, const Matrix& Y_i,
                       const KernelSpec& spec, const SolveConfig& cfg) {
  cfg.validate();
  const PartitionTree tree = build_tree_unpermuted(nodes_i.size(), cfg.eta);
  return Solver(nodes_i, tree, spec, cfg).ingredients(0, Y_i, gamma_sibling);
}

Matrix dense_solve(const NodeSet& nodes, const Matrix& Y, const KernelSpec& spec, double noise_variance, Index cap) {
  if (nodes.size() > cap) throw InvalidArgument("dense_solve size exceeds cap");
  const IndexList I = iota_list(0, nodes.size());
  Matrix A = eval_block(nodes, I, I, spec);
  A.diagonal().array() += noise_variance;
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("dense_solve: matrix is not positive definite");
  return llt.solve(Y);
}

}  // namespace hmatgp
