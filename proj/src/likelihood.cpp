#include "hmatgp/likelihood.hpp"

#include <cmath>
#include <numbers>

namespace hmatgp {

TTerms make_tterms(const SMWIngredients& ing1, const SMWIngredients& ing2, const Vector& y1, const Vector& y2,
                   const SMWCorrection& corr) {
  const Index k = ing1.q_l.cols();
  TTerms t;
  t.t1 = y1.dot(ing1.x_d.col(0)) + y2.dot(ing2.x_d.col(0));
  t.t21.resize(1, 2 * k);
  t.t21 << y1.transpose() * ing1.q_l, y2.transpose() * ing2.q_l;
  t.t23.resize(2 * k, 1);
  t.t23 << ing2.q_ry.col(0), ing1.q_ry.col(0);
  t.t22.compute(corr.c_smw);
  return t;
}

EnergyLogdet energy_logdet_combine(const EnergyLogdet& part1, const EnergyLogdet& part2,
                                   const SMWIngredients& ing1, const SMWIngredients& ing2,
                                   const Vector& y1, const Vector& y2, const SMWCombined& combined) {
  const Index k = ing1.q_l.cols();
  EnergyLogdet out;
  // T21 C_smw^{-1} T23 with C_smw^{-1} T23 = s.
  double correction = 0.0;
  if (k > 0)
    correction = (y1.transpose() * ing1.q_l * combined.s.topRows(k).col(0))(0) +
                 (y2.transpose() * ing2.q_l * combined.s.bottomRows(k).col(0))(0);
  out.pi = part1.pi + part2.pi - correction;
  // log|det C| + log|det C_smw| = log|det K|.
  out.lambda = part1.lambda + part2.lambda + combined.log_abs_det_k;
  out.sign = part1.sign * part2.sign * combined.sign_k;
  return out;
}

std::pair<double, double> gradient_terms(const TTerms& t, const GradientInputs& in) {
  const SMWIngredients& i1 = *in.ing1;
  const SMWIngredients& i2 = *in.ing2;
  const Index k = in.sigma.size();
  if (k == 0) return {0.0, 0.0};
  const Vector xd1 = i1.x_d.col(0), xd2 = i2.x_d.col(0);
  const Matrix& dgl = in.dfactor.d_left;
  const Matrix& dgr = in.dfactor.d_right;
  const Vector& ds = in.dfactor.d_sigma;

  const Matrix e1 = xd1.transpose() * dgl - xd1.transpose() * *in.adq1;
  const Matrix e2 = xd2.transpose() * dgr - xd2.transpose() * *in.adq2;
  Matrix dt21(1, 2 * k), dt23(2 * k, 1);
  dt21 << e1, e2;
  dt23 << e2.transpose(), e1.transpose();

  const Matrix dqlr1 = dgl.transpose() * i1.q_l + i1.q_l.transpose() * dgl - i1.q_l.transpose() * *in.adq1;
  const Matrix dqlr2 = dgr.transpose() * i2.q_l + i2.q_l.transpose() * dgr - i2.q_l.transpose() * *in.adq2;
  const Matrix dminv = (-ds.array() / in.sigma.array().square()).matrix().asDiagonal();
  Matrix dc(2 * k, 2 * k);
  dc << dminv, dqlr2, dqlr1, dminv;

  const Matrix t22 = t.t22.inverse();
  const Matrix w = t22 * t.t23;
  const Matrix v = t.t21 * t22;
  // d(T21 T22 T23) with dT22 = -T22 dC T22.
  const double dtriple = (dt21 * w)(0) - (v * dc * w)(0) + (v * dt23)(0);
  const double dpi = -dtriple;
  const double dlambda = 2.0 * (ds.array() / in.sigma.array()).sum() + (t22 * dc).trace();
  return {dpi, dlambda};
}

double logdet_gradient_product(const SMWIngredients& ing1, const SMWIngredients& ing2, const Matrix& adq1,
                               const Matrix& adq2, const BlockFactor& factor, const BlockFactor& dfactor,
                               const SMWCombined& combined) {
  const Index k = factor.rank();
  if (k == 0) return 0.0;
  const Matrix G = (ing1.q_l.transpose() * dfactor.left) * dfactor.middle * (dfactor.right.transpose() * ing2.q_l);
  Matrix N(2 * k, 2 * k);
  N << G.transpose(), ing2.q_l.transpose() * adq2, ing1.q_l.transpose() * adq1, G;
  Matrix CN(2 * k, 2 * k);
  CN.topRows(k) = factor.middle * N.topRows(k);
  CN.bottomRows(k) = factor.middle.transpose() * N.bottomRows(k);
  // C_smw^{-1} = K^{-1} C.
  return -combined.k_lu.solve(CN).trace();
}

Matrix apply_dA(const SMWIngredients& ing1, const SMWIngredients& ing2, const Matrix& adx_d1,
                const Matrix& adq1, const Matrix& adx_d2, const Matrix& adq2, const BlockFactor& dfactor,
                const SMWCombined& combined) {
  const Index n1 = ing1.x_d.rows(), n2 = ing2.x_d.rows(), k = ing1.q_l.cols();
  const auto x1 = combined.x.topRows(n1);
  const auto x2 = combined.x.bottomRows(n2);
  Matrix out(n1 + n2, combined.x.cols());
  out.topRows(n1) = adx_d1 + dfactor.left * (dfactor.middle * (dfactor.right.transpose() * x2));
  out.bottomRows(n2) = adx_d2 + dfactor.right * (dfactor.middle.transpose() * (dfactor.left.transpose() * x1));
  if (k > 0) {
    out.topRows(n1) -= adq1 * combined.s.topRows(k);
    out.bottomRows(n2) -= adq2 * combined.s.bottomRows(k);
  }
  return out;
}

namespace {

struct NodeResult {
  Matrix x;
  std::vector<Matrix> adx;
  EnergyLogdet el;
  Vector dpi;
  Vector dlambda;
};

Matrix hstack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

SMWIngredients slice(const Matrix& z, Index c, const Matrix& gamma) {
  SMWIngredients ing;
  ing.x_d = z.leftCols(c);
  ing.q_l = z.rightCols(gamma.cols());
  ing.q_lr = gamma.transpose() * ing.q_l;
  ing.q_ry = gamma.transpose() * ing.x_d;
  return ing;
}

class LikelihoodRecursion {
 public:
  LikelihoodRecursion(const NodeSet& nodes, const PartitionTree& tree, const KernelSpec& spec,
                      const SolveConfig& cfg, GradientMode mode)
      : nodes_(nodes), tree_(tree), spec_(spec), cfg_(cfg), mode_(mode),
        np_(spec.parameter_count(nodes.dim())) {}

  Index fallbacks = 0;

  NodeResult run(int id, const Matrix& Y) {
    const TreeNode& node = tree_.nodes[static_cast<std::size_t>(id)];
    return node.is_leaf() ? leaf(node, Y) : internal(node, Y);
  }

 private:
  NodeResult leaf(const TreeNode& node, const Matrix& Y) const {
    const IndexList I = iota_list(node.offset, node.size);
    Matrix A = eval_block(nodes_, I, I, spec_);
    A.diagonal().array() += cfg_.noise_variance;
    const std::vector<Matrix> dA = eval_block_derivative(nodes_, I, I, spec_);
    const LeafFactor lf(A);
    NodeResult r;
    r.x = lf.solve(Y);
    r.el = EnergyLogdet{Y.col(0).dot(r.x.col(0)), lf.log_abs_det(), lf.sign()};
    const Matrix Ainv = lf.solve(Matrix::Identity(node.size, node.size));
    r.dpi.resize(np_);
    r.dlambda.resize(np_);
    for (Index p = 0; p < np_; ++p) {
      r.adx.push_back(dA[static_cast<std::size_t>(p)] * r.x);
      r.dpi[p] = -r.x.col(0).dot(r.adx.back().col(0));
      r.dlambda[p] = Ainv.cwiseProduct(dA[static_cast<std::size_t>(p)].transpose()).sum();
    }
    return r;
  }

  NodeResult internal(const TreeNode& node, const Matrix& Y) {
    const TreeNode& a = tree_.nodes[static_cast<std::size_t>(node.first)];
    const TreeNode& b = tree_.nodes[static_cast<std::size_t>(node.second)];
    const IndexList I1 = iota_list(a.offset, a.size), I2 = iota_list(b.offset, b.size);
    Rng rng = block_stream(cfg_.seed, static_cast<std::uint64_t>(node.level), static_cast<std::uint64_t>(node.ordinal));
    const FactorWithDerivative fd = rsvd_id_d(nodes_, I1, I2, spec_, cfg_.k, rng, cfg_.lowrank_options());
    const BlockFactor f = BlockFactor::from(fd.value);
    const Index c = Y.cols(), k = f.rank();
    const Matrix Y1 = Y.topRows(a.size), Y2 = Y.bottomRows(b.size);

    const NodeResult r1 = run(node.first, hstack(Y1, f.left));
    const NodeResult r2 = run(node.second, hstack(Y2, f.right));
    const SMWIngredients ing1 = slice(r1.x, c, f.left), ing2 = slice(r2.x, c, f.right);
    const SMWCombined comb = smw_combine(ing1, ing2, f);

    NodeResult r;
    r.x = comb.x;
    const Vector y1 = Y1.col(0), y2 = Y2.col(0);
    r.el = energy_logdet_combine(r1.el, r2.el, ing1, ing2, y1, y2, comb);
    r.dpi.resize(np_);
    r.dlambda.resize(np_);

    std::optional<TTerms> tterms;
    for (Index p = 0; p < np_; ++p) {
      const auto ps = static_cast<std::size_t>(p);
      const Matrix adq1 = r1.adx[ps].rightCols(k), adq2 = r2.adx[ps].rightCols(k);
      const BlockFactor df = BlockFactor::from(fd.deriv_value[ps]);
      r.adx.push_back(apply_dA(ing1, ing2, r1.adx[ps].leftCols(c), adq1, r2.adx[ps].leftCols(c), adq2, df, comb));

      std::optional<FactorDerivative> sd;
      if (mode_ == GradientMode::svd_derivative && k > 0) {
        try {
          sd = svd_derivative(fd.value, fd.deriv_value[ps]);
        } catch (const DegenerateSpectrum&) {
          ++fallbacks;
        }
      }
      if (sd) {
        if (!tterms) tterms = make_tterms(ing1, ing2, y1, y2, assemble_correction(f, ing1.q_lr, ing2.q_lr));
        GradientInputs in;
        in.ing1 = &ing1;
        in.ing2 = &ing2;
        in.adq1 = &adq1;
        in.adq2 = &adq2;
        in.sigma = fd.value.sigma;
        in.dfactor = *sd;
        in.gamma_l = f.left;
        in.gamma_r = f.right;
        const auto [dpi, dlam] = gradient_terms(*tterms, in);
        r.dpi[p] = r1.dpi[p] + r2.dpi[p] + dpi;
        r.dlambda[p] = r1.dlambda[p] + r2.dlambda[p] + dlam;
      } else {
        r.dpi[p] = -r.x.col(0).dot(r.adx.back().col(0));
        r.dlambda[p] = r1.dlambda[p] + r2.dlambda[p] +
                       logdet_gradient_product(ing1, ing2, adq1, adq2, f, df, comb);
      }
    }
    return r;
  }

  const NodeSet& nodes_;
  const PartitionTree& tree_;
  const KernelSpec& spec_;
  const SolveConfig& cfg_;
  GradientMode mode_;
  Index np_;
};

}  // namespace

LikelihoodOutput lkl_eval(const NodeSet& nodes, const Vector& y, const KernelSpec& spec, const SolveConfig& cfg,
                          GradientMode mode) {
  cfg.validate();
  spec.validate(nodes.dim());
  if (y.size() != nodes.size()) throw InvalidArgument("target length differs from node count");
  const PartitionTree tree = build_tree(nodes, cfg.eta, spec);
  const NodeSet permuted = nodes.select(tree.perm);
  Matrix yp(y.size(), 1);
  for (Index i = 0; i < y.size(); ++i) yp(i, 0) = y[tree.perm[static_cast<std::size_t>(i)]];
  LikelihoodRecursion rec(permuted, tree, spec, cfg, mode);
  const NodeResult r = rec.run(0, yp);

  LikelihoodOutput out;
  out.pi = r.el.pi;
  out.lambda = r.el.lambda;
  out.det_sign = r.el.sign;
  out.d_pi = r.dpi;
  out.d_lambda = r.dlambda;
  out.fallback_blocks = rec.fallbacks;
  auto unpermute = [&](const Matrix& m) {
    Matrix o(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) o.row(tree.perm[static_cast<std::size_t>(i)]) = m.row(i);
    return o;
  };
  out.x = unpermute(r.x);
  for (const Matrix& m : r.adx) out.adx.push_back(unpermute(m));
  if (out.det_sign < 0) throw NumericError("hierarchical approximation has a negative determinant");
  return out;
}

Objective neg_log_likelihood(const NodeSet& nodes, const Vector& y, const KernelSpec& spec, const SolveConfig& cfg,
                             GradientMode mode) {
  const LikelihoodOutput l = lkl_eval(nodes, y, spec, cfg, mode);
  Objective o;
  o.value = 0.5 * l.pi + 0.5 * l.lambda + 0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi);
  o.grad = 0.5 * (l.d_pi + l.d_lambda);
  return o;
}

}  // namespace hmatgp
