#include "hmatgp/lowrank.hpp"

#include <algorithm>
#include <cmath>

namespace hmatgp {

LowRankFactor LowRankFactor::zero(Index n1, Index n2, Index k) {
  LowRankFactor f;
  f.left = Matrix::Identity(n1, k);
  f.sigma = Vector::Zero(k);
  f.right = Matrix::Identity(n2, k);
  return f;
}

BlockFactor BlockFactor::from(const LowRankFactor& f) {
  return BlockFactor{f.left, f.sigma.asDiagonal().toDenseMatrix(), f.right};
}

Index subsample_count(Index m, Index k, Index n_max) {
  if (m <= 0 || k <= 0 || n_max <= 0) throw InvalidArgument("subsample_count needs positive inputs");
  return std::min(std::max(2 * k, n_max / m), 10 * k);
}

LowRankFactor truncated_svd(const Matrix& A, Index k) {
  k = std::min({k, A.rows(), A.cols()});
  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  LowRankFactor f{svd.matrixU().leftCols(k), svd.singularValues().head(k), svd.matrixV().leftCols(k)};
  if (f.left.allFinite() && f.right.allFinite() && f.sigma.allFinite()) return f;
  // Divide-and-conquer occasionally breaks down on clustered spectra; Jacobi does not.
  Eigen::JacobiSVD<Matrix> jac(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return LowRankFactor{jac.matrixU().leftCols(k), jac.singularValues().head(k), jac.matrixV().leftCols(k)};
}

namespace {

Matrix thin_q(const Matrix& Y) {
  Eigen::HouseholderQR<Matrix> qr(Y);
  return qr.householderQ() * Matrix::Identity(Y.rows(), Y.cols());
}

struct Sketch {
  IndexList columns;
  Matrix omega;
};

Sketch draw_sketch(IndexSpan I2, Index n1, Index width, Index k, Rng& rng, const LowRankOptions& opts) {
  Sketch s;
  const Index n2 = static_cast<Index>(I2.size());
  const Index n_inn = opts.full_columns ? n2 : subsample_count(n1, k, opts.n_max);
  if (n_inn >= n2) {
    s.columns.assign(I2.begin(), I2.end());
  } else {
    // Partial Fisher-Yates: uniform without replacement.
    IndexList pool(I2.begin(), I2.end());
    for (Index i = 0; i < n_inn; ++i) {
      std::uniform_int_distribution<Index> pick(i, n2 - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    s.columns.assign(pool.begin(), pool.begin() + n_inn);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  s.omega.resize(static_cast<Index>(s.columns.size()), width);
  for (Index j = 0; j < width; ++j)
    for (Index i = 0; i < s.omega.rows(); ++i) s.omega(i, j) = normal(rng);
  return s;
}

Matrix range_from_sample(const Matrix& sample, const Matrix& omega) {
  const Matrix Y = sample * omega;
  if (Y.norm() == 0.0) throw RankDeficiency("range sample is identically zero");
  return thin_q(Y);
}

// Steps 4-9: ID of Q, skeleton rows, QR of their transpose, small SVD.
template <class RowEval>
LowRankFactor factor_from_range(const Matrix& Q, IndexSpan I1, const RowEval& rows_of) {
  const Index k = Q.cols();
  const InterpolativeDecomposition id = interpolative_decomposition(Q);
  IndexList skel(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) skel[static_cast<std::size_t>(j)] = I1[static_cast<std::size_t>(id.skeleton[static_cast<std::size_t>(j)])];
  const Matrix Askel = rows_of(skel);  // k x n2
  Eigen::HouseholderQR<Matrix> qr(Askel.transpose());
  const Matrix W = qr.householderQ() * Matrix::Identity(Askel.cols(), k);
  const Matrix R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const Matrix Z = id.X * R.transpose();
  Eigen::JacobiSVD<Matrix> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return LowRankFactor{svd.matrixU(), svd.singularValues(), W * svd.matrixV()};
}

bool use_dense(Index n1, Index n2, Index k, const LowRankOptions& opts) {
  return n1 * n2 <= opts.dense_budget || k >= std::min(n1, n2);
}

}  // namespace

Matrix range_finder(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec,
                    Index k, Rng& rng, const LowRankOptions& opts) {
  const Index n1 = static_cast<Index>(I1.size());
  if (k < 1 || k > std::min<Index>(n1, static_cast<Index>(I2.size())))
    throw InvalidArgument("range_finder rank out of range");
  const Index width = std::min(k + opts.oversampling, n1);
  const Sketch s = draw_sketch(I2, n1, width, k, rng, opts);
  return range_from_sample(eval_block(nodes, I1, s.columns, spec), s.omega);
}

InterpolativeDecomposition interpolative_decomposition(const Matrix& Q) {
  const Index m = Q.rows(), k = Q.cols();
  if (k > m || k < 1) throw InvalidArgument("interpolative_decomposition needs 1 <= k <= m");
  Eigen::ColPivHouseholderQR<Matrix> qr(Q.transpose());
  const Matrix R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const double r00 = std::abs(R(0, 0));
  if (r00 == 0.0 || std::abs(R(k - 1, k - 1)) <= 1e-12 * r00)
    throw RankDeficiency("interpolative_decomposition: Q is numerically rank deficient");
  const Matrix T = R.leftCols(k).triangularView<Eigen::Upper>().solve(R.rightCols(m - k));
  const auto& perm = qr.colsPermutation().indices();
  InterpolativeDecomposition out;
  out.X = Matrix::Zero(m, k);
  out.skeleton.resize(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) {
    out.skeleton[static_cast<std::size_t>(j)] = perm[j];
    out.X(perm[j], j) = 1.0;
  }
  for (Index j = k; j < m; ++j) out.X.row(perm[j]) = T.col(j - k).transpose();
  return out;
}

LowRankFactor rsvd_id(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec,
                      Index k, Rng& rng, const LowRankOptions& opts) {
  const Index n1 = static_cast<Index>(I1.size()), n2 = static_cast<Index>(I2.size());
  const Index ke = std::min({k, n1, n2});
  if (ke <= 0) return LowRankFactor::zero(n1, n2, 0);
  if (use_dense(n1, n2, ke, opts)) return truncated_svd(eval_block(nodes, I1, I2, spec), ke);
  const Sketch s = draw_sketch(I2, n1, ke, ke, rng, opts);
  const Matrix Q = range_from_sample(eval_block(nodes, I1, s.columns, spec), s.omega);
  return factor_from_range(Q, I1, [&](const IndexList& rows) { return eval_block(nodes, rows, I2, spec); });
}

FactorWithDerivative rsvd_id_d(const NodeSet& nodes, IndexSpan I1, IndexSpan I2,
                               const KernelSpec& spec, Index k, Rng& rng,
                               const LowRankOptions& opts) {
  const Index n1 = static_cast<Index>(I1.size()), n2 = static_cast<Index>(I2.size());
  const Index ke = std::min({k, n1, n2});
  const auto np = static_cast<std::size_t>(spec.parameter_count(nodes.dim()));
  FactorWithDerivative out;
  out.factor_derivs.resize(np);
  if (ke <= 0) {
    out.value = LowRankFactor::zero(n1, n2, 0);
    out.deriv_value.assign(np, out.value);
    return out;
  }
  if (use_dense(n1, n2, ke, opts)) {
    out.value = truncated_svd(eval_block(nodes, I1, I2, spec), ke);
    for (const Matrix& dA : eval_block_derivative(nodes, I1, I2, spec))
      out.deriv_value.push_back(truncated_svd(dA, ke));
    return out;
  }
  const Sketch s = draw_sketch(I2, n1, ke, ke, rng, opts);
  const Matrix Q = range_from_sample(eval_block(nodes, I1, s.columns, spec), s.omega);
  out.value = factor_from_range(Q, I1, [&](const IndexList& rows) { return eval_block(nodes, rows, I2, spec); });
  const std::vector<Matrix> dsample = eval_block_derivative(nodes, I1, s.columns, spec);
  for (std::size_t p = 0; p < np; ++p) {
    const Matrix Y = dsample[p] * s.omega;
    if (Y.norm() == 0.0) {
      out.deriv_value.push_back(LowRankFactor::zero(n1, n2, ke));
      continue;
    }
    out.deriv_value.push_back(factor_from_range(thin_q(Y), I1, [&](const IndexList& rows) {
      return eval_block_derivative(nodes, rows, I2, spec)[p];
    }));
  }
  return out;
}

FactorDerivative svd_derivative(const LowRankFactor& a, const LowRankFactor& da, double gap_tolerance) {
  const Index k = a.rank();
  const Vector& s = a.sigma;
  if (k == 0) return FactorDerivative{Matrix::Zero(a.left.rows(), 0), Vector(0), Matrix::Zero(a.right.rows(), 0)};
  const double tol = gap_tolerance * s[0];
  if (!(s[0] > 0.0) || s[k - 1] < tol) throw DegenerateSpectrum("svd_derivative: vanishing singular value");
  for (Index i = 0; i + 1 < k; ++i)
    if (s[i] - s[i + 1] < tol) throw DegenerateSpectrum("svd_derivative: near-degenerate singular values");

  const Matrix UtUd = a.left.transpose() * da.left;      // k x r
  const Matrix VdtV = da.right.transpose() * a.right;    // r x k
  const Matrix P = UtUd * da.sigma.asDiagonal() * VdtV;  // U^T dA V
  Matrix F = Matrix::Zero(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j)
      if (i != j) F(i, j) = 1.0 / (s[j] * s[j] - s[i] * s[i]);
  const auto S = s.asDiagonal();
  const Vector sinv = s.cwiseInverse();

  FactorDerivative d;
  d.d_sigma = P.diagonal();
  // (I - U U^T) dA V  and  (I - V V^T) dA^T U, kept in factored form.
  const Matrix dAV = da.left * (da.sigma.asDiagonal() * VdtV);
  const Matrix dAtU = da.right * (da.sigma.asDiagonal() * UtUd.transpose());
  const Matrix omega_u = F.cwiseProduct(P * S + S * P.transpose());
  const Matrix omega_v = F.cwiseProduct(S * P + P.transpose() * S);
  d.d_left = a.left * omega_u + (dAV - a.left * P) * sinv.asDiagonal();
  d.d_right = a.right * omega_v + (dAtU - a.right * P.transpose()) * sinv.asDiagonal();
  return d;
}

BlockFactor nystrom_baseline(const NodeSet& nodes, IndexSpan I1, IndexSpan I2,
                             const KernelSpec& spec, Index k, NystromMode mode, Rng& rng,
                             const LowRankOptions& opts) {
  const Index n1 = static_cast<Index>(I1.size()), n2 = static_cast<Index>(I2.size());
  const Matrix xl = nodes.select(I1).coords();
  const Matrix xr = nodes.select(I2).coords();
  Matrix xm;
  if (mode == NystromMode::rand) {
    const Vector lo = nodes.coords().rowwise().minCoeff();
    const Vector hi = nodes.coords().rowwise().maxCoeff();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    xm.resize(nodes.dim(), k);
    for (Index j = 0; j < k; ++j)
      for (Index p = 0; p < nodes.dim(); ++p) xm(p, j) = lo[p] + (hi[p] - lo[p]) * unit(rng);
  } else {
    const Index ke = std::min({k, n1, n2});
    const Matrix Q = ke >= n1 ? Matrix(Matrix::Identity(n1, n1))
                              : range_finder(nodes, I1, I2, spec, ke, rng, opts);
    const InterpolativeDecomposition id = interpolative_decomposition(Q);
    xm.resize(nodes.dim(), ke);
    for (Index j = 0; j < ke; ++j) xm.col(j) = xl.col(id.skeleton[static_cast<std::size_t>(j)]);
  }
  Matrix Kmm = eval_cross(xm, xm, spec);
  Kmm.diagonal().array() += 1e-10;
  BlockFactor f;
  f.left = eval_cross(xl, xm, spec);
  f.right = eval_cross(xr, xm, spec);
  f.middle = Kmm.ldlt().solve(Matrix::Identity(Kmm.rows(), Kmm.cols()));
  return f;
}

}  // namespace hmatgp
