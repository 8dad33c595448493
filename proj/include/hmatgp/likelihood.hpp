#pragma once

#include "hmatgp/hsolve.hpp"

namespace hmatgp {

/// How the off-diagonal contribution to the gradient is formed.
///  factor_product: through the factored derivative block (consistent with apply_dA);
///  svd_derivative: through perturbed singular factors, falling back to factor_product
///  on blocks whose spectrum is degenerate.
enum class GradientMode { factor_product, svd_derivative };

struct LikelihoodOutput {
  double pi = 0.0;      ///< y^T (A + s^2 I)^{-1} y
  double lambda = 0.0;  ///< log det (A + s^2 I)
  Vector d_pi;
  Vector d_lambda;
  Matrix x;
  std::vector<Matrix> adx;  ///< (dA/d ell_p) x, one per lengthscale
  int det_sign = 1;
  Index fallback_blocks = 0;
};

/// Scalar pieces of the energy correction at one level.
struct TTerms {
  double t1 = 0.0;
  Matrix t21;  ///< 1 x 2k
  Matrix t23;  ///< 2k x 1
  Eigen::PartialPivLU<Matrix> t22;  ///< factorization of C_smw
};

TTerms make_tterms(const SMWIngredients& ing1, const SMWIngredients& ing2, const Vector& y1, const Vector& y2,
                   const SMWCorrection& corr);

struct EnergyLogdet {
  double pi = 0.0;
  double lambda = 0.0;
  int sign = 1;
};

/// Pi = Pi1 + Pi2 - T21 C_smw^{-1} T23,  Lambda = Lambda1 + Lambda2 + log|det C| + log|det C_smw|.
EnergyLogdet energy_logdet_combine(const EnergyLogdet& part1, const EnergyLogdet& part2,
                                   const SMWIngredients& ing1, const SMWIngredients& ing2,
                                   const Vector& y1, const Vector& y2, const SMWCombined& combined);

/// Inputs to the per-level gradient correction for a single lengthscale.
struct GradientInputs {
  const SMWIngredients* ing1 = nullptr;
  const SMWIngredients* ing2 = nullptr;
  const Matrix* adq1 = nullptr;  ///< dA11 q_l1
  const Matrix* adq2 = nullptr;  ///< dA22 q_l2
  Vector sigma;                  ///< Gamma_m diagonal
  FactorDerivative dfactor;      ///< (dGamma_l, dGamma_m, dGamma_r)
  Matrix gamma_l;
  Matrix gamma_r;
};

/// Level contributions (dPi - dPi1 - dPi2, dLambda - dLambda1 - dLambda2) from perturbed factors.
std::pair<double, double> gradient_terms(const TTerms& t, const GradientInputs& in);

/// Level contribution to dLambda from the factored derivative block D:
/// -Tr(C_smw^{-1} [[q_l2^T D^T q_l1, q_l2^T Adq_l2], [q_l1^T Adq_l1, q_l1^T D q_l2]]).
double logdet_gradient_product(const SMWIngredients& ing1, const SMWIngredients& ing2, const Matrix& adq1,
                               const Matrix& adq2, const BlockFactor& factor, const BlockFactor& dfactor,
                               const SMWCombined& combined);

/// Stacked (dA) x from child products and the derivative off-diagonal factor.
Matrix apply_dA(const SMWIngredients& ing1, const SMWIngredients& ing2, const Matrix& adx_d1,
                const Matrix& adq1, const Matrix& adx_d2, const Matrix& adq2, const BlockFactor& dfactor,
                const SMWCombined& combined);

LikelihoodOutput lkl_eval(const NodeSet& nodes, const Vector& y, const KernelSpec& spec, const SolveConfig& cfg,
                          GradientMode mode = GradientMode::factor_product);

struct Objective {
  double value = 0.0;
  Vector grad;
};

/// -log p(y | ell) and its gradient with respect to the lengthscales.
Objective neg_log_likelihood(const NodeSet& nodes, const Vector& y, const KernelSpec& spec, const SolveConfig& cfg,
                             GradientMode mode = GradientMode::factor_product);

}  // namespace hmatgp
