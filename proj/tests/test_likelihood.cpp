#include "hmatgp/likelihood.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace hmatgp;

namespace {

NodeSet random_nodes(Index n, unsigned seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix X(2, n);
  for (Index j = 0; j < n; ++j) X.col(j) << u(rng), u(rng);
  return NodeSet(X);
}

Vector random_vector(Index n, unsigned seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

struct Dense {
  Matrix A;
  Eigen::LLT<Matrix> llt;
  double pi = 0, lambda = 0;
};

Dense dense_oracle(const NodeSet& nodes, const Vector& y, const KernelSpec& spec, double s2) {
  const IndexList I = iota_list(0, nodes.size());
  Dense d;
  d.A = eval_block(nodes, I, I, spec);
  d.A.diagonal().array() += s2;
  d.llt.compute(d.A);
  d.pi = y.dot(d.llt.solve(y));
  d.lambda = 2.0 * d.llt.matrixLLT().diagonal().array().log().sum();
  return d;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

SolveConfig config(Index eta, Index k, std::uint64_t seed = 0) {
  SolveConfig c;
  c.eta = eta;
  c.k = k;
  c.seed = seed;
  return c;
}

const KernelSpec se1 = KernelSpec::isotropic(KernelFamily::squared_exponential, 1.0);

}  // namespace

TEST_CASE("single leaf matches dense energy and log determinant") {
  const NodeSet nodes = random_nodes(90, 1);
  const Vector y = random_vector(90, 2);
  const auto out = lkl_eval(nodes, y, se1, config(100, 10));
  const Dense d = dense_oracle(nodes, y, se1, 1e-3);
  CHECK(rel(out.pi, d.pi) <= 1e-10);
  CHECK(rel(out.lambda, d.lambda) <= 1e-10);
}

TEST_CASE("full rank energy, log determinant and gradients are exact") {
  for (Index n : {200, 500, 1000}) {
    const NodeSet nodes = random_nodes(n, 3);
    const Vector y = random_vector(n, 4);
    const KernelSpec s = KernelSpec::isotropic(KernelFamily::squared_exponential, 0.7);
    const auto out = lkl_eval(nodes, y, s, config(n / 4, n));
    const Dense d = dense_oracle(nodes, y, s, 1e-3);
    CHECK(rel(out.pi, d.pi) <= 1e-8);
    CHECK(rel(out.lambda, d.lambda) <= 1e-8);
    CHECK(out.det_sign == 1);
    const IndexList I = iota_list(0, n);
    const Matrix dA = eval_block_derivative(nodes, I, I, s)[0];
    const Vector x = d.llt.solve(y);
    CHECK(rel(out.d_pi[0], -x.dot(dA * x)) <= 1e-8);
    CHECK(rel(out.d_lambda[0], d.llt.solve(dA).trace()) <= 1e-8);
    CHECK(rel(out.pi, y.dot(out.x.col(0))) <= 1e-10);
  }
}

TEST_CASE("two-point closed form") {
  Matrix X(1, 2);
  X << 0.0, 0.8;
  const NodeSet nodes(X);
  const Vector y{{0.3, -1.1}};
  const double s2 = 1e-3, a = std::exp(-0.5 * 0.64), d = 1.0 + s2;
  const double det = d * d - a * a;
  const double pi = (d * y[0] * y[0] - 2 * a * y[0] * y[1] + d * y[1] * y[1]) / det;
  const auto out = lkl_eval(nodes, y, se1, config(1, 1));
  CHECK(out.pi == doctest::Approx(pi).epsilon(1e-13));
  CHECK(out.lambda == doctest::Approx(std::log(det)).epsilon(1e-13));
}

TEST_CASE("log determinant reproduces the determinant on small instances") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const NodeSet nodes = random_nodes(50, 10 + seed);
    const Vector y = random_vector(50, 20 + seed);
    const KernelSpec s = KernelSpec::isotropic(KernelFamily::exponential, 0.4);
    const auto out = lkl_eval(nodes, y, s, config(12, 50));
    const IndexList I = iota_list(0, 50);
    Matrix A = eval_block(nodes, I, I, s);
    A.diagonal().array() += 1e-3;
    CHECK(rel(std::exp(out.lambda), A.determinant()) <= 1e-8);
  }
}

TEST_CASE("zero coupling combines by addition") {
  const NodeSet nodes = random_nodes(40, 30);
  const Vector y = random_vector(40, 31);
  const IndexList I1 = iota_list(0, 20), I2 = iota_list(20, 20);
  const NodeSet n1 = nodes.select(I1), n2 = nodes.select(I2);
  BlockFactor f = BlockFactor::from(truncated_svd(eval_block(nodes, I1, I2, se1), 5));
  f.middle.setZero();
  const SolveConfig cfg = config(50, 5);
  const auto a = smw_ing(n1, f.left, y.head(20), se1, cfg);
  const auto b = smw_ing(n2, f.right, y.tail(20), se1, cfg);
  const EnergyLogdet p1{1.5, 2.5, 1}, p2{0.25, -4.0, 1};
  const auto c = energy_logdet_combine(p1, p2, a, b, y.head(20), y.tail(20), smw_combine(a, b, f));
  CHECK(c.pi == doctest::Approx(1.75));
  CHECK(c.lambda == doctest::Approx(-1.5));
  CHECK(c.sign == 1);
}

TEST_CASE("level gradient terms vanish for zero derivatives") {
  const NodeSet nodes = random_nodes(40, 32);
  const Vector y = random_vector(40, 33);
  const IndexList I1 = iota_list(0, 20), I2 = iota_list(20, 20);
  const LowRankFactor lf = truncated_svd(eval_block(nodes, I1, I2, se1), 4);
  const BlockFactor f = BlockFactor::from(lf);
  const SolveConfig cfg = config(50, 4);
  const auto a = smw_ing(nodes.select(I1), f.left, y.head(20), se1, cfg);
  const auto b = smw_ing(nodes.select(I2), f.right, y.tail(20), se1, cfg);
  const TTerms t = make_tterms(a, b, y.head(20), y.tail(20), assemble_correction(f, a.q_lr, b.q_lr));
  const Matrix z1 = Matrix::Zero(20, 4), z2 = Matrix::Zero(20, 4);
  GradientInputs in;
  in.ing1 = &a;
  in.ing2 = &b;
  in.adq1 = &z1;
  in.adq2 = &z2;
  in.sigma = lf.sigma;
  in.dfactor = FactorDerivative{Matrix::Zero(20, 4), Vector::Zero(4), Matrix::Zero(20, 4)};
  in.gamma_l = lf.left;
  in.gamma_r = lf.right;
  const auto [dpi, dlambda] = gradient_terms(t, in);
  CHECK(dpi == 0.0);
  CHECK(dlambda == 0.0);
  const BlockFactor zero{Matrix::Zero(20, 4), Matrix::Zero(4, 4), Matrix::Zero(20, 4)};
  const auto comb = smw_combine(a, b, f);
  CHECK(logdet_gradient_product(a, b, z1, z2, f, zero, comb) == 0.0);
  const Matrix adx = apply_dA(a, b, Matrix::Zero(20, 1), z1, Matrix::Zero(20, 1), z2, zero, comb);
  CHECK(adx.norm() == 0.0);
}

TEST_CASE("derivative product matches the dense derivative on two leaves") {
  const NodeSet nodes = random_nodes(200, 34);
  const Vector y = random_vector(200, 35);
  const KernelSpec s = KernelSpec::isotropic(KernelFamily::squared_exponential, 0.4);
  const auto out = lkl_eval(nodes, y, s, config(100, 100));
  const IndexList I = iota_list(0, 200);
  const Matrix dA = eval_block_derivative(nodes, I, I, s)[0];
  CHECK((out.adx[0] - dA * out.x).norm() <= 1e-8 * (dA * out.x).norm());
  CHECK(out.adx[0].cols() == out.x.cols());
}

TEST_CASE("finite differences at full and truncated rank") {
  const NodeSet nodes = random_nodes(1000, 36);
  const Vector y = random_vector(1000, 37);
  const double ell = 0.6, h = 1e-5 * ell;
  for (Index k : {1000, 40}) {
    const SolveConfig cfg = config(105, k, 3);
    const auto mid = lkl_eval(nodes, y, KernelSpec::isotropic(KernelFamily::squared_exponential, ell), cfg);
    const auto up = lkl_eval(nodes, y, KernelSpec::isotropic(KernelFamily::squared_exponential, ell + h), cfg);
    const auto dn = lkl_eval(nodes, y, KernelSpec::isotropic(KernelFamily::squared_exponential, ell - h), cfg);
    const double tol = k == 1000 ? 1e-4 : 5e-2;
    CHECK(rel(mid.d_pi[0], (up.pi - dn.pi) / (2 * h)) <= tol);
    CHECK(rel(mid.d_lambda[0], (up.lambda - dn.lambda) / (2 * h)) <= tol);
  }
}

TEST_CASE("literal factor-derivative mode agrees where the spectrum is simple") {
  const NodeSet nodes = random_nodes(120, 38);
  const Vector y = random_vector(120, 39);
  const KernelSpec s = KernelSpec::isotropic(KernelFamily::exponential, 0.3);
  const SolveConfig cfg = config(30, 120);
  const auto a = lkl_eval(nodes, y, s, cfg, GradientMode::factor_product);
  const auto b = lkl_eval(nodes, y, s, cfg, GradientMode::svd_derivative);
  CHECK(b.fallback_blocks == 0);
  CHECK(rel(b.d_pi[0], a.d_pi[0]) <= 1e-6);
  CHECK(rel(b.d_lambda[0], a.d_lambda[0]) <= 1e-6);
  const auto se = lkl_eval(nodes, y, se1, cfg, GradientMode::svd_derivative);
  CHECK(se.fallback_blocks > 0);
  CHECK(std::isfinite(se.d_lambda[0]));
}

TEST_CASE("ARD gradients have one entry per dimension") {
  const NodeSet nodes = random_nodes(300, 40);
  const Vector y = random_vector(300, 41);
  const KernelSpec s = KernelSpec::ard(Vector{{0.5, 0.9}});
  const auto out = lkl_eval(nodes, y, s, config(75, 300));
  REQUIRE(out.d_pi.size() == 2);
  const Dense d = dense_oracle(nodes, y, s, 1e-3);
  const IndexList I = iota_list(0, 300);
  const auto dA = eval_block_derivative(nodes, I, I, s);
  for (std::size_t p = 0; p < 2; ++p)
    CHECK(rel(out.d_lambda[static_cast<Index>(p)], d.llt.solve(dA[p]).trace()) <= 1e-8);
}

TEST_CASE("log determinant is invariant under shuffling at full rank") {
  const NodeSet nodes = random_nodes(400, 42);
  const Vector y = random_vector(400, 43);
  IndexList sh = iota_list(0, 400);
  std::shuffle(sh.begin(), sh.end(), Rng(44));
  Vector ys(400);
  for (Index i = 0; i < 400; ++i) ys[i] = y[sh[static_cast<std::size_t>(i)]];
  const auto a = lkl_eval(nodes, y, se1, config(100, 400));
  const auto b = lkl_eval(nodes.select(sh), ys, se1, config(100, 400));
  CHECK(rel(b.lambda, a.lambda) <= 1e-8);
  CHECK(rel(b.pi, a.pi) <= 1e-8);
}

TEST_CASE("truncated rank accuracy at n = 5000") {
  const NodeSet nodes = random_nodes(5000, 45);
  const Vector y = random_vector(5000, 46);
  const SolveConfig cfg = config(105, 40, 1);
  const auto out = lkl_eval(nodes, y, se1, cfg);
  const Dense d = dense_oracle(nodes, y, se1, 1e-3);
  const IndexList I = iota_list(0, 5000);
  const Vector x = d.llt.solve(y);
  const double dpi = -x.dot(eval_block_derivative(nodes, I, I, se1)[0] * x);
  CHECK(rel(out.pi, d.pi) <= 1e-2);
  CHECK(rel(out.lambda, d.lambda) <= 1e-2);
  CHECK(rel(out.d_pi[0], dpi) <= 1e-2);
  // The exponential kernel loses positivity of the compressed matrix at this rank, so its
  // accuracy is compared through the energy of the hierarchical solve.
  const KernelSpec ex = KernelSpec::isotropic(KernelFamily::exponential, 1.0);
  const Dense de = dense_oracle(nodes, y, ex, 1e-3);
  const double pi_exp = y.dot(back_solve(nodes, y, ex, cfg).col(0));
  const double pi_se = y.dot(back_solve(nodes, y, se1, cfg).col(0));
  CHECK(rel(pi_exp, de.pi) > rel(pi_se, d.pi));
}

TEST_CASE("negative log likelihood") {
  SUBCASE("scalar case") {
    const NodeSet one(Matrix::Constant(1, 1, 0.2));
    const double c = 1.7, s2 = 1e-3;
    const Objective o = neg_log_likelihood(one, Vector::Constant(1, c), se1, config(5, 1));
    CHECK(o.value == doctest::Approx(0.5 * c * c / (1 + s2) + 0.5 * std::log(1 + s2) + 0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-14));
    CHECK(o.grad[0] == 0.0);
  }
  SUBCASE("dense value at full rank") {
    const NodeSet nodes = random_nodes(500, 47);
    const Vector y = random_vector(500, 48);
    const Objective o = neg_log_likelihood(nodes, y, se1, config(125, 500));
    const Dense d = dense_oracle(nodes, y, se1, 1e-3);
    CHECK(rel(o.value, 0.5 * d.pi + 0.5 * d.lambda + 250.0 * std::log(2 * std::numbers::pi)) <= 1e-8);
  }
  SUBCASE("gradient matches finite differences") {
    const NodeSet nodes = random_nodes(400, 49);
    const Vector y = random_vector(400, 50);
    const double ell = 0.5, h = 1e-5 * ell;
    const SolveConfig cfg = config(100, 400);
    auto at = [&](double l) {
      return neg_log_likelihood(nodes, y, KernelSpec::isotropic(KernelFamily::squared_exponential, l), cfg);
    };
    CHECK(rel(at(ell).grad[0], (at(ell + h).value - at(ell - h).value) / (2 * h)) <= 1e-4);
  }
}

TEST_CASE("input validation") {
  const NodeSet nodes = random_nodes(30, 51);
  CHECK_THROWS_AS(lkl_eval(nodes, Vector::Ones(29), se1, config(10, 5)), InvalidArgument);
}
