#include "hmatgp/hsolve.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace hmatgp;

namespace {

NodeSet random_nodes(Index n, unsigned seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix X(2, n);
  for (Index j = 0; j < n; ++j) X.col(j) << u(rng), u(rng);
  return NodeSet(X);
}

Matrix random_matrix(Index r, Index c, unsigned seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Matrix M(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) M(i, j) = g(rng);
  return M;
}

Matrix regularized(const NodeSet& nodes, const KernelSpec& spec, double s2) {
  const IndexList I = iota_list(0, nodes.size());
  Matrix A = eval_block(nodes, I, I, spec);
  A.diagonal().array() += s2;
  return A;
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

const KernelSpec se1 = KernelSpec::isotropic(KernelFamily::squared_exponential, 1.0);

SolveConfig config(Index eta, Index k, std::uint64_t seed = 0) {
  SolveConfig c;
  c.eta = eta;
  c.k = k;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("single leaf matches the dense solve") {
  const NodeSet nodes = random_nodes(80, 1);
  const Matrix Y = random_matrix(80, 3, 2);
  CHECK(rel(back_solve(nodes, Y, se1, config(100, 10)), dense_solve(nodes, Y, se1, 1e-3)) <= 1e-12);
}

TEST_CASE("full rank hierarchy is exact") {
  for (Index n : {200, 500, 1000}) {
    const NodeSet nodes = random_nodes(n, 3);
    const Matrix Y = random_matrix(n, 2, 4);
    CHECK(rel(back_solve(nodes, Y, se1, config(n / 4, n)), dense_solve(nodes, Y, se1, 1e-3)) <= 1e-8);
  }
}

TEST_CASE("full rank hierarchy at n = 2000") {
  const NodeSet nodes = random_nodes(2000, 5);
  const Matrix Y = random_matrix(2000, 1, 6);
  CHECK(rel(back_solve(nodes, Y, se1, config(105, 1000)), dense_solve(nodes, Y, se1, 1e-3)) <= 1e-8);
}

TEST_CASE("truncated rank error shrinks with k") {
  const NodeSet nodes = random_nodes(5000, 7);
  const Matrix Y = random_matrix(5000, 1, 8);
  const Matrix X = dense_solve(nodes, Y, se1, 1e-3);
  double prev = INFINITY;
  for (Index k : {5, 10, 20, 40}) {
    std::vector<double> errs;
    for (std::uint64_t s = 0; s < 5; ++s) errs.push_back(rel(back_solve(nodes, Y, se1, config(1050, k, s)), X));
    const double med = median_of(errs);
    CHECK(med <= prev);
    prev = med;
  }
  CHECK(prev <= 1e-2);
}

TEST_CASE("residual median is nonincreasing as k doubles") {
  const NodeSet nodes = random_nodes(2000, 9);
  const Matrix Y = random_matrix(2000, 1, 10);
  const Matrix A = regularized(nodes, se1, 1e-3);
  double prev = INFINITY;
  for (Index k : {5, 10, 20, 40}) {
    std::vector<double> res;
    for (std::uint64_t s = 0; s < 10; ++s) res.push_back((A * back_solve(nodes, Y, se1, config(105, k, s)) - Y).norm() / Y.norm());
    const double med = median_of(res);
    CHECK(med <= prev);
    prev = med;
  }
}

TEST_CASE("two-level combine with an exact factor") {
  const NodeSet nodes = random_nodes(200, 11);
  const IndexList I1 = iota_list(0, 100), I2 = iota_list(100, 100);
  const NodeSet n1 = nodes.select(I1), n2 = nodes.select(I2);
  const Matrix Y = random_matrix(200, 2, 12);
  const BlockFactor f = BlockFactor::from(truncated_svd(eval_block(nodes, I1, I2, se1), 100));
  const SolveConfig cfg = config(100, 100);
  SMWIngredients a = smw_ing(n1, f.left, Y.topRows(100), se1, cfg);
  SMWIngredients b = smw_ing(n2, f.right, Y.bottomRows(100), se1, cfg);
  const Matrix X = dense_solve(nodes, Y, se1, 1e-3);
  CHECK(rel(smw_combine(a, b, f).x, X) <= 1e-10);

  SUBCASE("swapping the projected right-hand sides breaks the answer") {
    std::swap(a.q_ry, b.q_ry);
    CHECK(rel(smw_combine(a, b, f).x, X) > 1e-3);
  }
  SUBCASE("zero coupling returns the block-diagonal solution") {
    BlockFactor z = f;
    z.middle.setZero();
    const Matrix x = smw_combine(a, b, z).x;
    CHECK((x.topRows(100) - a.x_d).norm() == 0.0);
    CHECK((x.bottomRows(100) - b.x_d).norm() == 0.0);
  }
}

TEST_CASE("leaf ingredients") {
  const NodeSet nodes = random_nodes(60, 13);
  const Matrix Y = random_matrix(60, 2, 14);
  const SolveConfig cfg = config(100, 10);
  const Matrix A = regularized(nodes, se1, 1e-3);
  SUBCASE("empty coupling basis") {
    const auto ing = smw_ing(nodes, Matrix(60, 0), Y, se1, cfg);
    CHECK(rel(ing.x_d, A.llt().solve(Y)) <= 1e-12);
    CHECK(ing.q_lr.size() == 0);
    CHECK(ing.q_ry.size() == 0);
  }
  SUBCASE("q_lr is the symmetric projected inverse") {
    const Matrix G = random_matrix(60, 5, 15);
    const auto ing = smw_ing(nodes, G, Y, se1, cfg);
    const Matrix oracle = G.transpose() * A.partialPivLu().solve(G);
    CHECK(rel(ing.q_lr, oracle) <= 1e-10);
    CHECK((ing.q_lr - ing.q_lr.transpose()).norm() <= 1e-10 * ing.q_lr.norm());
    CHECK(rel(ing.q_ry, G.transpose() * ing.x_d) <= 1e-12);
  }
}

TEST_CASE("right-hand-side columns solve independently") {
  const NodeSet nodes = random_nodes(1200, 16);
  const Matrix Y = random_matrix(1200, 3, 17);
  const SolveConfig cfg = config(105, 15, 42);
  const Matrix X = back_solve(nodes, Y, se1, cfg);
  for (Index j = 0; j < 3; ++j) CHECK(rel(X.col(j), back_solve(nodes, Y.col(j), se1, cfg)) <= 1e-10);
}

TEST_CASE("solve is linear for a shared seed") {
  const NodeSet nodes = random_nodes(1500, 18);
  const Matrix Y1 = random_matrix(1500, 1, 19), Y2 = random_matrix(1500, 1, 20);
  const SolveConfig cfg = config(105, 10, 7);
  const Matrix lhs = back_solve(nodes, 2.5 * Y1 - 0.75 * Y2, se1, cfg);
  const Matrix rhs = 2.5 * back_solve(nodes, Y1, se1, cfg) - 0.75 * back_solve(nodes, Y2, se1, cfg);
  CHECK(rel(lhs, rhs) <= 1e-10);
}

TEST_CASE("result does not depend on the input ordering at full rank") {
  const NodeSet nodes = random_nodes(600, 21);
  const Matrix Y = random_matrix(600, 1, 22);
  IndexList shuffle = iota_list(0, 600);
  std::shuffle(shuffle.begin(), shuffle.end(), Rng(23));
  Matrix Ys(600, 1);
  for (Index i = 0; i < 600; ++i) Ys(i, 0) = Y(shuffle[static_cast<std::size_t>(i)], 0);
  const Matrix X = back_solve(nodes, Y, se1, config(150, 600));
  const Matrix Xs = back_solve(nodes.select(shuffle), Ys, se1, config(150, 600));
  Matrix back(600, 1);
  for (Index i = 0; i < 600; ++i) back(shuffle[static_cast<std::size_t>(i)], 0) = Xs(i, 0);
  CHECK(rel(back, X) <= 1e-8);
}

TEST_CASE("any aggregation tree is exact at full rank") {
  const NodeSet nodes = random_nodes(500, 24);
  const Matrix Y = random_matrix(500, 1, 25);
  const Matrix X = dense_solve(nodes, Y, se1, 1e-3);
  const SolveConfig cfg = config(100, 500);
  CHECK(rel(back_solve_tree(nodes, build_tree_unpermuted(500, 100), Y, se1, cfg), X) <= 1e-8);
  CHECK(rel(back_solve_tree(nodes, build_tree_mis(nodes, 100, 0.6, 2, se1), Y, se1, cfg), X) <= 1e-8);
}

TEST_CASE("low-rank baselines plug into the solver") {
  const NodeSet nodes = random_nodes(400, 26);
  const Matrix Y = random_matrix(400, 1, 27);
  const Matrix X = dense_solve(nodes, Y, se1, 1e-3);
  for (auto m : {LowRankMethod::rsvd_id, LowRankMethod::nystrom_rand, LowRankMethod::nystrom_qr}) {
    SolveConfig cfg = config(100, 20);
    cfg.method = m;
    cfg.dense_budget = 0;
    const Matrix Xh = back_solve(nodes, Y, se1, cfg);
    CHECK(Xh.allFinite());
    CHECK(rel(Xh, X) < 1.0);
  }
}

TEST_CASE("dense solve oracles") {
  SUBCASE("vanishing lengthscale decouples the points") {
    const NodeSet nodes = random_nodes(50, 28);
    const Matrix Y = random_matrix(50, 2, 29);
    const KernelSpec tiny = KernelSpec::isotropic(KernelFamily::squared_exponential, 1e-6);
    CHECK(rel(dense_solve(nodes, Y, tiny, 1e-3), Y / (1.0 + 1e-3)) <= 1e-12);
  }
  SUBCASE("residual and an independent inversion") {
    const NodeSet nodes = random_nodes(500, 30);
    const Matrix Y = random_matrix(500, 2, 31);
    const KernelSpec s = KernelSpec::isotropic(KernelFamily::exponential, 0.3);
    const Matrix A = regularized(nodes, s, 1e-3);
    const Matrix X = dense_solve(nodes, Y, s, 1e-3);
    CHECK((A * X - Y).norm() / Y.norm() <= 1e-10);
    CHECK(rel(X, A.fullPivLu().inverse() * Y) <= 1e-10);
  }
  CHECK_THROWS_AS(dense_solve(random_nodes(20, 32), Matrix::Ones(20, 1), se1, 1e-3, 10), InvalidArgument);
}

TEST_CASE("configuration validation") {
  const NodeSet nodes = random_nodes(20, 33);
  CHECK_THROWS_AS(back_solve(nodes, Matrix::Ones(20, 1), se1, config(0, 5)), InvalidArgument);
  CHECK_THROWS_AS(back_solve(nodes, Matrix::Ones(19, 1), se1, config(5, 5)), InvalidArgument);
}
