#include "hmatgp/partition.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace hmatgp;

namespace {

NodeSet line_nodes(std::vector<double> xs) {
  Matrix X(1, static_cast<Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) X(0, static_cast<Index>(i)) = xs[i];
  return NodeSet(X);
}

NodeSet random_nodes(Index n, unsigned seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix X(2, n);
  for (Index j = 0; j < n; ++j) X.col(j) << u(rng), u(rng);
  return NodeSet(X);
}

IndexList sorted(IndexList v) {
  std::sort(v.begin(), v.end());
  return v;
}

const KernelSpec se1 = KernelSpec::isotropic(KernelFamily::squared_exponential, 1.0);

}  // namespace

TEST_CASE("size rule values") {
  CHECK(split_size(1000000) == 100000);
  CHECK(split_size(5000) == 1000);
  CHECK(split_size(2) == 1);
  CHECK(split_size(10) == 1);
  CHECK(split_size(11) == 10);
  CHECK(split_size(100) == 10);
  CHECK(split_size(101) == 100);
  CHECK(split_size(1500) == 1000);
  CHECK_THROWS_AS(split_size(1), InvalidArgument);
}

TEST_CASE("size rule is monotone and strictly below m") {
  Index prev = 0;
  for (Index m = 2; m <= 200000; ++m) {
    const Index s = split_size(m);
    CHECK(s < m);
    CHECK(s >= prev);
    prev = s;
  }
}

TEST_CASE("permute on two nodes keeps the head first") {
  const NodeSet nodes = line_nodes({0.0, 3.0});
  const auto [I1, I2] = permute(nodes, IndexList{1, 0}, 1, se1);
  CHECK(I1 == IndexList{1});
  CHECK(I2 == IndexList{0});
}

TEST_CASE("permute groups the nearer node with the head") {
  const NodeSet nodes = line_nodes({0.0, 0.1, 5.0});
  const auto [I1, I2] = permute(nodes, IndexList{0, 1, 2}, 2, se1);
  CHECK(I1 == IndexList{0, 1});
  CHECK(I2 == IndexList{2});
}

TEST_CASE("permute is stable on ties") {
  const NodeSet nodes = line_nodes({0.0, 1.0, 1.0, 1.0, 0.5});
  const auto [I1, I2] = permute(nodes, IndexList{0, 1, 2, 3, 4}, 3, se1);
  CHECK(I1 == IndexList{0, 4, 1});
  CHECK(I2 == IndexList{2, 3});
}

TEST_CASE("permute and perm_generator are bijections") {
  const NodeSet nodes = random_nodes(700, 1);
  IndexList I = iota_list(0, 700);
  std::shuffle(I.begin(), I.end(), Rng(2));
  for (Index s : {1, 10, 100, 699}) {
    auto [I1, I2] = permute(nodes, I, s, se1);
    CHECK(static_cast<Index>(I1.size()) == s);
    CHECK(I1.front() == I.front());
    I1.insert(I1.end(), I2.begin(), I2.end());
    CHECK(sorted(I1) == sorted(I));
  }
  for (Index eta : {1, 7, 50, 105, 700, 1000}) CHECK(sorted(perm_generator(nodes, I, eta, se1)) == sorted(I));
  const IndexList small(I.begin(), I.begin() + 40);
  CHECK(perm_generator(nodes, small, 40, se1) == small);
}

TEST_CASE("tree shape follows the size rule") {
  const NodeSet nodes = random_nodes(5000, 3);
  SUBCASE("eta 100 gives 100-point leaves") {
    const PartitionTree t = build_tree(nodes, 100, se1);
    for (int leaf : t.leaves()) CHECK(t.nodes[static_cast<std::size_t>(leaf)].size == 100);
    CHECK(t.leaves().size() == 50);
    CHECK(t.nodes[static_cast<std::size_t>(t.nodes[0].first)].size == 1000);
  }
  SUBCASE("eta 1050 gives 1000-point leaves") {
    const PartitionTree t = build_tree(nodes, 1050, se1);
    CHECK(t.leaves().size() == 5);
    for (int leaf : t.leaves()) CHECK(t.nodes[static_cast<std::size_t>(leaf)].size == 1000);
  }
  SUBCASE("internal nodes split as (nu, m - nu) and leaves fit") {
    for (Index eta : {30, 105, 333}) {
      const PartitionTree t = build_tree(nodes, eta, se1);
      CHECK(sorted(t.perm) == iota_list(0, 5000));
      for (const TreeNode& node : t.nodes) {
        if (node.is_leaf()) {
          CHECK(node.size <= eta);
          continue;
        }
        const TreeNode& a = t.nodes[static_cast<std::size_t>(node.first)];
        const TreeNode& b = t.nodes[static_cast<std::size_t>(node.second)];
        CHECK(a.size == split_size(node.size));
        CHECK(b.size == node.size - a.size);
        CHECK(a.offset == node.offset);
        CHECK(b.offset == node.offset + a.size);
        CHECK(a.level == node.level + 1);
      }
    }
  }
  SUBCASE("matches the standalone permutation") {
    CHECK(build_tree(nodes, 105, se1).perm == perm_generator(nodes, iota_list(0, 5000), 105, se1));
  }
}

TEST_CASE("small set is a single leaf") {
  const NodeSet nodes = random_nodes(50, 4);
  const PartitionTree t = build_tree(nodes, 50, se1);
  CHECK(t.nodes.size() == 1);
  CHECK(t.nodes[0].is_leaf());
  CHECK(t.depth() == 0);
}

TEST_CASE("unpermuted tree keeps identity order") {
  const PartitionTree t = build_tree_unpermuted(1234, 100);
  CHECK(t.perm == iota_list(0, 1234));
}

TEST_CASE("breadth-first ordinals are consecutive per level") {
  const PartitionTree t = build_tree(random_nodes(900, 5), 60, se1);
  std::vector<Index> next(static_cast<std::size_t>(t.depth() + 1), 0);
  for (const TreeNode& node : t.nodes) CHECK(node.ordinal == next[static_cast<std::size_t>(node.level)]++);
}

TEST_CASE("MIS hand trace on five points") {
  const NodeSet nodes = line_nodes({0.0, 0.1, 0.5, 0.55, 1.0});
  const KernelSpec s = KernelSpec::isotropic(KernelFamily::squared_exponential, 0.3);
  const IndexList I = iota_list(0, 5);
  // k >= 0.5 iff distance <= 0.353; k >= 0.4 iff distance <= 0.406.
  auto g = mis_aggregate(nodes, I, 0.5, 1, s);
  CHECK(g.roots == IndexList{0, 2, 4});
  CHECK(g.groups == std::vector<IndexList>{{0, 1}, {2, 3}, {4}});
  g = mis_aggregate(nodes, I, 0.4, 1, s);
  CHECK(g.groups == std::vector<IndexList>{{0, 1}, {2, 3}, {4}});
  g = mis_aggregate(nodes, I, 0.4, 2, s);
  CHECK(g.groups == std::vector<IndexList>{{0, 1, 2}, {3}, {4}});
}

TEST_CASE("MIS extremes") {
  const NodeSet far = line_nodes({0.0, 10.0, 20.0, 30.0});
  const auto g = mis_aggregate(far, iota_list(0, 4), 0.99, 1, se1);
  CHECK(g.groups.size() == 4);
  const NodeSet near = random_nodes(30, 6);
  const auto all = mis_aggregate(near, iota_list(0, 30), 1e-6, 1, se1);
  REQUIRE(all.groups.size() == 1);
  const auto [I1, I2] = two_way_split(all);
  CHECK(I1.size() == 15);
  CHECK(I2.size() == 15);
}

TEST_CASE("MIS groups partition the input for every theta") {
  const NodeSet nodes = random_nodes(300, 7);
  const IndexList I = iota_list(0, 300);
  for (double theta : {0.05, 0.3, 0.6, 0.9, 0.999})
    for (int dist : {1, 2}) {
      const auto agg = mis_aggregate(nodes, I, theta, dist, se1);
      IndexList all;
      for (const auto& grp : agg.groups) all.insert(all.end(), grp.begin(), grp.end());
      CHECK(sorted(all) == I);
      const auto [I1, I2] = two_way_split(agg);
      CHECK(!I1.empty());
      CHECK(!I2.empty());
      const PartitionTree t = build_tree_mis(nodes, 40, theta, dist, se1);
      CHECK(sorted(t.perm) == I);
      for (int leaf : t.leaves()) CHECK(t.nodes[static_cast<std::size_t>(leaf)].size <= 40);
    }
  CHECK_THROWS_AS(mis_aggregate(nodes, I, 1.0, 1, se1), InvalidArgument);
  CHECK_THROWS_AS(mis_aggregate(nodes, I, 0.5, 3, se1), InvalidArgument);
}

TEST_CASE("rank probe on identical points is rank one") {
  const NodeSet nodes(Matrix::Constant(2, 30, 0.25));
  const auto r = rank_probe(nodes, iota_list(0, 10), iota_list(10, 20), se1, {1e-8});
  CHECK(r.exact_rank == 1);
  CHECK(r.numerical_rank == doctest::Approx(1.0));
  CHECK(r.counts == std::vector<Index>{1});
}

TEST_CASE("rank probe counts are nonincreasing in the threshold") {
  const NodeSet nodes = random_nodes(300, 8);
  const auto r = rank_probe(nodes, iota_list(0, 100), iota_list(100, 200),
                            KernelSpec::isotropic(KernelFamily::squared_exponential, 0.3), {1e-12, 1e-8, 1e-4});
  CHECK(r.counts[0] >= r.counts[1]);
  CHECK(r.counts[1] >= r.counts[2]);
  CHECK(r.exact_rank <= 100);
  CHECK(r.numerical_rank >= 1.0);
}

TEST_CASE("permutation lowers the SE rank and leaves l1 full rank") {
  const KernelSpec se = KernelSpec::isotropic(KernelFamily::squared_exponential, 0.3);
  const KernelSpec l1 = KernelSpec::isotropic(KernelFamily::l1_distance, 0.3);
  const IndexList u1 = iota_list(0, 500), u2 = iota_list(500, 1000), all = iota_list(0, 1500);
  for (unsigned s = 0; s < 3; ++s) {
    const NodeSet nodes = random_nodes(1500, 100 + s);
    const auto [p1, p2] = permute(nodes, all, 500, se);
    CHECK(rank_probe(nodes, p1, p2, se, {}).exact_rank < rank_probe(nodes, u1, u2, se, {}).exact_rank);
    const auto [q1, q2] = permute(nodes, all, 500, l1);
    CHECK(rank_probe(nodes, q1, q2, l1, {}).exact_rank == 500);
    CHECK(rank_probe(nodes, u1, u2, l1, {}).exact_rank == 500);
  }
}
