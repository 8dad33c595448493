#include "hmatgp/partition.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace hmatgp {

Index split_size(Index m) {
  if (m < 2) throw InvalidArgument("split_size needs m >= 2");
  const double x = static_cast<double>(m) - 0.5;
  int e = static_cast<int>(std::floor(std::log10(x)));
  auto pow10 = [](int k) {
    double v = 1.0;
    for (int i = 0; i < k; ++i) v *= 10.0;
    return v;
  };
  while (e > 0 && pow10(e) > x) --e;
  while (pow10(e + 1) <= x) ++e;
  return static_cast<Index>(pow10(e));
}

std::pair<IndexList, IndexList> permute(const NodeSet& nodes, IndexSpan I, Index s,
                                        const KernelSpec& spec) {
  const Index m = static_cast<Index>(I.size());
  if (s < 1 || s >= m) throw InvalidArgument("permute split size out of range");
  const Index head[1] = {I[0]};
  const Matrix row = eval_block(nodes, IndexSpan(head, 1), I, spec);
  IndexList order = iota_list(0, m);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(row(0, a)) > std::abs(row(0, b));
  });
  IndexList I1, I2;
  I1.reserve(static_cast<std::size_t>(s));
  I2.reserve(static_cast<std::size_t>(m - s));
  for (Index j = 0; j < m; ++j) (j < s ? I1 : I2).push_back(I[static_cast<std::size_t>(order[j])]);
  return {std::move(I1), std::move(I2)};
}

namespace {

void perm_recursive(const NodeSet& nodes, IndexSpan I, Index eta, const KernelSpec& spec,
                    IndexList& out) {
  if (static_cast<Index>(I.size()) <= eta) {
    out.insert(out.end(), I.begin(), I.end());
    return;
  }
  auto [I1, I2] = permute(nodes, I, split_size(static_cast<Index>(I.size())), spec);
  perm_recursive(nodes, I1, eta, spec, out);
  perm_recursive(nodes, I2, eta, spec, out);
}

}  // namespace

IndexList perm_generator(const NodeSet& nodes, IndexSpan I, Index eta, const KernelSpec& spec) {
  if (eta < 1) throw InvalidArgument("eta must be >= 1");
  IndexList out;
  out.reserve(I.size());
  perm_recursive(nodes, I, eta, spec, out);
  return out;
}

int PartitionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.level);
  return d;
}

std::vector<int> PartitionTree::leaves() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].is_leaf()) out.push_back(static_cast<int>(i));
  std::sort(out.begin(), out.end(),
            [&](int a, int b) { return nodes[static_cast<std::size_t>(a)].offset <
                                       nodes[static_cast<std::size_t>(b)].offset; });
  return out;
}

PartitionTree build_tree_with(Index n, Index eta, const Splitter& split) {
  if (eta < 1 || n < 1) throw InvalidArgument("build_tree needs n >= 1 and eta >= 1");
  PartitionTree tree;
  tree.perm = iota_list(0, n);
  tree.nodes.push_back(TreeNode{0, n, 0, 0, -1, -1});
  std::vector<Index> per_level;
  // Breadth-first so ordinals enumerate each level left to right.
  std::deque<int> queue{0};
  per_level.push_back(1);
  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    TreeNode node = tree.nodes[static_cast<std::size_t>(id)];
    if (node.size <= eta) continue;
    IndexList I(tree.perm.begin() + node.offset, tree.perm.begin() + node.offset + node.size);
    const Index s = split(I);
    if (s < 1 || s >= node.size) throw InvalidArgument("splitter returned an empty part");
    std::copy(I.begin(), I.end(), tree.perm.begin() + node.offset);
    const int lvl = node.level + 1;
    if (static_cast<int>(per_level.size()) <= lvl) per_level.push_back(0);
    auto& count = per_level[static_cast<std::size_t>(lvl)];
    const int a = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{node.offset, s, lvl, count++, -1, -1});
    tree.nodes.push_back(TreeNode{node.offset + s, node.size - s, lvl, count++, -1, -1});
    tree.nodes[static_cast<std::size_t>(id)].first = a;
    tree.nodes[static_cast<std::size_t>(id)].second = a + 1;
    queue.push_back(a);
    queue.push_back(a + 1);
  }
  return tree;
}

PartitionTree build_tree(const NodeSet& nodes, Index eta, const KernelSpec& spec) {
  return build_tree_with(nodes.size(), eta, [&](IndexList& I) {
    const Index s = split_size(static_cast<Index>(I.size()));
    auto [I1, I2] = permute(nodes, I, s, spec);
    std::copy(I1.begin(), I1.end(), I.begin());
    std::copy(I2.begin(), I2.end(), I.begin() + s);
    return s;
  });
}

PartitionTree build_tree_unpermuted(Index n, Index eta) {
  return build_tree_with(n, eta, [](IndexList& I) { return split_size(static_cast<Index>(I.size())); });
}

AggregationResult mis_aggregate(const NodeSet& nodes, IndexSpan I, double theta, int distance,
                                const KernelSpec& spec) {
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("theta must lie in (0,1)");
  if (distance != 1 && distance != 2) throw InvalidArgument("distance must be 1 or 2");
  const Index m = static_cast<Index>(I.size());
  std::vector<int> state(static_cast<std::size_t>(m), 0);  // 0 free, 1 root, -1 absorbed
  AggregationResult out;
  auto strength_row = [&](Index local) {
    const Index head[1] = {I[static_cast<std::size_t>(local)]};
    return Matrix(eval_block(nodes, IndexSpan(head, 1), I, spec));
  };
  for (Index i = 0; i < m; ++i) {
    if (state[static_cast<std::size_t>(i)] != 0) continue;
    state[static_cast<std::size_t>(i)] = 1;
    out.roots.push_back(I[static_cast<std::size_t>(i)]);
    IndexList group{I[static_cast<std::size_t>(i)]};
    IndexList frontier;
    const Matrix row = strength_row(i);
    // Only free nodes are absorbed so groups stay disjoint.
    for (Index j = 0; j < m; ++j) {
      if (state[static_cast<std::size_t>(j)] == 0 && row(0, j) >= theta) {
        state[static_cast<std::size_t>(j)] = -1;
        group.push_back(I[static_cast<std::size_t>(j)]);
        frontier.push_back(j);
      }
    }
    if (distance == 2) {
      for (Index j : frontier) {
        const Matrix rj = strength_row(j);
        for (Index k = 0; k < m; ++k) {
          if (state[static_cast<std::size_t>(k)] == 0 && rj(0, k) >= theta) {
            state[static_cast<std::size_t>(k)] = -1;
            group.push_back(I[static_cast<std::size_t>(k)]);
          }
        }
      }
    }
    out.groups.push_back(std::move(group));
  }
  return out;
}

std::pair<IndexList, IndexList> two_way_split(const AggregationResult& agg) {
  std::vector<std::size_t> order(agg.groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return agg.groups[a].size() > agg.groups[b].size();
  });
  if (agg.groups.size() == 1) {
    const IndexList& g = agg.groups[0];
    const auto half = static_cast<std::ptrdiff_t>(g.size() / 2);
    return {IndexList(g.begin(), g.begin() + half), IndexList(g.begin() + half, g.end())};
  }
  IndexList first = agg.groups[order[0]], rest;
  for (std::size_t t = 1; t < order.size(); ++t)
    rest.insert(rest.end(), agg.groups[order[t]].begin(), agg.groups[order[t]].end());
  return {std::move(first), std::move(rest)};
}

PartitionTree build_tree_mis(const NodeSet& nodes, Index eta, double theta, int distance,
                             const KernelSpec& spec) {
  return build_tree_with(nodes.size(), eta, [&](IndexList& I) {
    auto [I1, I2] = two_way_split(mis_aggregate(nodes, I, theta, distance, spec));
    std::copy(I1.begin(), I1.end(), I.begin());
    std::copy(I2.begin(), I2.end(), I.begin() + static_cast<std::ptrdiff_t>(I1.size()));
    return static_cast<Index>(I1.size());
  });
}

RankProbeReport rank_probe(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec,
                           const std::vector<double>& thresholds, Index cap) {
  if (static_cast<Index>(I1.size()) * static_cast<Index>(I2.size()) > cap)
    throw InvalidArgument("rank_probe block exceeds the dense cap");
  const Matrix A = eval_block(nodes, I1, I2, spec);
  RankProbeReport r;
  r.singular_values = Eigen::BDCSVD<Matrix>(A).singularValues();
  if (!r.singular_values.allFinite()) r.singular_values = Eigen::JacobiSVD<Matrix>(A).singularValues();
  const double s1 = r.singular_values.size() ? r.singular_values[0] : 0.0;
  const double tol = static_cast<double>(std::max(A.rows(), A.cols())) *
                     std::numeric_limits<double>::epsilon() * s1;
  r.exact_rank = (r.singular_values.array() > tol).count();
  r.numerical_rank = s1 > 0 ? r.singular_values.squaredNorm() / (s1 * s1) : 0.0;
  for (double t : thresholds) r.counts.push_back((r.singular_values.array() >= t * s1).count());
  return r;
}

}  // namespace hmatgp
