#pragma once

#include "hmatgp/kernel.hpp"

#include <functional>

namespace hmatgp {

/// Largest power of ten strictly below m (m >= 2).
Index split_size(Index m);

/// Sorts |k(x_{I[0]}, x_I)| descending (stable); first s indices form I1.
std::pair<IndexList, IndexList> permute(const NodeSet& nodes, IndexSpan I, Index s,
                                        const KernelSpec& spec);

/// Recursive size-rule permutation; sets of size <= eta are returned unchanged.
IndexList perm_generator(const NodeSet& nodes, IndexSpan I, Index eta, const KernelSpec& spec);

struct TreeNode {
  Index offset = 0;  ///< start within PartitionTree::perm
  Index size = 0;
  int level = 0;
  Index ordinal = 0;  ///< position among nodes of the same level, breadth-first
  int first = -1;
  int second = -1;
  bool is_leaf() const { return first < 0; }
};

/// Binary tree over contiguous ranges of a permuted ordering. Node 0 is the root.
struct PartitionTree {
  IndexList perm;
  std::vector<TreeNode> nodes;

  IndexSpan indices(const TreeNode& node) const {
    return IndexSpan(perm).subspan(static_cast<std::size_t>(node.offset),
                                   static_cast<std::size_t>(node.size));
  }
  int depth() const;
  std::vector<int> leaves() const;
};

/// Reorders I in place and returns the size of the first part (0 < s < |I|).
using Splitter = std::function<Index(IndexList& I)>;

PartitionTree build_tree_with(Index n, Index eta, const Splitter& split);

/// Size rule plus permute aggregation.
PartitionTree build_tree(const NodeSet& nodes, Index eta, const KernelSpec& spec);

/// Size rule on the identity ordering, no aggregation.
PartitionTree build_tree_unpermuted(Index n, Index eta);

struct AggregationResult {
  IndexList roots;
  std::vector<IndexList> groups;
};

/// Greedy MIS sweep in index order over the strength graph k(x_i, x_j) >= theta.
AggregationResult mis_aggregate(const NodeSet& nodes, IndexSpan I, double theta, int distance,
                                const KernelSpec& spec);

/// Largest group versus the union of the rest; a single group is halved.
std::pair<IndexList, IndexList> two_way_split(const AggregationResult& agg);

PartitionTree build_tree_mis(const NodeSet& nodes, Index eta, double theta, int distance,
                             const KernelSpec& spec);

struct RankProbeReport {
  Index exact_rank = 0;
  double numerical_rank = 0.0;
  std::vector<Index> counts;  ///< singular values >= each relative threshold
  Vector singular_values;
};

RankProbeReport rank_probe(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec,
                           const std::vector<double>& thresholds, Index cap = 4'000'000);

}  // namespace hmatgp
