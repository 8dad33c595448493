#pragma once

#include "hmatgp/types.hpp"

namespace hmatgp {

/// Points stored column-wise: coords is d x n.
class NodeSet {
 public:
  NodeSet() = default;
  explicit NodeSet(Matrix coords);

  Index dim() const { return coords_.rows(); }
  Index size() const { return coords_.cols(); }
  const Matrix& coords() const { return coords_; }
  auto point(Index i) const { return coords_.col(i); }

  NodeSet select(IndexSpan indices) const;

 private:
  Matrix coords_;
};

enum class KernelFamily { squared_exponential, exponential, ard_squared_exponential, l1_distance };

struct Hyperparameters {
  Vector lengthscales;
  double noise_variance = 0.0;
};

struct KernelSpec {
  KernelFamily family = KernelFamily::squared_exponential;
  Hyperparameters hyper;

  static KernelSpec isotropic(KernelFamily family, double ell, double noise = 0.0);
  static KernelSpec ard(const Vector& ells, double noise = 0.0);

  /// Number of lengthscales required for points of dimension d.
  Index parameter_count(Index d) const;
  void validate(Index d) const;
  KernelSpec with_lengthscales(const Vector& ells) const;
};

KernelFamily parse_family(const std::string& name);
std::string family_name(KernelFamily family);

/// Kernel value of two points; no noise term.
double kernel_value(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b,
                    const KernelSpec& spec);

/// Dense block k(x_rows, x_cols). Parallel over columns.
Matrix eval_block(const NodeSet& nodes, IndexSpan rows, IndexSpan cols, const KernelSpec& spec);

/// Entry-by-entry reference of eval_block with no parallelism or precomputation.
Matrix eval_block_serial(const NodeSet& nodes, IndexSpan rows, IndexSpan cols,
                         const KernelSpec& spec);

/// One matrix per lengthscale: entrywise d/d ell_p of eval_block.
std::vector<Matrix> eval_block_derivative(const NodeSet& nodes, IndexSpan rows, IndexSpan cols,
                                          const KernelSpec& spec);

/// Block between two unrelated point sets (d x n_a and d x n_b).
Matrix eval_cross(const Matrix& a, const Matrix& b, const KernelSpec& spec);

}  // namespace hmatgp
