#pragma once

#include "hmatgp/partition.hpp"

namespace hmatgp {

/// Mean-error bound for a Gaussian range finder with k + p samples.
double expected_range_error(Index m, Index n, Index k, Index p, double sigma_next);

struct RangeThreshold {
  double threshold = 0.0;
  double failure_prob = 0.0;
};

/// Tail bound exceeded with probability at most 2 t^-p + exp(-u^2/2).
RangeThreshold range_error_threshold(Index m, Index n, Index k, Index p, double t, double u, double sigma_next);

/// Error of the SVD assembled from a range basis with error eps.
double svd_error_bound(Index k, Index n, double eps);

double alpha_leaf_estimate(double n_min, double sigma_n);

struct LevelInput {
  double beta = 1.0;
  double eps_od = 0.0;
};

struct LevelBudget {
  double log10_alpha = 0.0;
  double log10_a = 0.0;
  double log10_b = 0.0;
  double log10_eps_d = 0.0;  ///< inversion error after combining this level
};

/// Inversion-error chain, held in log10 because alpha squares at every level.
struct ErrorBudget {
  double kappa = 1.0;
  double log10_alpha_leaf = 0.0;
  std::vector<LevelInput> inputs;  ///< deepest first
  std::vector<LevelBudget> levels; ///< deepest first
  double log10_eps_d0 = 0.0;       ///< -inf when the error is exactly zero
  double eps_d0() const;
};

/// levels ordered deepest first; eps_seed is the inversion error of the deepest diagonal blocks.
ErrorBudget hierarchical_error_estimate(const std::vector<LevelInput>& levels, double alpha_leaf, double kappa,
                                        double eps_seed);

struct CostReport {
  double c_sp = 2.0;
  double n_min = 0.0;
  double c1 = 0.0;
  double storage = 0.0;
  double matvec_low = 0.0;
  double matvec_high = 0.0;
  double truncation = 0.0;
  double solve = 0.0;
  int tree_depth = 0;
};

/// Natural-log cost bounds; tree_depth is filled when a tree is supplied.
CostReport cost_model(double n, double k, double n_min, double c_sp = 2.0, const PartitionTree* tree = nullptr);

/// Gaussian quantile via bisection on erfc.
double normal_quantile(double p);

struct LogNormalFit {
  double mu = 0.0;     ///< mean of ln(error)
  double sigma = 0.0;  ///< std of ln(error)
};

/// ln-normal whose median is the mean bound and whose upper (1 - failure_prob) quantile is the threshold.
LogNormalFit fit_lognormal(double mean_bound, double threshold, double failure_prob);

struct ComparisonReport {
  double mean_log10_analytic = 0.0;
  double mean_log10_empirical = 0.0;
  double margin = 0.0;  ///< analytic minus empirical mean log
  std::vector<double> analytic_quantiles;   ///< 10%, 50%, 90%
  std::vector<double> empirical_quantiles;
  bool dominates = false;
};

ComparisonReport empirical_error_vs_bound(const std::vector<double>& log10_analytic,
                                          const std::vector<double>& log10_empirical);

}  // namespace hmatgp
