#include "hmatgp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hmatgp {

double expected_range_error(Index m, Index n, Index k, Index p, double sigma_next) {
  if (k < 2 || p < 2 || k + p > std::min(m, n)) throw InvalidArgument("expected_range_error preconditions violated");
  return std::sqrt(1.0 + static_cast<double>(k) / static_cast<double>(p - 1)) *
         std::sqrt(static_cast<double>(std::min(m, n) - k)) * sigma_next;
}

RangeThreshold range_error_threshold(Index m, Index n, Index k, Index p, double t, double u, double sigma_next) {
  if (p < 4 || t < 1.0 || u < 1.0 || k < 2 || k + p > std::min(m, n))
    throw InvalidArgument("range_error_threshold preconditions violated");
  const double kk = static_cast<double>(k), pp = static_cast<double>(p);
  const double first = (1.0 + t * std::sqrt(3.0 * kk / (pp + 1.0))) * std::sqrt(static_cast<double>(std::min(m, n) - k));
  const double second = u * t * std::numbers::e * std::sqrt(kk + pp) / (pp + 1.0);
  return RangeThreshold{(first + second) * sigma_next, 2.0 * std::pow(t, -pp) + std::exp(-u * u / 2.0)};
}

double svd_error_bound(Index k, Index n, double eps) {
  if (k > n || k < 0) throw InvalidArgument("svd_error_bound needs 0 <= k <= n");
  const double kk = static_cast<double>(k);
  return (1.0 + std::sqrt(kk + 4.0 * kk * static_cast<double>(n - k))) * eps;
}

double alpha_leaf_estimate(double n_min, double sigma_n) {
  if (!(n_min > 0 && sigma_n > 0)) throw InvalidArgument("alpha_leaf_estimate needs positive inputs");
  return std::sqrt(n_min) / sigma_n;
}

double ErrorBudget::eps_d0() const { return std::pow(10.0, log10_eps_d0); }

namespace {

double log10_sum(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log10(1.0 + std::pow(10.0, lo - hi));
}

double safe_log10(double x) { return x > 0 ? std::log10(x) : -std::numeric_limits<double>::infinity(); }

}  // namespace

ErrorBudget hierarchical_error_estimate(const std::vector<LevelInput>& levels, double alpha_leaf, double kappa,
                                        double eps_seed) {
  if (!(alpha_leaf > 0) || !(kappa > 0)) throw InvalidArgument("alpha_leaf and kappa must be positive");
  ErrorBudget out;
  out.kappa = kappa;
  out.inputs = levels;
  out.log10_alpha_leaf = std::log10(alpha_leaf);
  const double lk = std::log10(kappa);
  double eps = safe_log10(eps_seed);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    // alpha_{L-i} <= alpha_L^{2^i} kappa^{2i-1} prod_{j<i} beta_{L-j}^{2^{i-j-1}}
    LevelBudget lb;
    if (i == 0) {
      lb.log10_alpha = out.log10_alpha_leaf;
    } else {
      const double di = static_cast<double>(i);
      lb.log10_alpha = std::pow(2.0, di) * out.log10_alpha_leaf + (2.0 * di - 1.0) * lk;
      for (std::size_t j = 0; j < i; ++j)
        lb.log10_alpha += std::pow(2.0, static_cast<double>(i - j - 1)) * std::log10(levels[j].beta);
    }
    const double lbeta = std::log10(levels[i].beta);
    lb.log10_a = lk + 2.0 * lb.log10_alpha + 4.0 * lbeta;
    lb.log10_b = std::log10(2.0) + lk + 3.0 * lb.log10_alpha + 3.0 * lbeta + safe_log10(levels[i].eps_od);
    eps = log10_sum(lb.log10_a + eps, lb.log10_b);
    lb.log10_eps_d = eps;
    out.levels.push_back(lb);
  }
  out.log10_eps_d0 = eps;
  return out;
}

CostReport cost_model(double n, double k, double n_min, double c_sp, const PartitionTree* tree) {
  if (!(n > 0 && k > 0 && n_min > 0 && c_sp > 0)) throw InvalidArgument("cost_model needs positive inputs");
  CostReport r;
  r.c_sp = c_sp;
  r.n_min = n_min;
  r.c1 = 2.0 * c_sp * n_min;
  r.storage = r.c1 * n * std::log(n);
  r.matvec_low = r.storage;
  r.matvec_high = 2.0 * r.storage;
  r.truncation = k * r.storage;
  r.solve = 3.0 * r.c1 * k * n * std::log(n);
  if (tree) r.tree_depth = tree->depth();
  return r;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile needs p in (0,1)");
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

LogNormalFit fit_lognormal(double mean_bound, double threshold, double failure_prob) {
  if (!(mean_bound > 0 && threshold > mean_bound)) throw InvalidArgument("fit_lognormal needs 0 < mean < threshold");
  LogNormalFit f;
  f.mu = std::log(mean_bound);
  f.sigma = (std::log(threshold) - f.mu) / normal_quantile(1.0 - failure_prob);
  return f;
}

ComparisonReport empirical_error_vs_bound(const std::vector<double>& log10_analytic,
                                          const std::vector<double>& log10_empirical) {
  if (log10_analytic.empty() || log10_empirical.empty()) throw InvalidArgument("empty error samples");
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto quantiles = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::vector<double> q;
    for (double p : {0.1, 0.5, 0.9}) q.push_back(v[static_cast<std::size_t>(p * static_cast<double>(v.size() - 1))]);
    return q;
  };
  ComparisonReport r;
  r.mean_log10_analytic = mean(log10_analytic);
  r.mean_log10_empirical = mean(log10_empirical);
  r.margin = r.mean_log10_analytic - r.mean_log10_empirical;
  r.analytic_quantiles = quantiles(log10_analytic);
  r.empirical_quantiles = quantiles(log10_empirical);
  r.dominates = r.margin >= 0.0;
  return r;
}

}  // namespace hmatgp
