#pragma once

#include "hmatgp/likelihood.hpp"

namespace hmatgp {

struct OptimizerOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-6;  ///< on the projected gradient in log-lengthscale
  double relative_decrease_tolerance = 1e-12;
  double lower = 1e-3;
  double upper = 1e3;
  int history = 6;
  int max_backtracks = 30;
};

struct GPModel {
  KernelSpec spec;
  SolveConfig cfg;
  NodeSet train_nodes;
  Vector train_targets;
  double train_mean = 0.0;
};

struct TrainReport {
  int iterations = 0;
  int evaluations = 0;
  double final_value = 0.0;
  double gradient_norm = 0.0;  ///< infinity norm of the projected log-space gradient
  double wall_seconds = 0.0;
  bool converged = false;
  std::string stop_reason;
  std::vector<double> accepted_values;
};

using ObjectiveFn = std::function<Objective(const Vector& x)>;

/// Projected limited-memory BFGS with Armijo backtracking on a box.
struct BoxMinimum {
  Vector x;
  Objective at;
  TrainReport report;
};
BoxMinimum minimize_box(const ObjectiveFn& f, Vector x0, const Vector& lower, const Vector& upper,
                        const OptimizerOptions& opts);

/// Minimizes the negative log likelihood over log-lengthscales with a fixed solver seed.
std::pair<GPModel, TrainReport> train(const NodeSet& nodes, const Vector& y, const KernelSpec& spec0,
                                      const SolveConfig& cfg, const OptimizerOptions& opts = {});

enum class PredictMode { full, reduced };

struct Prediction {
  Vector mean;
  Vector variance;
};

/// Posterior mean and latent variance (prior variance 1, no noise added at test points).
/// Reduced mode replaces the test/train covariance with a rank-cfg.k factorization.
Prediction predict(const GPModel& model, const Matrix& test_coords, PredictMode mode = PredictMode::full,
                   Index variance_batch = 256);

struct ModelSelection {
  GPModel best;
  Index best_fold = 0;
  std::vector<double> fold_errors;
  std::vector<IndexList> folds;
  std::vector<GPModel> models;
};

/// ||y - mean|| / ||y|| on held-out targets.
double relative_error(const Vector& truth, const Vector& estimate);

ModelSelection model_select(const NodeSet& nodes, const Vector& y, Index folds, const KernelSpec& spec0,
                            const SolveConfig& cfg, const OptimizerOptions& opts = {}, std::uint64_t fold_seed = 0);

}  // namespace hmatgp
