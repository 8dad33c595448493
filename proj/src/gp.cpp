#include "hmatgp/gp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>

namespace hmatgp {

namespace {

Vector project(const Vector& x, const Vector& lo, const Vector& hi) { return x.cwiseMax(lo).cwiseMin(hi); }

// Gradient with components that push against an active bound removed.
Vector projected_gradient(const Vector& x, const Vector& g, const Vector& lo, const Vector& hi) {
  Vector pg = g;
  for (Index i = 0; i < x.size(); ++i)
    if ((x[i] <= lo[i] && g[i] > 0) || (x[i] >= hi[i] && g[i] < 0)) pg[i] = 0.0;
  return pg;
}

bool finite(const Objective& o) { return std::isfinite(o.value) && o.grad.allFinite(); }

}  // namespace

BoxMinimum minimize_box(const ObjectiveFn& f, Vector x0, const Vector& lower, const Vector& upper,
                        const OptimizerOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  BoxMinimum out;
  TrainReport& rep = out.report;
  Vector x = project(x0, lower, upper);
  Objective cur = f(x);
  rep.evaluations = 1;
  if (!finite(cur)) throw NumericError("objective is not finite at the starting point");
  rep.accepted_values.push_back(cur.value);
  std::deque<std::pair<Vector, Vector>> memory;  // (s, y) pairs

  for (;;) {
    const Vector pg = projected_gradient(x, cur.grad, lower, upper);
    rep.gradient_norm = pg.lpNorm<Eigen::Infinity>();
    if (rep.gradient_norm < opts.gradient_tolerance) {
      rep.converged = true;
      rep.stop_reason = "gradient tolerance";
      break;
    }
    if (rep.iterations >= opts.max_iterations) {
      rep.stop_reason = "iteration limit";
      break;
    }
    // Two-loop recursion on the free variables.
    Vector q = pg;
    std::vector<double> alpha(memory.size());
    for (std::size_t i = memory.size(); i-- > 0;) {
      const auto& [s, y] = memory[i];
      alpha[i] = s.dot(q) / y.dot(s);
      q -= alpha[i] * y;
    }
    if (!memory.empty()) {
      const auto& [s, y] = memory.back();
      q *= s.dot(y) / y.squaredNorm();
    } else {
      q /= std::max(1.0, pg.norm());
    }
    for (std::size_t i = 0; i < memory.size(); ++i) {
      const auto& [s, y] = memory[i];
      const double beta = y.dot(q) / y.dot(s);
      q += (alpha[i] - beta) * s;
    }
    Vector dir = -q;
    for (Index i = 0; i < x.size(); ++i)
      if (pg[i] == 0.0 && cur.grad[i] != 0.0) dir[i] = 0.0;
    if (dir.dot(pg) >= 0) {
      dir = -pg;
      memory.clear();
    }

    double step = 1.0;
    bool accepted = false;
    Vector xn;
    Objective next;
    for (int bt = 0; bt < opts.max_backtracks; ++bt, step *= 0.5) {
      xn = project(x + step * dir, lower, upper);
      try {
        next = f(xn);
      } catch (const NumericError&) {
        next.value = std::numeric_limits<double>::quiet_NaN();
      }
      ++rep.evaluations;
      if (finite(next) && next.value <= cur.value + 1e-4 * cur.grad.dot(xn - x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      rep.stop_reason = "line search failed";
      break;
    }
    ++rep.iterations;
    const Vector s = xn - x, yv = next.grad - cur.grad;
    const double decrease = cur.value - next.value;
    if (s.dot(yv) > 1e-12 * s.norm() * yv.norm()) {
      memory.emplace_back(s, yv);
      if (static_cast<int>(memory.size()) > opts.history) memory.pop_front();
    }
    x = xn;
    cur = next;
    rep.accepted_values.push_back(cur.value);
    if (decrease <= opts.relative_decrease_tolerance * std::max(1.0, std::abs(cur.value))) {
      rep.gradient_norm = projected_gradient(x, cur.grad, lower, upper).lpNorm<Eigen::Infinity>();
      rep.converged = rep.gradient_norm < opts.gradient_tolerance;
      rep.stop_reason = rep.converged ? "gradient tolerance" : "objective stalled";
      break;
    }
  }
  rep.final_value = cur.value;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.x = x;
  out.at = cur;
  return out;
}

std::pair<GPModel, TrainReport> train(const NodeSet& nodes, const Vector& y, const KernelSpec& spec0,
                                      const SolveConfig& cfg, const OptimizerOptions& opts) {
  spec0.validate(nodes.dim());
  if (y.size() != nodes.size()) throw InvalidArgument("target length differs from node count");
  const double mean = y.mean();
  const Vector yc = y.array() - mean;
  const Index np = spec0.parameter_count(nodes.dim());
  const Vector lo = Vector::Constant(np, std::log(opts.lower));
  const Vector hi = Vector::Constant(np, std::log(opts.upper));
  auto objective = [&](const Vector& theta) {
    const Vector ell = theta.array().exp();
    Objective o = neg_log_likelihood(nodes, yc, spec0.with_lengthscales(ell), cfg);
    o.grad = o.grad.cwiseProduct(ell);
    return o;
  };
  const BoxMinimum m = minimize_box(objective, spec0.hyper.lengthscales.array().log(), lo, hi, opts);
  GPModel model{spec0.with_lengthscales(m.x.array().exp()), cfg, nodes, y, mean};
  return {model, m.report};
}

Prediction predict(const GPModel& model, const Matrix& test_coords, PredictMode mode, Index variance_batch) {
  const NodeSet& train_nodes = model.train_nodes;
  if (test_coords.rows() != train_nodes.dim()) throw InvalidArgument("test points have the wrong dimension");
  const Index nt = test_coords.cols(), n = train_nodes.size();
  const Vector yc = model.train_targets.array() - model.train_mean;
  const Matrix alpha = back_solve(train_nodes, yc, model.spec, model.cfg);
  Prediction out;
  out.variance.resize(nt);

  if (mode == PredictMode::full) {
    const Matrix cross = eval_cross(test_coords, train_nodes.coords(), model.spec);  // nt x n
    out.mean = (cross * alpha).col(0).array() + model.train_mean;
    for (Index j0 = 0; j0 < nt; j0 += variance_batch) {
      const Index b = std::min(variance_batch, nt - j0);
      const Matrix rhs = cross.middleRows(j0, b).transpose();
      const Matrix z = back_solve(train_nodes, rhs, model.spec, model.cfg);
      for (Index j = 0; j < b; ++j) out.variance[j0 + j] = 1.0 - rhs.col(j).dot(z.col(j));
    }
  } else {
    Matrix all(train_nodes.dim(), nt + n);
    all << test_coords, train_nodes.coords();
    const NodeSet joint(all);
    const IndexList I1 = iota_list(0, nt), I2 = iota_list(nt, n);
    Rng rng = block_stream(model.cfg.seed, 0xC0FFEEULL, 0);
    LowRankOptions lro;
    lro.n_max = model.cfg.n_max;
    const LowRankFactor f = rsvd_id(joint, I1, I2, model.spec, model.cfg.k, rng, lro);
    const Matrix lm = f.left * f.sigma.asDiagonal();  // nt x k
    out.mean = (lm * (f.right.transpose() * alpha)).col(0).array() + model.train_mean;
    const Matrix z = back_solve(train_nodes, f.right, model.spec, model.cfg);  // n x k
    const Matrix core = f.right.transpose() * z;                              // k x k
    out.variance = (Vector::Ones(nt).array() - (lm * core).cwiseProduct(lm).rowwise().sum().array()).matrix();
  }
  out.variance = out.variance.cwiseMax(0.0);
  return out;
}

double relative_error(const Vector& truth, const Vector& estimate) {
  const double nt = truth.norm();
  return nt > 0 ? (truth - estimate).norm() / nt : (truth - estimate).norm();
}

ModelSelection model_select(const NodeSet& nodes, const Vector& y, Index folds, const KernelSpec& spec0,
                            const SolveConfig& cfg, const OptimizerOptions& opts, std::uint64_t fold_seed) {
  if (folds < 2 || folds > nodes.size()) throw InvalidArgument("folds must be in [2, n]");
  IndexList order = iota_list(0, nodes.size());
  Rng rng = block_stream(fold_seed, 0xF01DULL, 0);
  std::shuffle(order.begin(), order.end(), rng);
  ModelSelection out;
  out.folds.resize(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < order.size(); ++i) out.folds[i % static_cast<std::size_t>(folds)].push_back(order[i]);
  for (Index f = 0; f < folds; ++f) {
    const IndexList& test = out.folds[static_cast<std::size_t>(f)];
    IndexList trainset;
    for (Index g = 0; g < folds; ++g)
      if (g != f) trainset.insert(trainset.end(), out.folds[static_cast<std::size_t>(g)].begin(), out.folds[static_cast<std::size_t>(g)].end());
    std::sort(trainset.begin(), trainset.end());
    Vector ytr(static_cast<Index>(trainset.size())), yte(static_cast<Index>(test.size()));
    for (std::size_t i = 0; i < trainset.size(); ++i) ytr[static_cast<Index>(i)] = y[trainset[i]];
    for (std::size_t i = 0; i < test.size(); ++i) yte[static_cast<Index>(i)] = y[test[i]];
    auto [model, report] = train(nodes.select(trainset), ytr, spec0, cfg, opts);
    const Prediction p = predict(model, nodes.select(test).coords(), PredictMode::full);
    out.fold_errors.push_back(relative_error(yte, p.mean));
    out.models.push_back(std::move(model));
  }
  out.best_fold = static_cast<Index>(std::min_element(out.fold_errors.begin(), out.fold_errors.end()) - out.fold_errors.begin());
  out.best = out.models[static_cast<std::size_t>(out.best_fold)];
  return out;
}

}  // namespace hmatgp
