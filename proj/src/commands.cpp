#include "hmatgp/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace hmatgp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(long long v) { return std::to_string(v); }
std::string fmt(Index v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "1" : "0"; }

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_real(const std::string& key, const std::string& s) {
  if (s == "e") return std::numbers::e;
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw InvalidArgument("key " + key + ": not a number: " + s);
  return v;
}

long long parse_integer(const std::string& key, const std::string& s) {
  const double v = parse_real(key, s);
  if (v != std::floor(v)) throw InvalidArgument("key " + key + ": not an integer: " + s);
  return static_cast<long long>(v);
}

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"out", "hmatgp_out"},
      {"seed", "0"},
      {"data_seed", "1"},
      {"n", "2000"},
      {"d", "2"},
      {"k", "20"},
      {"eta", "105"},
      {"nmax", "5000000"},
      {"sigma2", "1e-3"},
      {"dense_budget", "-1"},
      {"method", "rsvd_id"},
      {"kernel", "se"},
      {"ell", "1"},
      {"dense_check", "false"},
      {"mode", "full"},
      {"gradient", "factor_product"},
      {"data", "synthetic"},
      {"features", "trip_distance,payment_type,fare_amount,tip_amount"},
      {"target_column", "total_amount"},
      {"clean", "true"},
      {"target", "smooth"},
      {"n_test", "0"},
      {"test_fraction", "0.1"},
      {"split_seed", "0"},
      {"train", "true"},
      {"max_iter", "100"},
      {"grad_tol", "1e-6"},
      {"ell_lower", "1e-3"},
      {"ell_upper", "1e3"},
      {"variance_batch", "256"},
      {"sizes", "10000,20000,50000,100000"},
      {"ks", "5,10,20,40"},
      {"k_sweep_n", "50000"},
      {"repeats", "1"},
      {"thetas", "0.3,0.6,0.9"},
      {"mis_distances", "1,2"},
      {"seeds", "20"},
      {"split", "500"},
      {"kernels", "se,l1"},
      {"p", "5"},
      {"draws", "100"},
      {"beta", "1"},
      {"kappa", "1.02"},
  };
  return d;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw InvalidArgument("key " + key + ": not a boolean: " + s);
}

LowRankMethod parse_method(const std::string& s) {
  if (s == "rsvd_id" || s == "rsvd") return LowRankMethod::rsvd_id;
  if (s == "nystrom_rand") return LowRankMethod::nystrom_rand;
  if (s == "nystrom_qr") return LowRankMethod::nystrom_qr;
  throw InvalidArgument("unknown low-rank method: " + s);
}

std::string method_name(LowRankMethod m) {
  switch (m) {
    case LowRankMethod::rsvd_id: return "rsvd_id";
    case LowRankMethod::nystrom_rand: return "nystrom_rand";
    case LowRankMethod::nystrom_qr: return "nystrom_qr";
  }
  return "?";
}

Vector random_unit_vector(Index n, std::uint64_t seed) {
  Rng rng = block_stream(seed, 0x7E5ULL, 0);
  std::normal_distribution<double> g;
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = g(rng);
  return y / y.norm();
}

struct Problem {
  NodeSet nodes;
  Vector y;
  double target_scale = 1.0;
  Index dropped_invalid = 0;
  Index dropped_negative = 0;
};

Problem make_problem(const RunConfig& cfg) {
  Problem p;
  const std::string source = cfg.str("data");
  if (source == "synthetic") {
    const Index n = cfg.integer("n");
    p.nodes = NodeSet(uniform_points(n, cfg.integer("d"), static_cast<std::uint64_t>(cfg.integer("data_seed"))));
    const std::string target = cfg.str("target");
    if (target == "smooth")
      p.y = smooth_target(p.nodes.coords());
    else if (target == "random")
      p.y = random_unit_vector(n, static_cast<std::uint64_t>(cfg.integer("data_seed")));
    else
      throw InvalidArgument("unknown target: " + target);
    return p;
  }
  std::string path = source;
  if (source == "synthetic-taxi") {
    std::filesystem::create_directories(cfg.str("out"));
    path = (std::filesystem::path(cfg.str("out")) / "synthetic_taxi.csv").string();
    write_synthetic_taxi_csv(path, cfg.integer("n"), static_cast<std::uint64_t>(cfg.integer("data_seed")));
  }
  Dataset ds = ingest_csv(path, cfg.strings("features"), cfg.str("target_column"), cfg.flag("clean"));
  p.nodes = NodeSet(std::move(ds.features));
  p.y = std::move(ds.targets);
  p.target_scale = ds.target_scale;
  p.dropped_invalid = ds.dropped_invalid;
  p.dropped_negative = ds.dropped_negative;
  return p;
}

void add_problem_metrics(Metrics& m, const Problem& p) {
  m.emplace_back("n", fmt(p.nodes.size()));
  m.emplace_back("dim", fmt(p.nodes.dim()));
  m.emplace_back("dropped_invalid", fmt(p.dropped_invalid));
  m.emplace_back("dropped_negative", fmt(p.dropped_negative));
}

GradientMode gradient_mode(const RunConfig& cfg) {
  const auto s = cfg.str("gradient");
  if (s == "factor_product") return GradientMode::factor_product;
  if (s == "svd_derivative") return GradientMode::svd_derivative;
  throw InvalidArgument("unknown gradient mode: " + s);
}

std::vector<std::uint64_t> seed_list(const RunConfig& cfg) {
  std::vector<std::uint64_t> s(static_cast<std::size_t>(cfg.integer("seeds")));
  std::iota(s.begin(), s.end(), static_cast<std::uint64_t>(cfg.integer("seed")));
  return s;
}

double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw InvalidArgument("unknown config key: " + key);
  values_[key] = trim(value);
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument(path + ":" + std::to_string(lineno) + ": expected key=value");
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

std::string RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("unknown config key: " + key);
  return it->second;
}

long long RunConfig::integer(const std::string& key) const { return parse_integer(key, str(key)); }
double RunConfig::real(const std::string& key) const { return parse_real(key, str(key)); }
bool RunConfig::flag(const std::string& key) const { return parse_bool(key, str(key)); }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(str(key))) out.push_back(parse_real(key, s));
  return out;
}

std::vector<long long> RunConfig::integers(const std::string& key) const {
  std::vector<long long> out;
  for (const auto& s : split_list(str(key))) out.push_back(parse_integer(key, s));
  return out;
}

std::vector<std::string> RunConfig::strings(const std::string& key) const { return split_list(str(key)); }

SolveConfig RunConfig::solve_config() const {
  SolveConfig c;
  c.eta = integer("eta");
  c.k = integer("k");
  c.n_max = integer("nmax");
  c.noise_variance = real("sigma2");
  c.seed = static_cast<std::uint64_t>(integer("seed"));
  c.dense_budget = integer("dense_budget");
  c.method = parse_method(str("method"));
  c.validate();
  return c;
}

KernelSpec RunConfig::kernel_spec(Index dim) const {
  const KernelFamily family = parse_family(str("kernel"));
  std::vector<double> ells = reals("ell");
  KernelSpec spec;
  if (family == KernelFamily::ard_squared_exponential) {
    if (ells.size() == 1) ells.assign(static_cast<std::size_t>(dim), ells[0]);
    spec = KernelSpec::ard(Eigen::Map<const Vector>(ells.data(), static_cast<Index>(ells.size())));
  } else {
    if (ells.size() != 1) throw InvalidArgument("isotropic kernels take one lengthscale");
    spec = KernelSpec::isotropic(family, ells[0]);
  }
  spec.hyper.noise_variance = real("sigma2");
  spec.validate(dim);
  return spec;
}

OptimizerOptions RunConfig::optimizer_options() const {
  OptimizerOptions o;
  o.max_iterations = static_cast<int>(integer("max_iter"));
  o.gradient_tolerance = real("grad_tol");
  o.lower = real("ell_lower");
  o.upper = real("ell_upper");
  return o;
}

void Table::add(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw InvalidArgument("table row width mismatch");
  rows.push_back(std::move(row));
}

void Table::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(columns);
  for (const auto& r : rows) line(r);
  if (!out) throw InvalidArgument("write failed: " + path);
}

std::string CommandResult::metric(const std::string& key) const {
  for (const auto& [k, v] : metrics)
    if (k == key) return v;
  throw InvalidArgument("no metric " + key);
}

double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("slope fit needs two or more paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0) throw InvalidArgument("slope fit needs distinct abscissae");
  return sxy / sxx;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

CommandResult cmd_solve(const RunConfig& cfg) {
  const Problem p = make_problem(cfg);
  const KernelSpec spec = cfg.kernel_spec(p.nodes.dim());
  const SolveConfig sc = cfg.solve_config();
  CommandResult r;
  add_problem_metrics(r.metrics, p);
  const auto t0 = Clock::now();
  const Matrix x = back_solve(p.nodes, p.y, spec, sc);
  r.metrics.emplace_back("solve_seconds", fmt(seconds_since(t0)));
  r.metrics.emplace_back("solution_norm", fmt(x.norm()));
  if (cfg.flag("dense_check")) {
    const auto t1 = Clock::now();
    const Matrix xd = dense_solve(p.nodes, p.y, spec, sc.noise_variance);
    r.metrics.emplace_back("dense_seconds", fmt(seconds_since(t1)));
    r.metrics.emplace_back("dense_error", fmt(rel_err(x, xd)));
  }
  Table t{{"index", "x"}, {}};
  for (Index i = 0; i < x.rows(); ++i) t.add({fmt(i), fmt(x(i, 0))});
  r.tables.emplace_back("solution", std::move(t));
  return r;
}

CommandResult cmd_loglik(const RunConfig& cfg) {
  const Problem p = make_problem(cfg);
  const KernelSpec spec = cfg.kernel_spec(p.nodes.dim());
  const SolveConfig sc = cfg.solve_config();
  CommandResult r;
  add_problem_metrics(r.metrics, p);
  const auto t0 = Clock::now();
  const LikelihoodOutput out = lkl_eval(p.nodes, p.y, spec, sc, gradient_mode(cfg));
  r.metrics.emplace_back("loglik_seconds", fmt(seconds_since(t0)));
  const double n = static_cast<double>(p.nodes.size());
  r.metrics.emplace_back("pi", fmt(out.pi));
  r.metrics.emplace_back("lambda", fmt(out.lambda));
  r.metrics.emplace_back("neg_log_likelihood", fmt(0.5 * out.pi + 0.5 * out.lambda + 0.5 * n * std::log(2 * std::numbers::pi)));
  r.metrics.emplace_back("fallback_blocks", fmt(out.fallback_blocks));
  Table g{{"parameter", "ell", "d_pi", "d_lambda", "d_neg_log_likelihood"}, {}};
  for (Index i = 0; i < out.d_pi.size(); ++i) {
    const double dnll = 0.5 * (out.d_pi[i] + out.d_lambda[i]);
    r.metrics.emplace_back("d_pi_" + fmt(i), fmt(out.d_pi[i]));
    r.metrics.emplace_back("d_lambda_" + fmt(i), fmt(out.d_lambda[i]));
    g.add({fmt(i), fmt(spec.hyper.lengthscales[i]), fmt(out.d_pi[i]), fmt(out.d_lambda[i]), fmt(dnll)});
  }
  r.tables.emplace_back("gradient", std::move(g));
  if (cfg.flag("dense_check")) {
    if (p.nodes.size() > 8000) throw InvalidArgument("dense check limited to n <= 8000");
    const IndexList all = iota_list(0, p.nodes.size());
    Matrix A = eval_block(p.nodes, all, all, spec);
    A.diagonal().array() += sc.noise_variance;
    Eigen::LLT<Matrix> llt(A);
    if (llt.info() != Eigen::Success) throw NotPositiveDefinite("dense oracle matrix is not positive definite");
    const double pi = p.y.dot(llt.solve(p.y));
    const double lambda = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    r.metrics.emplace_back("dense_pi_error", fmt(std::abs(out.pi - pi) / std::abs(pi)));
    r.metrics.emplace_back("dense_lambda_error", fmt(std::abs(out.lambda - lambda) / std::abs(lambda)));
  }
  return r;
}

namespace {

struct Split {
  IndexList train;
  IndexList test;
};

Split split_indices(const RunConfig& cfg, Index n) {
  IndexList idx = iota_list(0, n);
  Rng rng = block_stream(static_cast<std::uint64_t>(cfg.integer("split_seed")), 0x5B117ULL, 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Index n_test = cfg.integer("n_test");
  if (n_test == 0) n_test = static_cast<Index>(std::llround(cfg.real("test_fraction") * static_cast<double>(n)));
  if (n_test < 0 || n_test >= n) throw InvalidArgument("test split must leave training points");
  Split s;
  s.train.assign(idx.begin(), idx.end() - n_test);
  s.test.assign(idx.end() - n_test, idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Vector gather(const Vector& v, const IndexList& idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = v[idx[i]];
  return out;
}

void add_train_metrics(Metrics& m, const GPModel& model, const TrainReport& rep) {
  m.emplace_back("iterations", fmt(rep.iterations));
  m.emplace_back("evaluations", fmt(rep.evaluations));
  m.emplace_back("final_value", fmt(rep.final_value));
  m.emplace_back("gradient_norm", fmt(rep.gradient_norm));
  m.emplace_back("converged", fmt(rep.converged));
  m.emplace_back("stop_reason", rep.stop_reason);
  m.emplace_back("train_seconds", fmt(rep.wall_seconds));
  m.emplace_back("train_mean", fmt(model.train_mean));
  for (Index i = 0; i < model.spec.hyper.lengthscales.size(); ++i)
    m.emplace_back("ell_" + fmt(i), fmt(model.spec.hyper.lengthscales[i]));
}

Table history_table(const TrainReport& rep) {
  Table t{{"iteration", "value"}, {}};
  for (std::size_t i = 0; i < rep.accepted_values.size(); ++i)
    t.add({fmt(static_cast<Index>(i)), fmt(rep.accepted_values[i])});
  return t;
}

}  // namespace

CommandResult cmd_train(const RunConfig& cfg) {
  const Problem p = make_problem(cfg);
  const KernelSpec spec = cfg.kernel_spec(p.nodes.dim());
  const Split s = split_indices(cfg, p.nodes.size());
  CommandResult r;
  add_problem_metrics(r.metrics, p);
  r.metrics.emplace_back("n_train", fmt(static_cast<Index>(s.train.size())));
  auto [model, rep] = train(p.nodes.select(s.train), gather(p.y, s.train), spec, cfg.solve_config(),
                            cfg.optimizer_options());
  add_train_metrics(r.metrics, model, rep);
  r.tables.emplace_back("train_history", history_table(rep));
  return r;
}

CommandResult cmd_predict(const RunConfig& cfg) {
  const Problem p = make_problem(cfg);
  const KernelSpec spec = cfg.kernel_spec(p.nodes.dim());
  const SolveConfig sc = cfg.solve_config();
  const Split s = split_indices(cfg, p.nodes.size());
  const NodeSet train_nodes = p.nodes.select(s.train);
  const Vector train_y = gather(p.y, s.train);
  CommandResult r;
  add_problem_metrics(r.metrics, p);
  r.metrics.emplace_back("n_train", fmt(static_cast<Index>(s.train.size())));
  r.metrics.emplace_back("n_test", fmt(static_cast<Index>(s.test.size())));
  GPModel model;
  if (cfg.flag("train")) {
    auto [m, rep] = train(train_nodes, train_y, spec, sc, cfg.optimizer_options());
    add_train_metrics(r.metrics, m, rep);
    r.tables.emplace_back("train_history", history_table(rep));
    model = std::move(m);
  } else {
    model.spec = spec;
    model.cfg = sc;
    model.train_nodes = train_nodes;
    model.train_mean = train_y.mean();
    model.train_targets = train_y;
  }
  const std::string mode_name = cfg.str("mode");
  PredictMode mode;
  if (mode_name == "full")
    mode = PredictMode::full;
  else if (mode_name == "reduced")
    mode = PredictMode::reduced;
  else
    throw InvalidArgument("mode must be full or reduced");
  const Matrix test = p.nodes.select(s.test).coords();
  const Vector truth = gather(p.y, s.test);
  const auto t0 = Clock::now();
  const Prediction pred = predict(model, test, mode, cfg.integer("variance_batch"));
  r.metrics.emplace_back("predict_seconds", fmt(seconds_since(t0)));
  r.metrics.emplace_back("prediction_error", fmt(relative_error(truth, pred.mean)));
  Table t{{"index", "mean", "variance", "truth", "mean_raw_scale", "truth_raw_scale"}, {}};
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    const Index j = static_cast<Index>(i);
    t.add({fmt(s.test[i]), fmt(pred.mean[j]), fmt(pred.variance[j]), fmt(truth[j]), fmt(pred.mean[j] * p.target_scale),
           fmt(truth[j] * p.target_scale)});
  }
  r.tables.emplace_back("predictions", std::move(t));
  return r;
}

CommandResult cmd_bench_scaling(const RunConfig& cfg) {
  const Index d = cfg.integer("d");
  const auto seed = static_cast<std::uint64_t>(cfg.integer("data_seed"));
  const Index repeats = cfg.integer("repeats");
  SolveConfig sc = cfg.solve_config();
  CommandResult r;
  Table t{{"sweep", "n", "k", "repeat", "seconds"}, {}};
  auto run = [&](const std::string& sweep, Index n, Index k) {
    const NodeSet nodes(uniform_points(n, d, seed));
    const KernelSpec spec = cfg.kernel_spec(d);
    const Vector y = random_unit_vector(n, seed);
    sc.k = k;
    std::vector<double> times;
    for (Index rep = 0; rep < repeats; ++rep) {
      const auto t0 = Clock::now();
      const Matrix x = back_solve(nodes, y, spec, sc);
      times.push_back(seconds_since(t0));
      if (!x.allFinite()) throw NumericError("non-finite solution in scaling benchmark");
      t.add({sweep, fmt(n), fmt(k), fmt(rep), fmt(times.back())});
    }
    return median(times);
  };
  std::vector<double> xn, yn, xk, yk;
  for (long long n : cfg.integers("sizes")) {
    const double tm = run("n", n, cfg.integer("k"));
    xn.push_back(std::log(static_cast<double>(n) * std::log(static_cast<double>(n))));
    yn.push_back(std::log(tm));
  }
  for (long long k : cfg.integers("ks")) {
    const double tm = run("k", cfg.integer("k_sweep_n"), k);
    xk.push_back(std::log(static_cast<double>(k)));
    yk.push_back(std::log(tm));
  }
  if (xn.size() >= 2) r.metrics.emplace_back("n_slope", fmt(fitted_slope(xn, yn)));
  if (xk.size() >= 2) r.metrics.emplace_back("k_slope", fmt(fitted_slope(xk, yk)));
  r.tables.emplace_back("scaling", std::move(t));
  return r;
}

CommandResult cmd_bench_aggregation(const RunConfig& cfg) {
  const Index n = cfg.integer("n"), d = cfg.integer("d");
  const auto seed = static_cast<std::uint64_t>(cfg.integer("data_seed"));
  const NodeSet nodes(uniform_points(n, d, seed));
  const KernelSpec spec = cfg.kernel_spec(d);
  const SolveConfig sc = cfg.solve_config();
  const Vector y = random_unit_vector(n, seed);
  const bool check = cfg.flag("dense_check") || n <= 8000;
  Matrix xd;
  if (check) xd = dense_solve(nodes, y, spec, sc.noise_variance);
  auto accuracy = [&](const PartitionTree& tree) {
    if (!check) return std::numeric_limits<double>::quiet_NaN();
    return rel_err(back_solve_tree(nodes, tree, y, spec, sc), xd);
  };
  CommandResult r;
  Table t{{"method", "theta", "aggregation_seconds", "solve_error", "depth"}, {}};
  bool theta_independent = true, faster_than_all_mis = true;
  IndexList first_perm;
  double permute_error = 0;
  for (double theta : cfg.reals("thetas")) {
    auto t0 = Clock::now();
    const PartitionTree tp = build_tree(nodes, sc.eta, spec);
    const double tperm = seconds_since(t0);
    if (first_perm.empty()) {
      first_perm = tp.perm;
      permute_error = accuracy(tp);
    } else {
      theta_independent = theta_independent && tp.perm == first_perm;
    }
    t.add({"permute", fmt(theta), fmt(tperm), fmt(permute_error), fmt(tp.depth())});
    for (long long dist : cfg.integers("mis_distances")) {
      t0 = Clock::now();
      const PartitionTree tm = build_tree_mis(nodes, sc.eta, theta, static_cast<int>(dist), spec);
      const double tmis = seconds_since(t0);
      if (dist == 2) faster_than_all_mis = faster_than_all_mis && tperm < tmis;
      t.add({"mis" + fmt(dist), fmt(theta), fmt(tmis), fmt(accuracy(tm)), fmt(tm.depth())});
    }
  }
  r.metrics.emplace_back("n", fmt(n));
  r.metrics.emplace_back("permute_theta_independent", fmt(theta_independent));
  r.metrics.emplace_back("permute_faster_than_mis2", fmt(faster_than_all_mis));
  r.tables.emplace_back("aggregation", std::move(t));
  return r;
}

CommandResult cmd_bench_lowrank(const RunConfig& cfg) {
  const Index n = cfg.integer("n"), d = cfg.integer("d");
  const auto data_seed = static_cast<std::uint64_t>(cfg.integer("data_seed"));
  const NodeSet nodes(uniform_points(n, d, data_seed));
  const KernelSpec spec = cfg.kernel_spec(d);
  const Vector y = random_unit_vector(n, data_seed);
  SolveConfig sc = cfg.solve_config();
  const Matrix xd = dense_solve(nodes, y, spec, sc.noise_variance);
  CommandResult r;
  Table t{{"method", "k", "seed", "solve_error"}, {}};
  bool rsvd_wins = true;
  for (long long k : cfg.integers("ks")) {
    std::map<LowRankMethod, double> med;
    for (LowRankMethod m : {LowRankMethod::rsvd_id, LowRankMethod::nystrom_rand, LowRankMethod::nystrom_qr}) {
      std::vector<double> errs;
      for (std::uint64_t s : seed_list(cfg)) {
        sc.k = k;
        sc.seed = s;
        sc.method = m;
        errs.push_back(rel_err(back_solve(nodes, y, spec, sc), xd));
        t.add({method_name(m), fmt(k), fmt(static_cast<long long>(s)), fmt(errs.back())});
      }
      med[m] = median(errs);
      r.metrics.emplace_back("median_error_" + method_name(m) + "_k" + fmt(k), fmt(med[m]));
    }
    rsvd_wins = rsvd_wins && med[LowRankMethod::rsvd_id] < med[LowRankMethod::nystrom_rand];
  }
  r.metrics.emplace_back("rsvd_below_nystrom_rand", fmt(rsvd_wins));
  r.tables.emplace_back("lowrank", std::move(t));
  return r;
}

CommandResult cmd_rank_probe(const RunConfig& cfg) {
  const Index n = cfg.integer("n"), d = cfg.integer("d"), s1 = cfg.integer("split");
  if (s1 <= 0 || s1 >= n) throw InvalidArgument("split must lie strictly inside (0, n)");
  const std::vector<double> thresholds = {1e-4, 1e-8, 1e-12};
  CommandResult r;
  Table t{{"kernel", "seed", "ordering", "exact_rank", "numerical_rank", "count_1e-4", "count_1e-8", "count_1e-12"}, {}};
  for (const auto& kname : cfg.strings("kernels")) {
    RunConfig kc = cfg;
    kc.set("kernel", kname);
    const KernelSpec spec = kc.kernel_spec(d);
    Index not_worse = 0, seeds = 0;
    bool full_both = true;
    double sum_perm = 0, sum_unperm = 0;
    for (std::uint64_t s : seed_list(cfg)) {
      const NodeSet nodes(uniform_points(n, d, s));
      const IndexList all = iota_list(0, n);
      const IndexList u1 = iota_list(0, s1), u2 = iota_list(s1, n - s1);
      const auto [p1, p2] = permute(nodes, all, s1, spec);
      const RankProbeReport ru = rank_probe(nodes, u1, u2, spec, thresholds);
      const RankProbeReport rp = rank_probe(nodes, p1, p2, spec, thresholds);
      for (const auto& [name, rep] : {std::pair{"unpermuted", &ru}, std::pair{"permuted", &rp}})
        t.add({kname, fmt(static_cast<long long>(s)), name, fmt(rep->exact_rank), fmt(rep->numerical_rank),
               fmt(rep->counts[0]), fmt(rep->counts[1]), fmt(rep->counts[2])});
      ++seeds;
      not_worse += rp.exact_rank <= ru.exact_rank;
      full_both = full_both && rp.exact_rank == std::min(s1, n - s1) && ru.exact_rank == std::min(s1, n - s1);
      sum_perm += static_cast<double>(rp.exact_rank);
      sum_unperm += static_cast<double>(ru.exact_rank);
    }
    r.metrics.emplace_back(kname + "_permuted_not_worse_fraction",
                           fmt(static_cast<double>(not_worse) / static_cast<double>(seeds)));
    r.metrics.emplace_back(kname + "_full_rank_both", fmt(full_both));
    r.metrics.emplace_back(kname + "_mean_rank_permuted", fmt(sum_perm / static_cast<double>(seeds)));
    r.metrics.emplace_back(kname + "_mean_rank_unpermuted", fmt(sum_unperm / static_cast<double>(seeds)));
  }
  r.tables.emplace_back("rank_probe", std::move(t));
  return r;
}

RangeStudy range_study(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec, Index k,
                       Index p, Index draws, std::uint64_t seed) {
  RangeStudy st;
  const Matrix A = eval_block(nodes, I1, I2, spec);
  st.rows = A.rows();
  st.cols = A.cols();
  Eigen::BDCSVD<Matrix> svd(A);
  Vector sv = svd.singularValues();
  if (!sv.allFinite()) sv = Eigen::JacobiSVD<Matrix>(A).singularValues();
  st.sigma_next = sv[k];
  st.mean_bound = expected_range_error(st.rows, st.cols, k, p, st.sigma_next);
  st.threshold = range_error_threshold(st.rows, st.cols, k, p, std::numbers::e,
                                       std::sqrt(2.0 * static_cast<double>(p)), st.sigma_next);
  LowRankOptions opts;
  opts.oversampling = p;
  opts.full_columns = true;
  Index exceed = 0;
  for (Index draw = 0; draw < draws; ++draw) {
    Rng rng = block_stream(seed, 0x4A46EULL, static_cast<std::uint64_t>(draw));
    const Matrix Q = range_finder(nodes, I1, I2, spec, k, rng, opts);
    const double err = (A - Q * (Q.transpose() * A)).norm();
    st.errors.push_back(err);
    exceed += err > st.threshold.threshold;
  }
  st.mean_error = std::accumulate(st.errors.begin(), st.errors.end(), 0.0) / static_cast<double>(draws);
  st.exceed_fraction = static_cast<double>(exceed) / static_cast<double>(draws);
  return st;
}

CommandResult cmd_err_study(const RunConfig& cfg) {
  const Index n = cfg.integer("n"), d = cfg.integer("d"), p = cfg.integer("p");
  const auto data_seed = static_cast<std::uint64_t>(cfg.integer("data_seed"));
  const NodeSet nodes(uniform_points(n, d, data_seed));
  const KernelSpec spec = cfg.kernel_spec(d);
  SolveConfig sc = cfg.solve_config();
  const double beta = cfg.real("beta"), kappa = cfg.real("kappa");
  const PartitionTree tree = build_tree(nodes, sc.eta, spec);
  CommandResult r;

  // Rightmost chain from the root, reversed so the deepest level comes first.
  std::vector<const TreeNode*> chain;
  for (const TreeNode* node = &tree.nodes[0]; !node->is_leaf(); node = &tree.nodes[static_cast<std::size_t>(node->second)])
    chain.push_back(node);
  std::reverse(chain.begin(), chain.end());

  struct LevelLaw {
    Index n2 = 0;
    LogNormalFit fit;
  };
  std::vector<LevelLaw> laws;
  Table lv{{"depth_from_bottom", "n1", "n2", "sigma_next", "mean_bound", "threshold", "failure_prob", "mu", "sigma"}, {}};
  Index n_min = std::numeric_limits<Index>::max();
  for (int leaf : tree.leaves()) n_min = std::min(n_min, tree.nodes[static_cast<std::size_t>(leaf)].size);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const TreeNode& a = tree.nodes[static_cast<std::size_t>(chain[i]->first)];
    const TreeNode& b = tree.nodes[static_cast<std::size_t>(chain[i]->second)];
    const Matrix A = eval_block(nodes, tree.indices(a), tree.indices(b), spec);
    Vector sv = Eigen::BDCSVD<Matrix>(A).singularValues();
    if (!sv.allFinite()) sv = Eigen::JacobiSVD<Matrix>(A).singularValues();
    const Index k = std::min(sc.k, std::min(a.size, b.size) - p);
    const double sigma_next = std::max(sv[k], std::numeric_limits<double>::min());
    const double mean = expected_range_error(a.size, b.size, k, p, sigma_next);
    const RangeThreshold thr = range_error_threshold(a.size, b.size, k, p, std::numbers::e,
                                                     std::sqrt(2.0 * static_cast<double>(p)), sigma_next);
    const LogNormalFit fit = fit_lognormal(mean, thr.threshold, thr.failure_prob);
    laws.push_back({b.size, fit});
    lv.add({fmt(static_cast<Index>(i)), fmt(a.size), fmt(b.size), fmt(sigma_next), fmt(mean), fmt(thr.threshold),
            fmt(thr.failure_prob), fmt(fit.mu), fmt(fit.sigma)});
  }
  const double alpha_leaf = alpha_leaf_estimate(static_cast<double>(n_min), std::sqrt(sc.noise_variance));

  const Vector y = random_unit_vector(n, data_seed);
  const Matrix xd = dense_solve(nodes, y, spec, sc.noise_variance);
  std::vector<double> analytic, empirical;
  Table es{{"seed", "log10_analytic", "log10_empirical"}, {}};
  for (std::uint64_t s : seed_list(cfg)) {
    std::vector<LevelInput> inputs;
    for (std::size_t i = 0; i < laws.size(); ++i) {
      Rng rng = block_stream(s, 0xE44ULL, i);
      std::lognormal_distribution<double> ln(laws[i].fit.mu, laws[i].fit.sigma);
      const double eps_svd = svd_error_bound(std::min(sc.k, laws[i].n2), laws[i].n2, ln(rng));
      inputs.push_back({beta, std::numbers::sqrt2 * eps_svd / (beta * beta)});
    }
    const ErrorBudget budget = hierarchical_error_estimate(inputs, alpha_leaf, kappa, 0.0);
    sc.seed = s;
    const double emp = rel_err(back_solve(nodes, y, spec, sc), xd) * xd.norm() / y.norm();
    analytic.push_back(budget.log10_eps_d0);
    empirical.push_back(std::log10(emp));
    es.add({fmt(static_cast<long long>(s)), fmt(analytic.back()), fmt(empirical.back())});
  }
  const ComparisonReport cmp = empirical_error_vs_bound(analytic, empirical);
  r.metrics.emplace_back("levels", fmt(static_cast<Index>(chain.size())));
  r.metrics.emplace_back("log10_alpha_leaf", fmt(std::log10(alpha_leaf)));
  r.metrics.emplace_back("mean_log10_analytic", fmt(cmp.mean_log10_analytic));
  r.metrics.emplace_back("mean_log10_empirical", fmt(cmp.mean_log10_empirical));
  r.metrics.emplace_back("margin", fmt(cmp.margin));
  r.metrics.emplace_back("dominates", fmt(cmp.dominates));

  const TreeNode& root = tree.nodes[0];
  const RangeStudy rs = range_study(nodes, tree.indices(tree.nodes[static_cast<std::size_t>(root.first)]),
                                    tree.indices(tree.nodes[static_cast<std::size_t>(root.second)]), spec, sc.k, p,
                                    cfg.integer("draws"), static_cast<std::uint64_t>(cfg.integer("seed")));
  r.metrics.emplace_back("range_block_rows", fmt(rs.rows));
  r.metrics.emplace_back("range_block_cols", fmt(rs.cols));
  r.metrics.emplace_back("range_mean_error", fmt(rs.mean_error));
  r.metrics.emplace_back("range_mean_bound", fmt(rs.mean_bound));
  r.metrics.emplace_back("range_threshold", fmt(rs.threshold.threshold));
  r.metrics.emplace_back("range_failure_prob", fmt(rs.threshold.failure_prob));
  r.metrics.emplace_back("range_exceed_fraction", fmt(rs.exceed_fraction));
  Table rd{{"draw", "error"}, {}};
  for (std::size_t i = 0; i < rs.errors.size(); ++i) rd.add({fmt(static_cast<Index>(i)), fmt(rs.errors[i])});

  r.tables.emplace_back("error_levels", std::move(lv));
  r.tables.emplace_back("error_samples", std::move(es));
  r.tables.emplace_back("range_draws", std::move(rd));
  return r;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"solve",         "loglik",           "train",
                                                 "predict",       "bench-scaling",    "bench-aggregation",
                                                 "bench-lowrank", "rank-probe",       "err-study"};
  return names;
}

CommandResult run_command(const std::string& name, const RunConfig& cfg) {
  using Fn = CommandResult (*)(const RunConfig&);
  static const std::map<std::string, Fn> table = {
      {"solve", cmd_solve},
      {"loglik", cmd_loglik},
      {"train", cmd_train},
      {"predict", cmd_predict},
      {"bench-scaling", cmd_bench_scaling},
      {"bench-aggregation", cmd_bench_aggregation},
      {"bench-lowrank", cmd_bench_lowrank},
      {"rank-probe", cmd_rank_probe},
      {"err-study", cmd_err_study},
  };
  const auto it = table.find(name);
  if (it == table.end()) throw InvalidArgument("unknown command: " + name);
  CommandResult result = it->second(cfg);
  const std::filesystem::path out(cfg.str("out"));
  std::filesystem::create_directories(out);
  std::ofstream m(out / "metrics.txt");
  m << "command=" << name << '\n';
  for (const auto& [k, v] : cfg.values()) m << "config." << k << '=' << v << '\n';
  for (const auto& [k, v] : result.metrics) m << k << '=' << v << '\n';
  if (!m) throw InvalidArgument("cannot write metrics in " + out.string());
  for (const auto& [stem, t] : result.tables) t.write_csv((out / (stem + ".csv")).string());
  return result;
}

}  // namespace hmatgp
