#pragma once

#include "hmatgp/dataset.hpp"
#include "hmatgp/diagnostics.hpp"
#include "hmatgp/gp.hpp"

#include <map>

namespace hmatgp {

/// Flat key=value configuration. Every key has a default, unknown keys are rejected,
/// and the full map is echoed into each metrics file.
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key) const;
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<long long> integers(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key) const;

  SolveConfig solve_config() const;
  KernelSpec kernel_spec(Index dim) const;
  OptimizerOptions optimizer_options() const;

 private:
  std::map<std::string, std::string> values_;
};

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
  void write_csv(const std::string& path) const;
};

using Metrics = std::vector<std::pair<std::string, std::string>>;

struct CommandResult {
  Metrics metrics;
  std::vector<std::pair<std::string, Table>> tables;  ///< file stem, table

  std::string metric(const std::string& key) const;
};

/// Runs a named command and writes metrics.txt plus one CSV per table into cfg "out".
CommandResult run_command(const std::string& name, const RunConfig& cfg);
const std::vector<std::string>& command_names();

CommandResult cmd_solve(const RunConfig& cfg);
CommandResult cmd_loglik(const RunConfig& cfg);
CommandResult cmd_train(const RunConfig& cfg);
CommandResult cmd_predict(const RunConfig& cfg);
CommandResult cmd_bench_scaling(const RunConfig& cfg);
CommandResult cmd_bench_aggregation(const RunConfig& cfg);
CommandResult cmd_bench_lowrank(const RunConfig& cfg);
CommandResult cmd_rank_probe(const RunConfig& cfg);
CommandResult cmd_err_study(const RunConfig& cfg);

/// Least-squares slope of y against x.
double fitted_slope(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> v);

/// Range-finder draws on the top-level off-diagonal block against the mean and tail bounds.
struct RangeStudy {
  Index rows = 0;
  Index cols = 0;
  double sigma_next = 0.0;
  double mean_bound = 0.0;
  RangeThreshold threshold;
  std::vector<double> errors;
  double mean_error = 0.0;
  double exceed_fraction = 0.0;
};
RangeStudy range_study(const NodeSet& nodes, IndexSpan I1, IndexSpan I2, const KernelSpec& spec, Index k,
                       Index p, Index draws, std::uint64_t seed);

}  // namespace hmatgp
