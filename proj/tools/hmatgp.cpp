#include "hmatgp/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical-matrix Gaussian process solver"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, kernel, mode, out, ell;
  long long seed = 0, k = 0, eta = 0, nmax = 0;
  double sigma2 = 0;
  bool dense_check = false;
  std::vector<std::string> sets;

  app.add_option("--config", config_path, "key=value configuration file");
  app.add_option("--seed", seed, "solver seed");
  app.add_option("--k", k, "off-diagonal rank");
  app.add_option("--eta", eta, "leaf size");
  app.add_option("--nmax", nmax, "column-subsampling budget");
  app.add_option("--sigma2", sigma2, "noise variance");
  app.add_option("--kernel", kernel, "se, exp, ard or l1");
  app.add_option("--ell", ell, "lengthscale(s), comma separated");
  app.add_flag("--dense-check", dense_check, "compare against the dense oracle");
  app.add_option("--mode", mode, "prediction mode: full or reduced")->check(CLI::IsMember({"full", "reduced"}));
  app.add_option("--out", out, "output directory");
  app.add_option("--set", sets, "extra key=value overrides");

  for (const auto& name : hmatgp::command_names()) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    hmatgp::RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    auto given = [&](const char* flag) { return app.count(flag) > 0; };
    if (given("--seed")) cfg.set("seed", std::to_string(seed));
    if (given("--k")) cfg.set("k", std::to_string(k));
    if (given("--eta")) cfg.set("eta", std::to_string(eta));
    if (given("--nmax")) cfg.set("nmax", std::to_string(nmax));
    if (given("--sigma2")) cfg.set("sigma2", app.get_option("--sigma2")->as<std::string>());
    if (given("--kernel")) cfg.set("kernel", kernel);
    if (given("--ell")) cfg.set("ell", ell);
    if (dense_check) cfg.set("dense_check", "true");
    if (given("--mode")) cfg.set("mode", mode);
    if (given("--out")) cfg.set("out", out);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw hmatgp::InvalidArgument("--set expects key=value");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    const std::string command = app.get_subcommands().front()->get_name();
    const auto result = hmatgp::run_command(command, cfg);
    for (const auto& [key, value] : result.metrics) std::cout << key << '=' << value << '\n';
    return 0;
  } catch (const hmatgp::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
