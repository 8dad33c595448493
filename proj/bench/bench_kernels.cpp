// Kernel block evaluation (OpenMP vs serial reference) and a hierarchical
// solve timing. Usage: hmatgp_bench [n_block] [n_solve]
#include "hmatgp/commands.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>

using namespace hmatgp;

namespace {

template <class F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  const Index nb = argc > 1 ? std::atoll(argv[1]) : 2000;
  const Index ns = argc > 2 ? std::atoll(argv[2]) : 20000;
  std::printf("threads=%d\n", omp_get_max_threads());

  const NodeSet nodes(uniform_points(2 * nb, 2, 1));
  const IndexList rows = iota_list(0, nb), cols = iota_list(nb, nb);
  for (const char* name : {"se", "exp", "l1"}) {
    const KernelSpec spec = KernelSpec::isotropic(parse_family(name), 0.5);
    Matrix a, b;
    const double tp = best_of(3, [&] { a = eval_block(nodes, rows, cols, spec); });
    const double ts = best_of(3, [&] { b = eval_block_serial(nodes, rows, cols, spec); });
    std::printf("eval_block kernel=%s size=%lldx%lld parallel=%.4fs serial=%.4fs speedup=%.2f max_diff=%.1e\n", name,
                static_cast<long long>(nb), static_cast<long long>(nb), tp, ts, ts / tp, (a - b).cwiseAbs().maxCoeff());
  }

  const NodeSet big(uniform_points(ns, 2, 2));
  const Vector y = Vector::Ones(ns) / std::sqrt(static_cast<double>(ns));
  SolveConfig cfg;
  cfg.k = 20;
  const KernelSpec se = KernelSpec::isotropic(KernelFamily::squared_exponential, 1.0);
  const double tsolve = best_of(1, [&] { (void)back_solve(big, y, se, cfg); });
  std::printf("back_solve n=%lld k=%lld eta=%lld seconds=%.3f\n", static_cast<long long>(ns),
              static_cast<long long>(cfg.k), static_cast<long long>(cfg.eta), tsolve);
}
