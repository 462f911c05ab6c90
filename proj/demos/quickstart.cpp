// Fit a vine copula to a charging log, generate a synthetic log of the
// same size as the test split and score it.
//
//   quickstart sessions.csv

#include "evdep/metrics.hpp"
#include "evdep/vine.hpp"

#include <cstdio>

using namespace evdep;

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: quickstart sessions.csv\n");
    return 2;
  }
  CsvSchema schema;
  schema.duration = "duration";
  const auto split = chronological_split(load_csv(argv[1], schema).dataset);

  const VineModel vine = fit_vine(pseudo_observations(split.train));
  for (const auto* e : {&vine.tree1[0], &vine.tree1[1], &vine.tree2}) {
    std::printf("%-16s %-16s", feature_name(e->first), feature_name(e->second));
    std::printf(" %-16s %-9s theta=%.4f\n", e->given < 0 ? "" : feature_name(e->given), to_string(e->copula.family),
                e->copula.theta);
  }

  const Dataset synthetic = from_uniforms(vine_sample(vine, split.test.size(), 1), fit_marginals(split.train));
  const MetricsReport r = evaluate_all(split.train, split.test, synthetic, MetricsConfig{}, 1);
  std::printf("nll %.4f  tau_diff %.4f  rho1 %.4f  rho2 %.4f  mae_lt %.4f  mae_ut %.4f  mae_load %.4f\n", r.nll,
              r.tau_diff, r.rho1, r.rho2, r.mae_lt, r.mae_ut, r.mae_load);
  return 0;
}
