// Worst-case tilted risk of the plug-in MLE for a Bernoulli mean as n grows,
// next to the limit-experiment value.

#include <cstdio>

#include "tiltrisk/finite_sample.hpp"

using namespace tiltrisk;

int main() {
  const auto model = ExperimentModel::bernoulli(0.3, 50);
  const auto loss = TiltedLossSpec::treatment(1.0);
  const auto rows = convergence_study(model, {EstimatorName::mle}, loss, 3.0, {50, 200, 1000, 10000}, 40000, {17, 0});
  std::printf("V* = %.6f (sigma = %.4f)\n", rows.front().v_star, model.sigma());
  std::printf("%7s %10s %9s %9s %7s\n", "n", "worst", "stderr", "argmax", "ratio");
  for (const auto& r : rows) {
    std::printf("%7ld %10.6f %9.2e %9.4f %7.4f\n", r.n, r.report.value, r.report.stderr_, r.report.worst_h, r.ratio());
  }
  return 0;
}
