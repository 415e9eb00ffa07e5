// Least favorable prior and minimax threshold for the Gaussian treatment
// problem, by closed form and by the double oracle.

#include <cstdio>

#include "tiltrisk/game_engine.hpp"
#include "tiltrisk/limit_experiment.hpp"

using namespace tiltrisk;

int main() {
  const LimitSpec spec = LimitSpec::scalar(1.0);
  std::printf("%8s %12s %14s %14s %6s\n", "lambda", "delta*", "V* closed", "V* game", "iters");
  for (double lambda : {0.5, 1.0, 2.0, 5.0, 20.0}) {
    const LimitValue closed = treatment_minimax_value(spec, lambda);
    const GameSolution game = solve_treatment_game(spec, lambda, 10.0);
    std::printf("%8.2f %12.6f %14.10f %14.10f %6d\n", lambda, *closed.delta_star, closed.value,
                game.upper_value, game.iterations);
  }
  return 0;
}
