#pragma once

// Statistician-versus-nature game for treatment assignment under the tilted
// loss. Nature picks a finitely supported prior over effects, the
// statistician picks a rule of the scalar efficient signal. The solver is a
// double oracle over threshold rules and effect atoms.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include "tiltrisk/error.hpp"
#include "tiltrisk/limit_experiment.hpp"
#include "tiltrisk/stat_core.hpp"
#include "tiltrisk/tilt.hpp"

namespace tiltrisk {

enum class TreatDirection { above, below };

/// Treat iff signal >= threshold (above) or signal <= threshold (below).
/// Infinite thresholds give the always/never rules.
struct ThresholdRule {
  double threshold = 0.0;
  TreatDirection direction = TreatDirection::above;

  bool treats(double signal) const {
    return direction == TreatDirection::above ? signal >= threshold : signal <= threshold;
  }

  static ThresholdRule always_treat() { return {-std::numeric_limits<double>::infinity(), TreatDirection::above}; }
  static ThresholdRule never_treat() { return {std::numeric_limits<double>::infinity(), TreatDirection::above}; }

  bool operator==(const ThresholdRule&) const = default;
};

/// The rule under the reflection effect -> -effect, signal -> -signal with
/// the two actions swapped: 1{s >= t} becomes 1{s > -t}.
inline ThresholdRule mirror(const ThresholdRule& r) {
  return {-r.threshold, r.direction};
}

/// P(treat) when the signal is N(effect, sigma^2).
inline double treat_probability(const ThresholdRule& r, double effect, double sigma) {
  if (r.direction == TreatDirection::above) {
    if (std::isinf(r.threshold)) return r.threshold < 0 ? 1.0 : 0.0;
    return std_normal_cdf((effect - r.threshold) / sigma);
  }
  if (std::isinf(r.threshold)) return r.threshold > 0 ? 1.0 : 0.0;
  return std_normal_cdf((r.threshold - effect) / sigma);
}

/// Tilted risk minus one: expm1(|effect|/lambda) times the probability of the
/// wrong action. Kept separate so that large lambda does not round away.
inline double rule_excess_risk(const ThresholdRule& r, double effect, double lambda, double sigma) {
  require(lambda > 0.0 && sigma > 0.0, ErrorKind::invalid_argument, "lambda and sigma must be positive");
  if (effect == 0.0) return 0.0;
  require(std::abs(effect) / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
          "|effect|/lambda exceeds 700");
  double wrong = 0.0;
  if (effect > 0.0) {
    // complement computed directly to keep the lower tail accurate
    if (r.direction == TreatDirection::above) {
      wrong = std::isinf(r.threshold) ? (r.threshold < 0 ? 0.0 : 1.0)
                                      : std_normal_cdf((r.threshold - effect) / sigma);
    } else {
      wrong = std::isinf(r.threshold) ? (r.threshold > 0 ? 0.0 : 1.0)
                                      : std_normal_cdf((effect - r.threshold) / sigma);
    }
  } else {
    wrong = treat_probability(r, effect, sigma);
  }
  return std::expm1(std::abs(effect) / lambda) * wrong;
}

inline double rule_risk(const ThresholdRule& r, double effect, double lambda, double sigma) {
  return 1.0 + rule_excess_risk(r, effect, lambda, sigma);
}

// ---------------------------------------------------------------------------
// Bayes response

inline constexpr int kSignalGridPoints = 4001;
inline constexpr double kSignalGridHalfWidth = 10.0;  // in units of sigma

struct BayesResponse {
  ThresholdRule rule;
  bool threshold_form = true;
  // populated only when the treat region is not a half-line
  std::vector<double> signal_grid;
  std::vector<bool> treat;

  const ThresholdRule& require_threshold() const {
    require(threshold_form, ErrorKind::non_threshold_optimum,
            "treat region on the signal grid is not a half-line");
    return rule;
  }
};

namespace detail {

/// Effects of the prior atoms along mu_dot.
inline std::vector<double> prior_effects(const DiscretePrior& prior, const LimitSpec& spec) {
  require(prior.dim() == spec.dim(), ErrorKind::invalid_argument, "prior and spec dimensions differ");
  std::vector<double> out;
  out.reserve(prior.size());
  for (const auto& h : prior.support()) out.push_back(spec.effect(h));
  return out;
}

/// log of the unnormalized posterior excess cost of treating and of not
/// treating at signal s. -inf when the corresponding sum is empty.
struct LogCosts {
  double treat;
  double not_treat;
};

inline LogCosts log_costs(double s, const std::vector<double>& effects,
                          const std::vector<double>& weights, double lambda, double sigma) {
  std::vector<double> ex_t, w_t, ex_n, w_n;
  for (std::size_t i = 0; i < effects.size(); ++i) {
    const double d = effects[i];
    if (weights[i] <= 0.0 || d == 0.0) continue;
    const double z = (s - d) / sigma;
    const double e = std::log(weights[i]) - 0.5 * z * z + std::log(std::expm1(std::abs(d) / lambda));
    if (d < 0.0) {
      ex_t.push_back(e);
      w_t.push_back(1.0);
    } else {
      ex_n.push_back(e);
      w_n.push_back(1.0);
    }
  }
  const double ninf = -std::numeric_limits<double>::infinity();
  return {ex_t.empty() ? ninf : log_sum_exp(ex_t, w_t), ex_n.empty() ? ninf : log_sum_exp(ex_n, w_n)};
}

inline bool bayes_treats(const LogCosts& c) { return c.treat <= c.not_treat; }

}  // namespace detail

/// Bayes rule against a prior: treat iff the posterior tilted loss of treating
/// is no larger than that of not treating (ties treat).
inline BayesResponse bayes_response_treatment(const DiscretePrior& prior, const LimitSpec& spec,
                                              double lambda) {
  require(lambda > 0.0, ErrorKind::invalid_argument, "lambda must be positive");
  const double sigma = spec.sigma();
  const auto effects = detail::prior_effects(prior, spec);
  for (double d : effects) {
    require(std::abs(d) / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
            "prior atom effect/lambda exceeds 700");
  }
  const auto& w = prior.weights();

  const double half = kSignalGridHalfWidth * sigma;
  std::vector<double> grid(kSignalGridPoints);
  std::vector<bool> treat(kSignalGridPoints);
  for (int i = 0; i < kSignalGridPoints; ++i) {
    grid[i] = -half + 2.0 * half * i / (kSignalGridPoints - 1);
    treat[i] = detail::bayes_treats(detail::log_costs(grid[i], effects, w, lambda, sigma));
  }
  std::vector<int> switches;
  for (int i = 1; i < kSignalGridPoints; ++i) {
    if (treat[i] != treat[i - 1]) switches.push_back(i);
  }

  BayesResponse out;
  if (switches.empty()) {
    out.rule = treat.front() ? ThresholdRule::always_treat() : ThresholdRule::never_treat();
    return out;
  }
  if (switches.size() > 1) {
    out.threshold_form = false;
    out.signal_grid = std::move(grid);
    out.treat = std::move(treat);
    return out;
  }
  const int k = switches.front();
  auto diff = [&](double s) {
    const auto c = detail::log_costs(s, effects, w, lambda, sigma);
    return c.treat - c.not_treat;
  };
  std::uintmax_t iters = 200;
  const auto root = boost::math::tools::toms748_solve(
      diff, grid[k - 1], grid[k], boost::math::tools::eps_tolerance<double>(50), iters);
  out.rule.threshold = 0.5 * (root.first + root.second);
  out.rule.direction = treat[k] ? TreatDirection::above : TreatDirection::below;
  return out;
}

// ---------------------------------------------------------------------------
// Nature

struct NatureResponse {
  Eigen::VectorXd h;
  double effect = 0.0;
  double risk = 1.0;
};

/// Worst effect for a rule within |effect| <= h_budget, searched on each sign
/// branch.
inline NatureResponse nature_best_response(const ThresholdRule& rule, const LimitSpec& spec,
                                           double lambda, double h_budget) {
  require(h_budget > 0.0 && std::isfinite(h_budget), ErrorKind::invalid_argument,
          "h_budget must be positive");
  require(h_budget / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
          "h_budget/lambda exceeds 700");
  const double sigma = spec.sigma();
  const MaximizeOptions opts{.boundary = BoundaryPolicy::accept};
  const double tol = 1e-10 * std::max(1.0, h_budget);
  const Maximum pos = maximize_1d(
      [&](double d) { return rule_excess_risk(rule, d, lambda, sigma); }, 0.0, h_budget, tol, opts);
  const Maximum neg = maximize_1d(
      [&](double d) { return rule_excess_risk(rule, -d, lambda, sigma); }, 0.0, h_budget, tol, opts);
  NatureResponse out;
  if (neg.value > pos.value) {
    out.effect = -neg.argmax;
    out.risk = 1.0 + neg.value;
  } else {
    out.effect = pos.argmax;
    out.risk = 1.0 + pos.value;
  }
  out.h = spec.h_for_effect(out.effect);
  return out;
}

// ---------------------------------------------------------------------------
// Finite matrix games

/// Mixed equilibrium of a finite zero-sum game where the row player
/// minimizes loss(row, col).
struct MatrixGameSolution {
  Eigen::VectorXd row;
  Eigen::VectorXd col;
  double value = 0.0;
  bool exact = false;  // true when found by support enumeration
};

namespace detail {

inline std::vector<std::vector<int>> subsets(const std::vector<int>& items, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> pick;
  auto rec = [&](auto&& self, std::size_t start) -> void {
    if (static_cast<int>(pick.size()) == k) {
      out.push_back(pick);
      return;
    }
    for (std::size_t i = start; i < items.size(); ++i) {
      pick.push_back(items[i]);
      self(self, i + 1);
      pick.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

/// Solve sum_j A(i, cols_j) x_j = v for i in rows, sum x = 1. Returns false
/// when singular.
inline bool equalize(const Eigen::MatrixXd& a, const std::vector<int>& rows,
                     const std::vector<int>& cols, Eigen::VectorXd& x, double& v) {
  const int k = static_cast<int>(rows.size());
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(k + 1, k + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) sys(i, j) = a(rows[i], cols[j]);
    sys(i, k) = -1.0;
  }
  for (int j = 0; j < k; ++j) sys(k, j) = 1.0;
  rhs(k) = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sys);
  if (!lu.isInvertible()) return false;
  const Eigen::VectorXd sol = lu.solve(rhs);
  const double scale = 1.0 + sys.cwiseAbs().maxCoeff() * sol.cwiseAbs().maxCoeff();
  if (!sol.allFinite() || (sys * sol - rhs).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
  x = sol.head(k);
  v = sol(k);
  return true;
}

inline std::vector<int> top_indices(const Eigen::VectorXd& weights, int limit) {
  std::vector<int> idx(static_cast<std::size_t>(weights.size()));
  for (int i = 0; i < weights.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return weights(a) > weights(b); });
  if (static_cast<int>(idx.size()) > limit) idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

inline constexpr int kFictitiousPlayRounds = 10'000;
inline constexpr int kEnumerationSupportLimit = 8;

/// Fictitious play with averaging, then an exact polish by support
/// enumeration over at most 8 candidate rows and columns.
inline MatrixGameSolution solve_matrix_game(const Eigen::MatrixXd& loss) {
  const int m = static_cast<int>(loss.rows());
  const int n = static_cast<int>(loss.cols());
  require(m > 0 && n > 0 && loss.allFinite(), ErrorKind::invalid_argument, "matrix game is empty or non-finite");

  Eigen::VectorXd row_counts = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd col_counts = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd row_payoff = Eigen::VectorXd::Zero(m);  // cumulative loss of each row
  Eigen::VectorXd col_payoff = Eigen::VectorXd::Zero(n);
  int r = 0;
  int c = 0;
  loss.row(0).maxCoeff(&c);
  for (int t = 0; t < kFictitiousPlayRounds; ++t) {
    row_counts(r) += 1.0;
    col_counts(c) += 1.0;
    row_payoff += loss.col(c);
    col_payoff += loss.row(r).transpose();
    row_payoff.minCoeff(&r);
    col_payoff.maxCoeff(&c);
  }
  MatrixGameSolution fp;
  fp.row = row_counts / row_counts.sum();
  fp.col = col_counts / col_counts.sum();
  fp.value = 0.5 * ((loss * fp.col).minCoeff() + (fp.row.transpose() * loss).maxCoeff());

  const std::vector<int> rows = detail::top_indices(fp.row + 1e-9 * Eigen::VectorXd::Ones(m), kEnumerationSupportLimit);
  const std::vector<int> cols = detail::top_indices(fp.col + 1e-9 * Eigen::VectorXd::Ones(n), kEnumerationSupportLimit);
  const int kmax = static_cast<int>(std::min(rows.size(), cols.size()));
  for (int k = 1; k <= kmax; ++k) {
    const auto row_sets = detail::subsets(rows, k);
    const auto col_sets = detail::subsets(cols, k);
    for (const auto& rs : row_sets) {
      for (const auto& cs : col_sets) {
        Eigen::VectorXd q, p;
        double vq = 0.0, vp = 0.0;
        if (!detail::equalize(loss, rs, cs, q, vq)) continue;
        if (q.minCoeff() < -1e-12) continue;
        const Eigen::MatrixXd lt = loss.transpose();
        if (!detail::equalize(lt, cs, rs, p, vp)) continue;
        if (p.minCoeff() < -1e-12) continue;
        const double slack = 1e-10 * std::max(1.0, std::abs(vq));
        if (std::abs(vp - vq) > slack) continue;
        Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd row = Eigen::VectorXd::Zero(m);
        for (int j = 0; j < k; ++j) {
          col(cs[j]) = std::max(0.0, q(j));
          row(rs[j]) = std::max(0.0, p(j));
        }
        col /= col.sum();
        row /= row.sum();
        // best-response conditions against the whole matrix
        if ((loss * col).minCoeff() < vq - slack) continue;
        if ((row.transpose() * loss).maxCoeff() > vq + slack) continue;
        return {row, col, vq, true};
      }
    }
  }
  return fp;
}

// ---------------------------------------------------------------------------
// Double oracle

struct GameIterate {
  double upper_value;
  double lower_value;
  std::size_t rules;
  std::size_t atoms;
};

struct GameSolution {
  DiscretePrior prior = DiscretePrior::scalar({0.0}, {1.0});
  ThresholdRule rule;
  double upper_value = 0.0;
  double lower_value = 0.0;
  double gap = 0.0;
  int iterations = 0;
  std::vector<GameIterate> history;
};

/// Thrown when the double oracle hits max_iters; carries the last iterate.
class GameNotConverged : public Error {
 public:
  GameNotConverged(std::string what, GameSolution partial)
      : Error(ErrorKind::did_not_converge, std::move(what)), partial_(std::move(partial)) {}
  const GameSolution& partial() const noexcept { return partial_; }

 private:
  GameSolution partial_;
};

inline constexpr double kAtomDedupTol = 1e-6;

namespace detail {

inline DiscretePrior prior_from_effects(const LimitSpec& spec, const std::vector<double>& effects,
                                        const Eigen::VectorXd& weights) {
  std::vector<Eigen::VectorXd> atoms;
  std::vector<double> w;
  double total = 0.0;
  for (std::size_t i = 0; i < effects.size(); ++i) {
    if (weights(static_cast<int>(i)) <= 1e-14) continue;
    atoms.push_back(spec.h_for_effect(effects[i]));
    w.push_back(weights(static_cast<int>(i)));
    total += w.back();
  }
  for (double& x : w) x /= total;
  // absorb rounding so the sum check holds exactly
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) s += w[i];
  w.back() = 1.0 - s;
  return DiscretePrior(std::move(atoms), std::move(w));
}

inline bool add_atom(std::vector<double>& effects, double d) {
  for (double e : effects) {
    if (std::abs(e - d) < kAtomDedupTol) return false;
  }
  effects.push_back(d);
  return true;
}

inline bool same_rule(const ThresholdRule& a, const ThresholdRule& b) {
  if (a.direction != b.direction) return false;
  if (std::isinf(a.threshold) || std::isinf(b.threshold)) return a.threshold == b.threshold;
  return std::abs(a.threshold - b.threshold) < kAtomDedupTol;
}

inline bool add_rule(std::vector<ThresholdRule>& rules, const ThresholdRule& r) {
  for (const auto& x : rules) {
    if (same_rule(x, r)) return false;
  }
  rules.push_back(r);
  return true;
}

}  // namespace detail

/// Double oracle: alternate Bayes responses and nature's best responses,
/// adding each new rule with its mirror and each new effect with -effect, and
/// re-solve the restricted game over the current rules and atoms. Nature's
/// restricted solution is symmetrized, which is optimal because both strategy
/// sets are closed under the reflection.
inline GameSolution solve_treatment_game(const LimitSpec& spec, double lambda, double h_budget,
                                         int max_iters = 50, double tol = 1e-4) {
  require(lambda > 0.0, ErrorKind::invalid_argument, "lambda must be positive");
  require(max_iters > 0 && tol > 0.0, ErrorKind::invalid_argument, "max_iters and tol must be positive");
  const double sigma = spec.sigma();

  std::vector<double> effects{0.0};
  std::vector<ThresholdRule> rules;
  Eigen::VectorXd nature = Eigen::VectorXd::Ones(1);

  GameSolution best;
  best.upper_value = std::numeric_limits<double>::infinity();
  best.lower_value = -std::numeric_limits<double>::infinity();
  bool have_lower = false;

  for (int it = 1; it <= max_iters; ++it) {
    const DiscretePrior prior = detail::prior_from_effects(spec, effects, nature);
    const ThresholdRule rule = bayes_response_treatment(prior, spec, lambda).require_threshold();

    // lower bound: the Bayes risk of the Bayes rule against this prior
    double lower = 0.0;
    for (std::size_t i = 0; i < prior.size(); ++i) {
      lower += prior.weights()[i] * rule_risk(rule, spec.effect(prior.support()[i]), lambda, sigma);
    }
    if (!have_lower || lower > best.lower_value) {
      best.lower_value = lower;
      best.prior = prior;
      have_lower = true;
    }

    const NatureResponse worst = nature_best_response(rule, spec, lambda, h_budget);
    if (worst.risk < best.upper_value) {
      best.upper_value = worst.risk;
      best.rule = rule;
    }
    best.gap = std::max(0.0, best.upper_value - best.lower_value);
    best.iterations = it;
    best.history.push_back({best.upper_value, best.lower_value, rules.size(), effects.size()});
    if (best.gap <= tol) return best;

    detail::add_rule(rules, rule);
    detail::add_rule(rules, mirror(rule));
    detail::add_atom(effects, worst.effect);
    detail::add_atom(effects, -worst.effect);

    Eigen::MatrixXd loss(static_cast<int>(rules.size()), static_cast<int>(effects.size()));
    for (std::size_t r = 0; r < rules.size(); ++r) {
      for (std::size_t a = 0; a < effects.size(); ++a) {
        loss(static_cast<int>(r), static_cast<int>(a)) = rule_risk(rules[r], effects[a], lambda, sigma);
      }
    }
    const MatrixGameSolution restricted = solve_matrix_game(loss);
    nature = restricted.col;
    Eigen::VectorXd sym = nature;
    for (std::size_t a = 0; a < effects.size(); ++a) {
      for (std::size_t b = 0; b < effects.size(); ++b) {
        if (std::abs(effects[b] + effects[a]) < kAtomDedupTol) {
          sym(static_cast<int>(a)) = 0.5 * (nature(static_cast<int>(a)) + nature(static_cast<int>(b)));
          break;
        }
      }
    }
    nature = sym / sym.sum();
  }
  throw GameNotConverged("double oracle stopped after " + std::to_string(max_iters) +
                             " iterations with gap " + std::to_string(best.gap),
                         best);
}

// ---------------------------------------------------------------------------
// Saddle-point verification

struct SaddlePointReport {
  bool bayes_ok = false;
  double bayes_violation = 0.0;  // worst posterior gain from flipping the action
  double bayes_violation_at = 0.0;
  bool equalizer_ok = false;
  double equalizer_violation = 0.0;  // max risk minus the smallest atom risk
  double max_risk = 0.0;
  double max_risk_effect = 0.0;

  bool passed() const noexcept { return bayes_ok && equalizer_ok; }
};

/// Checks (a) that the rule is a Bayes response to the prior on the signal
/// grid and (b) that every atom of the prior attains the rule's maximal risk
/// over |effect| <= h_budget.
inline SaddlePointReport verify_saddle_point(const ThresholdRule& rule, const DiscretePrior& prior,
                                             const LimitSpec& spec, double lambda, double tol,
                                             std::optional<double> h_budget = std::nullopt) {
  require(lambda > 0.0 && tol > 0.0, ErrorKind::invalid_argument, "lambda and tol must be positive");
  const double sigma = spec.sigma();
  const auto effects = detail::prior_effects(prior, spec);
  const auto& w = prior.weights();
  SaddlePointReport rep;

  // (a) normalized posterior tilted losses of the two actions
  const double half = kSignalGridHalfWidth * sigma;
  for (int i = 0; i < kSignalGridPoints; ++i) {
    const double s = -half + 2.0 * half * i / (kSignalGridPoints - 1);
    std::vector<double> logp(effects.size());
    for (std::size_t j = 0; j < effects.size(); ++j) {
      const double z = (s - effects[j]) / sigma;
      logp[j] = w[j] > 0.0 ? std::log(w[j]) - 0.5 * z * z : -std::numeric_limits<double>::infinity();
    }
    const double top = *std::max_element(logp.begin(), logp.end());
    double norm = 0.0, treat_loss = 0.0, keep_loss = 0.0;
    for (std::size_t j = 0; j < effects.size(); ++j) {
      const double post = std::exp(logp[j] - top);
      norm += post;
      const double wrong = std::expm1(std::abs(effects[j]) / lambda);
      treat_loss += post * (1.0 + (effects[j] < 0.0 ? wrong : 0.0));
      keep_loss += post * (1.0 + (effects[j] > 0.0 ? wrong : 0.0));
    }
    const double gain = rule.treats(s) ? (treat_loss - keep_loss) / norm : (keep_loss - treat_loss) / norm;
    if (gain > rep.bayes_violation) {
      rep.bayes_violation = gain;
      rep.bayes_violation_at = s;
    }
  }
  rep.bayes_ok = rep.bayes_violation <= tol;

  // (b) equalizer over the effect range
  double largest = 0.0;
  for (double d : effects) largest = std::max(largest, std::abs(d));
  const double budget = h_budget.value_or(std::min(std::max(10.0 * lambda * sigma, 2.0 * largest), kMaxTiltExponent * lambda));
  const NatureResponse worst = nature_best_response(rule, spec, lambda, budget);
  rep.max_risk = worst.risk;
  rep.max_risk_effect = worst.effect;
  double smallest = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < effects.size(); ++j) {
    if (w[j] > 0.0) smallest = std::min(smallest, rule_risk(rule, effects[j], lambda, sigma));
  }
  rep.equalizer_violation = std::max(0.0, worst.risk - smallest);
  rep.equalizer_ok = rep.equalizer_violation <= tol;
  return rep;
}

}  // namespace tiltrisk
