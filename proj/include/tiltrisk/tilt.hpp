#pragma once

// Exponentially tilted decision criteria: the tilted loss e^{l/lambda}, the
// Donsker-Varadhan value, Bayes tilted risk, phi-divergence conjugate risk,
// smooth-ambiguity risk and geometric mixture likelihoods.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tiltrisk/error.hpp"
#include "tiltrisk/stat_core.hpp"

namespace tiltrisk {

/// Largest admissible loss/lambda before e^{loss/lambda} is refused.
inline constexpr double kMaxTiltExponent = 700.0;

enum class LossKind { estimation, treatment, linex };

inline std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::estimation: return "estimation";
    case LossKind::treatment: return "treatment";
    case LossKind::linex: return "linex";
  }
  return "?";
}

/// Loss family plus the tilt parameter. Estimation uses min(z^2, bound_c);
/// trunc_k caps any loss at K; linex_m is the linex truncation level.
struct TiltedLossSpec {
  LossKind kind = LossKind::estimation;
  double lambda = 1.0;
  std::optional<double> bound_c;
  std::optional<double> trunc_k;
  std::optional<double> linex_m;

  void validate() const {
    require(lambda > 0.0 && std::isfinite(lambda), ErrorKind::invalid_argument,
            "lambda must be positive and finite");
    auto check_level = [&](const std::optional<double>& level, const char* name) {
      if (!level) return;
      require(*level > 0.0 && std::isfinite(*level), ErrorKind::invalid_argument,
              std::string(name) + " must be positive");
      require(*level / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
              std::string(name) + "/lambda exceeds " + std::to_string(kMaxTiltExponent));
    };
    check_level(bound_c, "bound_c");
    check_level(trunc_k, "trunc_k");
    check_level(linex_m, "linex_m");
    if (kind == LossKind::estimation) {
      require(bound_c.has_value(), ErrorKind::invalid_argument, "estimation loss needs bound_c");
    }
    if (kind == LossKind::linex) {
      require(linex_m.has_value(), ErrorKind::invalid_argument, "linex loss needs linex_m");
    }
  }

  static TiltedLossSpec estimation(double lambda, double bound_c = 25.0) {
    TiltedLossSpec s{LossKind::estimation, lambda, bound_c, std::nullopt, std::nullopt};
    s.validate();
    return s;
  }
  static TiltedLossSpec treatment(double lambda, std::optional<double> trunc_k = std::nullopt) {
    TiltedLossSpec s{LossKind::treatment, lambda, std::nullopt, trunc_k, std::nullopt};
    s.validate();
    return s;
  }
  static TiltedLossSpec linex(double lambda, double linex_m) {
    TiltedLossSpec s{LossKind::linex, lambda, std::nullopt, std::nullopt, linex_m};
    s.validate();
    return s;
  }
};

/// Finitely supported prior over local parameters h in R^d.
class DiscretePrior {
 public:
  DiscretePrior(std::vector<Eigen::VectorXd> support, std::vector<double> weights)
      : support_(std::move(support)), weights_(std::move(weights)) {
    require(!support_.empty(), ErrorKind::invalid_argument, "prior needs at least one atom");
    require(support_.size() == weights_.size(), ErrorKind::invalid_argument,
            "prior support and weights differ in length");
    const auto dim = support_.front().size();
    double total = 0.0;
    for (std::size_t i = 0; i < support_.size(); ++i) {
      require(support_[i].size() == dim && dim > 0, ErrorKind::invalid_argument,
              "prior atoms must share a positive dimension");
      require(support_[i].allFinite(), ErrorKind::invalid_argument, "prior atom is not finite");
      require(weights_[i] >= 0.0 && std::isfinite(weights_[i]), ErrorKind::invalid_argument,
              "prior weights must be nonnegative");
      total += weights_[i];
      for (std::size_t j = 0; j < i; ++j) {
        require(support_[i] != support_[j], ErrorKind::invalid_argument,
                "prior support points must be distinct");
      }
    }
    require(std::abs(total - 1.0) <= 1e-12, ErrorKind::invalid_argument,
            "prior weights must sum to one");
  }

  static DiscretePrior point_mass(const Eigen::VectorXd& h) { return DiscretePrior({h}, {1.0}); }

  static DiscretePrior symmetric_two_point(const Eigen::VectorXd& h) {
    return DiscretePrior({-h, h}, {0.5, 0.5});
  }

  /// One-dimensional convenience constructor.
  static DiscretePrior scalar(const std::vector<double>& atoms, const std::vector<double>& weights) {
    std::vector<Eigen::VectorXd> support;
    support.reserve(atoms.size());
    for (double a : atoms) support.push_back(Eigen::VectorXd::Constant(1, a));
    return DiscretePrior(std::move(support), weights);
  }

  std::size_t size() const noexcept { return support_.size(); }
  int dim() const noexcept { return static_cast<int>(support_.front().size()); }
  const std::vector<Eigen::VectorXd>& support() const noexcept { return support_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

 private:
  std::vector<Eigen::VectorXd> support_;
  std::vector<double> weights_;
};

enum class PhiDivergence { kl, neyman_chi2 };

// ---------------------------------------------------------------------------

/// e^{loss/lambda}; refuses exponents above 700.
inline double tilted_value(double loss, double lambda) {
  require(lambda > 0.0, ErrorKind::invalid_argument, "lambda must be positive");
  require(std::isfinite(loss), ErrorKind::invalid_argument, "loss must be finite");
  require(loss / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
          "loss/lambda = " + std::to_string(loss / lambda) + " exceeds 700");
  return std::exp(loss / lambda);
}

namespace detail {

inline void check_probability_vector(std::span<const double> weights) {
  require(!weights.empty(), ErrorKind::invalid_argument, "weights are empty");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), ErrorKind::invalid_argument,
            "weights must be nonnegative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-12, ErrorKind::invalid_argument, "weights must sum to one");
}

/// log sum_i w_i e^{a_i}, ignoring zero-weight terms.
inline double log_sum_exp(std::span<const double> exponents, std::span<const double> weights) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < exponents.size(); ++i) {
    if (weights[i] > 0.0) top = std::max(top, exponents[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < exponents.size(); ++i) {
    if (weights[i] > 0.0) sum += weights[i] * std::exp(exponents[i] - top);
  }
  return top + std::log(sum);
}

}  // namespace detail

/// Donsker-Varadhan value -lambda ln sum_i w_i e^{-u_i/lambda} of utilities u
/// under reference weights w.
inline double dv_criterion(std::span<const double> utilities, std::span<const double> weights,
                           double lambda) {
  require(lambda > 0.0, ErrorKind::invalid_argument, "lambda must be positive");
  require(utilities.size() == weights.size(), ErrorKind::invalid_argument,
          "utilities and weights differ in length");
  detail::check_probability_vector(weights);
  std::vector<double> exponents(utilities.size());
  for (std::size_t i = 0; i < utilities.size(); ++i) {
    require(std::isfinite(utilities[i]), ErrorKind::invalid_argument, "utility is not finite");
    require(std::abs(utilities[i]) / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
            "|u|/lambda exceeds 700");
    exponents[i] = -utilities[i] / lambda;
  }
  return -lambda * detail::log_sum_exp(exponents, weights);
}

/// Bayes tilted risk sum_i pi_i R(h_i); risk_at maps an atom to its tilted risk.
template <class RiskAt>
double bayes_tilted_risk(const DiscretePrior& prior, RiskAt&& risk_at) {
  double total = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const double r = risk_at(prior.support()[i]);
    require(std::isfinite(r), ErrorKind::invalid_argument, "risk_at returned a non-finite value");
    total += prior.weights()[i] * r;
  }
  return total;
}

/// Convex conjugate phi*(y) = sup_{x >= 0} {x y - phi(x)}.
inline double phi_conjugate(PhiDivergence div, double y) {
  require(std::isfinite(y), ErrorKind::invalid_argument, "phi_conjugate needs finite y");
  switch (div) {
    case PhiDivergence::kl:
      require(y <= kMaxTiltExponent, ErrorKind::overflow_guard, "KL conjugate exponent exceeds 700");
      return std::exp(y - 1.0);
    case PhiDivergence::neyman_chi2:
      // phi(x) = (x-1)^2 on x >= 0; the unconstrained maximizer 1 + y/2 hits 0 at y = -2
      return y >= -2.0 ? y + 0.25 * y * y : -1.0;
  }
  return 0.0;
}

/// Loss draws for one prior atom: values with their probability weights.
struct LossSample {
  std::vector<double> losses;
  std::vector<double> weights;
};

/// lambda * sup_eta { eta - sum_j pi_j E_j[phi*(eta + l/lambda)] } for a fixed
/// prior, with the sup over eta taken on eta_bracket. For KL this collapses to
/// -lambda ln sum_j pi_j E_j[e^{l/lambda}].
template <class LossSamplesAt>
double phi_variational_risk(PhiDivergence div, const DiscretePrior& prior,
                            LossSamplesAt&& loss_samples_at, double lambda,
                            std::pair<double, double> eta_bracket) {
  require(lambda > 0.0, ErrorKind::invalid_argument, "lambda must be positive");
  std::vector<LossSample> samples;
  samples.reserve(prior.size());
  for (const auto& h : prior.support()) {
    LossSample s = loss_samples_at(h);
    require(s.losses.size() == s.weights.size(), ErrorKind::invalid_argument,
            "loss sample and weights differ in length");
    detail::check_probability_vector(s.weights);
    samples.push_back(std::move(s));
  }
  auto objective = [&](double eta) {
    double expected = 0.0;
    for (std::size_t j = 0; j < samples.size(); ++j) {
      double inner = 0.0;
      for (std::size_t k = 0; k < samples[j].losses.size(); ++k) {
        inner += samples[j].weights[k] * phi_conjugate(div, eta + samples[j].losses[k] / lambda);
      }
      expected += prior.weights()[j] * inner;
    }
    return eta - expected;
  };
  const Maximum best = maximize_1d(objective, eta_bracket.first, eta_bracket.second, 1e-12);
  return lambda * best.value;
}

/// Atom-wise mixture sum_j rho_j pi_j, merging identical atoms.
inline DiscretePrior effective_prior(std::span<const DiscretePrior> priors,
                                     std::span<const double> hyper_weights) {
  require(priors.size() == hyper_weights.size() && !priors.empty(), ErrorKind::invalid_argument,
          "hyperprior weights must match the prior list");
  detail::check_probability_vector(hyper_weights);
  std::vector<Eigen::VectorXd> atoms;
  std::vector<double> weights;
  for (std::size_t j = 0; j < priors.size(); ++j) {
    for (std::size_t k = 0; k < priors[j].size(); ++k) {
      const auto& h = priors[j].support()[k];
      const double w = hyper_weights[j] * priors[j].weights()[k];
      auto it = std::find(atoms.begin(), atoms.end(), h);
      if (it == atoms.end()) {
        atoms.push_back(h);
        weights.push_back(w);
      } else {
        weights[static_cast<std::size_t>(it - atoms.begin())] += w;
      }
    }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w /= total;
  return DiscretePrior(std::move(atoms), std::move(weights));
}

/// Smooth-ambiguity value -sum_j rho_j (sum_i pi_j(h_i) R(h_i))^{lambda/xi}.
template <class RiskAt>
double smooth_ambiguity_risk(std::span<const DiscretePrior> priors,
                             std::span<const double> hyper_weights, RiskAt&& risk_at,
                             double lambda, double xi) {
  require(lambda > 0.0 && xi > 0.0, ErrorKind::invalid_argument, "lambda and xi must be positive");
  require(priors.size() == hyper_weights.size() && !priors.empty(), ErrorKind::invalid_argument,
          "hyperprior weights must match the prior list");
  detail::check_probability_vector(hyper_weights);
  const double power = lambda / xi;
  double total = 0.0;
  for (std::size_t j = 0; j < priors.size(); ++j) {
    const double inner = bayes_tilted_risk(priors[j], risk_at);
    require(inner > 0.0, ErrorKind::invalid_argument, "inner tilted risk must be positive");
    if (power == 1.0) {
      total += hyper_weights[j] * inner;
      continue;
    }
    const double log_term = power * std::log(inner);
    require(log_term <= kMaxTiltExponent, ErrorKind::overflow_guard,
            "(inner risk)^{lambda/xi} overflows");
    total += hyper_weights[j] * std::exp(log_term);
  }
  return -total;
}

// ---------------------------------------------------------------------------
// Geometric mixtures p1^alpha p2^(1-alpha)

/// Unnormalized log density alpha log p1 + (1 - alpha) log p2.
inline double geometric_mixture_logpdf(double logp1, double logp2, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::invalid_argument, "alpha must lie in [0,1]");
  if (alpha == 1.0) return logp1;
  if (alpha == 0.0) return logp2;
  return alpha * logp1 + (1.0 - alpha) * logp2;
}

/// log Z for a discrete outcome space, Z = sum_y p1(y)^alpha p2(y)^(1-alpha).
inline double geometric_mixture_log_normalizer(std::span<const double> logp1,
                                               std::span<const double> logp2, double alpha) {
  require(logp1.size() == logp2.size() && !logp1.empty(), ErrorKind::invalid_argument,
          "outcome log densities differ in length");
  std::vector<double> exps(logp1.size());
  const std::vector<double> ones(logp1.size(), 1.0);
  for (std::size_t i = 0; i < logp1.size(); ++i) {
    exps[i] = geometric_mixture_logpdf(logp1[i], logp2[i], alpha);
  }
  return detail::log_sum_exp(exps, ones);
}

/// log Z for a continuous outcome on [lo, hi] by composite Gauss-Legendre.
template <class LogP1, class LogP2>
double geometric_mixture_log_normalizer(LogP1&& logp1, LogP2&& logp2, double alpha, double lo,
                                        double hi, int panels = 64) {
  require(lo < hi && std::isfinite(lo) && std::isfinite(hi), ErrorKind::invalid_argument,
          "normalizer range must be finite");
  const QuadratureRule& gl = default_legendre_rule();
  const double width = (hi - lo) / panels;
  std::vector<double> exps;
  std::vector<double> weights;
  exps.reserve(static_cast<std::size_t>(panels * gl.order()));
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * width;
    for (int i = 0; i < gl.order(); ++i) {
      const double y = mid + 0.5 * width * gl.nodes[i];
      exps.push_back(geometric_mixture_logpdf(logp1(y), logp2(y), alpha));
      weights.push_back(0.5 * width * gl.weights[i]);
    }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w /= total;
  return detail::log_sum_exp(exps, weights) + std::log(total);
}

/// Normalized variant: log(p1^alpha p2^(1-alpha) / Z).
inline double geometric_mixture_logpdf_normalized(double logp1, double logp2, double alpha,
                                                  double log_normalizer) {
  return geometric_mixture_logpdf(logp1, logp2, alpha) - log_normalizer;
}

}  // namespace tiltrisk
