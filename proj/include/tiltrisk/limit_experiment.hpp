#pragma once

// Optimal rules and minimax values in the Gaussian limit experiment
// x ~ N(I^{-1/2} h, I). Everything reduces to the scalar efficient signal
// s = mu_dot' I^{-1/2} x ~ N(mu_dot' h, sigma^2), sigma^2 = mu_dot' I^{-1} mu_dot.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include "tiltrisk/error.hpp"
#include "tiltrisk/stat_core.hpp"
#include "tiltrisk/tilt.hpp"

namespace tiltrisk {

class LimitSpec {
 public:
  LimitSpec(SpdMatrix info, Eigen::VectorXd mu_dot)
      : info_(std::move(info)), mu_dot_(std::move(mu_dot)) {
    require(mu_dot_.size() == info_.dim(), ErrorKind::invalid_argument,
            "mu_dot and information matrix dimensions differ");
    require(mu_dot_.allFinite() && mu_dot_.norm() > 0.0, ErrorKind::invalid_argument,
            "mu_dot must be finite and nonzero");
    info_inv_mu_dot_ = info_.solve(mu_dot_);
    sigma_ = std::sqrt(mu_dot_.dot(info_inv_mu_dot_));
    signal_row_ = info_.inverse_sqrt() * mu_dot_;
  }

  /// One-dimensional experiment with I = 1/sigma^2 and mu_dot = 1.
  static LimitSpec scalar(double sigma) {
    require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::invalid_argument,
            "sigma must be positive");
    return LimitSpec(SpdMatrix::scalar(1.0 / (sigma * sigma)), Eigen::VectorXd::Ones(1));
  }

  int dim() const noexcept { return info_.dim(); }
  const SpdMatrix& info() const noexcept { return info_; }
  const Eigen::VectorXd& mu_dot() const noexcept { return mu_dot_; }
  double sigma() const noexcept { return sigma_; }

  /// Efficient signal mu_dot' I^{-1/2} x.
  double signal(const Eigen::VectorXd& x) const {
    require(x.size() == dim(), ErrorKind::invalid_argument, "signal dimension mismatch");
    return signal_row_.dot(x);
  }

  double effect(const Eigen::VectorXd& h) const { return mu_dot_.dot(h); }

  /// The local parameter (delta / sigma^2) I^{-1} mu_dot, whose effect is delta.
  Eigen::VectorXd h_for_effect(double delta) const {
    return (delta / (sigma_ * sigma_)) * info_inv_mu_dot_;
  }

 private:
  SpdMatrix info_;
  Eigen::VectorXd mu_dot_;
  Eigen::VectorXd info_inv_mu_dot_;
  Eigen::VectorXd signal_row_;
  double sigma_ = 0.0;
};

struct LimitValue {
  double value = 1.0;
  std::optional<double> delta_star;
  std::optional<DiscretePrior> lf_prior;
};

// ---------------------------------------------------------------------------
// Rules

inline double efficient_estimation_rule(const LimitSpec& spec, const Eigen::VectorXd& x) {
  require(x.allFinite(), ErrorKind::invalid_argument, "signal vector must be finite");
  return spec.signal(x);
}

/// Treat iff the efficient signal is >= 0; a zero signal treats.
inline int efficient_treatment_rule(const LimitSpec& spec, const Eigen::VectorXd& x) {
  require(x.allFinite(), ErrorKind::invalid_argument, "signal vector must be finite");
  return spec.signal(x) >= 0.0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Treatment assignment

/// Tilted risk of the efficient treatment rule at effect delta:
/// 1 + (e^{|delta|/lambda} - 1) Phi(-|delta|/sigma).
inline double treatment_risk(double effect, double lambda, double sigma) {
  require(lambda > 0.0 && sigma > 0.0, ErrorKind::invalid_argument,
          "lambda and sigma must be positive");
  const double a = std::abs(effect);
  require(a / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
          "|effect|/lambda exceeds 700");
  return 1.0 + std::expm1(a / lambda) * std_normal_cdf(-a / sigma);
}

struct DeltaStar {
  double delta_star = 0.0;
  double objective = 0.0;  // (e^{delta*/lambda} - 1) Phi(-delta*/sigma)
};

namespace detail {

/// log of (e^{d/lambda} - 1) Phi(-d/sigma), finite for large d.
inline double log_treatment_gain(double d, double lambda, double sigma) {
  if (d <= 0.0) return -std::numeric_limits<double>::infinity();
  const double t = d / lambda;
  const double log_expm1 = t > 30.0 ? t + std::log1p(-std::exp(-t)) : std::log(std::expm1(t));
  return log_expm1 + log_std_normal_cdf(-d / sigma);
}

}  // namespace detail

/// Nature's optimal effect size: argmax over d >= 0 of
/// (e^{d/lambda} - 1) Phi(-d/sigma). The search interval starts at
/// 10 max(1, lambda ln(1 + 1/lambda), sigma) and doubles until the grid
/// maximum is interior.
inline DeltaStar solve_delta_star(double lambda, double sigma) {
  require(lambda > 0.0 && sigma > 0.0 && std::isfinite(lambda) && std::isfinite(sigma),
          ErrorKind::invalid_argument, "lambda and sigma must be positive and finite");
  const double limit = 1e3 * std::max({1.0, lambda, sigma});
  double hi = 10.0 * std::max({1.0, lambda * std::log1p(1.0 / lambda), sigma});
  auto objective = [&](double d) { return detail::log_treatment_gain(d, lambda, sigma); };
  while (true) {
    try {
      const Maximum best = maximize_1d(objective, 0.0, hi, 1e-10);
      require(best.value <= kMaxTiltExponent, ErrorKind::overflow_guard,
              "equilibrium tilted gain overflows; lambda too small");
      return {best.argmax, std::exp(best.value)};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::bracket_failure) throw;
      hi *= 2.0;
      if (hi > limit) {
        throw Error(ErrorKind::no_interior_maximum,
                    "no interior maximum below " + std::to_string(limit));
      }
    }
  }
}

/// Minimax value of the treatment problem with its least favorable prior
/// (equal atoms at -h*, h* with mu_dot' h* = delta*).
inline LimitValue treatment_minimax_value(const LimitSpec& spec, double lambda) {
  const DeltaStar ds = solve_delta_star(lambda, spec.sigma());
  LimitValue out;
  out.value = treatment_risk(ds.delta_star, lambda, spec.sigma());
  out.delta_star = ds.delta_star;
  out.lf_prior = DiscretePrior::symmetric_two_point(spec.h_for_effect(ds.delta_star));
  return out;
}

inline LimitValue treatment_minimax_value(double lambda, double sigma) {
  return treatment_minimax_value(LimitSpec::scalar(sigma), lambda);
}

// ---------------------------------------------------------------------------
// Estimation

namespace detail {

/// Number of Gauss-Legendre panels for an integrand whose log varies by
/// about `log_span` over the interval.
inline int panels_for_span(double log_span) {
  return std::clamp(16 + static_cast<int>(std::ceil(std::abs(log_span) / 2.0)), 16, 4000);
}

}  // namespace detail

/// E[e^{min((sigma Z - shift)^2, c)/lambda}] for Z ~ N(0,1): the constant risk
/// of the estimator delta + shift. The quadratic piece is integrated by
/// Gauss-Legendre between the truncation kinks; the truncated tails are exact.
inline double estimation_shifted_risk(double sigma, double shift, double bound_c, double lambda) {
  require(sigma > 0.0 && lambda > 0.0 && bound_c > 0.0, ErrorKind::invalid_argument,
          "sigma, lambda and bound_c must be positive");
  require(bound_c / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
          "bound_c/lambda exceeds 700");
  constexpr double z_cap = 40.0;
  const double root_c = std::sqrt(bound_c);
  const double z_lo = (shift - root_c) / sigma;
  const double z_hi = (shift + root_c) / sigma;
  const double a = std::max(z_lo, -z_cap);
  const double b = std::min(z_hi, z_cap);
  double inner = 0.0;
  if (a < b) {
    const double curvature = sigma * sigma / lambda - 0.5;
    const double span = curvature * std::max(a * a, b * b);
    inner = gaussian_expectation_between(
        [&](double z) {
          const double e = sigma * z - shift;
          return std::exp(e * e / lambda);
        },
        0.0, 1.0, a, b, detail::panels_for_span(span));
  }
  const double tails = std_normal_cdf(z_lo) + std_normal_cdf(-z_hi);
  return inner + std::exp(bound_c / lambda) * tails;
}

/// Minimax value of estimation under min(z^2, c): the efficient estimator's
/// risk does not depend on h, so that constant is the value.
inline LimitValue estimation_minimax_value(const LimitSpec& spec, const TiltedLossSpec& loss) {
  loss.validate();
  require(loss.kind == LossKind::estimation, ErrorKind::invalid_argument,
          "estimation_minimax_value needs an estimation loss");
  LimitValue out;
  out.value = estimation_shifted_risk(spec.sigma(), 0.0, *loss.bound_c, loss.lambda);
  return out;
}

inline LimitValue estimation_minimax_value(double sigma, const TiltedLossSpec& loss) {
  return estimation_minimax_value(LimitSpec::scalar(sigma), loss);
}

// ---------------------------------------------------------------------------
// Linex

inline double linex_loss(double d) { return std::exp(-d) + d - 1.0; }

namespace detail {

struct LinexKinks {
  double lower;
  double upper;
};

/// The two solutions of e^{-d} + d - 1 = M.
inline LinexKinks linex_kinks(double m) {
  using boost::math::tools::eps_tolerance;
  using boost::math::tools::toms748_solve;
  auto f = [m](double d) { return linex_loss(d) - m; };
  std::uintmax_t iters = 200;
  const auto lo = toms748_solve(f, -std::log(2.0 * m + 2.0), 0.0, eps_tolerance<double>(52), iters);
  iters = 200;
  const auto hi = toms748_solve(f, 0.0, m + 2.0, eps_tolerance<double>(52), iters);
  return {0.5 * (lo.first + lo.second), 0.5 * (hi.first + hi.second)};
}

}  // namespace detail

/// E[e^{min(L(Y + shift), M)/lambda}] - 1 with Y ~ N(0, sigma2) and L the
/// linex loss. Kept in expm1 form so that large lambda does not cancel.
inline double linex_excess_risk(double shift, double lambda, double linex_m, double sigma2) {
  require(lambda > 0.0 && linex_m > 0.0 && sigma2 > 0.0, ErrorKind::invalid_argument,
          "lambda, M and sigma2 must be positive");
  require(linex_m / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
          "M/lambda exceeds 700");
  const double sd = std::sqrt(sigma2);
  const auto kinks = detail::linex_kinks(linex_m);
  const double z_lo = (kinks.lower - shift) / sd;
  const double z_hi = (kinks.upper - shift) / sd;
  const double a = std::max(z_lo, -40.0);
  const double b = std::min(z_hi, 40.0);
  double inner = 0.0;
  if (a < b) {
    inner = gaussian_expectation_between(
        [&](double z) { return std::expm1(linex_loss(sd * z + shift) / lambda); }, 0.0, 1.0, a, b,
        detail::panels_for_span(linex_m / lambda));
  }
  const double tails = std_normal_cdf(z_lo) + std_normal_cdf(-z_hi);
  return inner + std::expm1(linex_m / lambda) * tails;
}

/// Minimax-optimal shift of the equivariant linex estimator under tilt
/// lambda and truncation M, for signal variance sigma2.
inline double linex_optimal_shift(double lambda, double linex_m, double sigma2) {
  require(lambda > 0.0 && linex_m > 0.0 && sigma2 > 0.0, ErrorKind::invalid_argument,
          "lambda, M and sigma2 must be positive");
  require(linex_m / lambda <= kMaxTiltExponent, ErrorKind::overflow_guard,
          "M/lambda exceeds 700");
  const double sd = std::sqrt(sigma2);
  auto objective = [&](double shift) { return -linex_excess_risk(shift, lambda, linex_m, sigma2); };
  double lo = -5.0 * std::max(1.0, sd);
  double hi = 0.5 * sigma2 + 10.0 * std::max(1.0, sd);
  const double reach = 4.0 * (linex_m + 2.0) + 100.0 * std::max(1.0, sd);
  for (;;) {
    try {
      return maximize_1d(objective, lo, hi, 1e-9, {.grid_points = 1025}).argmax;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::bracket_failure || hi - lo > reach) throw;
      const double width = hi - lo;
      if (objective(hi) >= objective(lo)) {
        hi += width;
      } else {
        lo -= width;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Reference-parameter value profiles

struct ValueProfile {
  std::vector<double> theta;
  std::vector<double> sigma;
  std::vector<double> value;
  std::vector<bool> admissible;
  double sup = 0.0;
  double arg_sup = 0.0;
};

/// V*_theta over a grid of reference parameters, with
/// sigma_theta = |mu_dot(theta)| / sqrt(info(theta)). Treatment restricts the
/// sup to grid points with |mu(theta)| <= zero_tol.
inline ValueProfile reference_value_profile(const std::vector<double>& theta_grid,
                                            const std::function<double(double)>& info_at,
                                            const std::function<double(double)>& mu_at,
                                            const std::function<double(double)>& mu_dot_at,
                                            const TiltedLossSpec& loss, double zero_tol = 1e-9) {
  loss.validate();
  require(!theta_grid.empty(), ErrorKind::invalid_argument, "theta grid is empty");
  require(loss.kind != LossKind::linex, ErrorKind::invalid_argument,
          "value profiles cover estimation and treatment losses");
  ValueProfile out;
  bool found = false;
  for (double theta : theta_grid) {
    const double info = info_at(theta);
    require(info > 0.0 && std::isfinite(info), ErrorKind::degenerate_information,
            "information must be positive at theta = " + std::to_string(theta));
    const double sigma = std::abs(mu_dot_at(theta)) / std::sqrt(info);
    const double v = loss.kind == LossKind::estimation
                         ? estimation_minimax_value(sigma, loss).value
                         : treatment_minimax_value(loss.lambda, sigma).value;
    const bool ok = loss.kind == LossKind::estimation || std::abs(mu_at(theta)) <= zero_tol;
    out.theta.push_back(theta);
    out.sigma.push_back(sigma);
    out.value.push_back(v);
    out.admissible.push_back(ok);
    if (ok && (!found || v > out.sup)) {
      out.sup = v;
      out.arg_sup = theta;
      found = true;
    }
  }
  require(found, ErrorKind::empty_zero_set, "no grid point satisfies mu(theta) = 0");
  return out;
}

}  // namespace tiltrisk
