#pragma once

// Finite-sample experiments: model families, estimators, and a Monte Carlo
// harness for tilted risks of plug-in rules. Replications use one random
// stream per replication index, shared across local parameters and rules
// (common random numbers), and reductions run in a fixed order so results do
// not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/binomial.hpp>

#include "tiltrisk/error.hpp"
#include "tiltrisk/limit_experiment.hpp"
#include "tiltrisk/stat_core.hpp"
#include "tiltrisk/tilt.hpp"

namespace tiltrisk {

enum class ModelFamily { bernoulli, gaussian_location, overid_mean };

inline std::string_view to_string(ModelFamily f) noexcept {
  switch (f) {
    case ModelFamily::bernoulli: return "bernoulli";
    case ModelFamily::gaussian_location: return "gaussian_location";
    case ModelFamily::overid_mean: return "overid_mean";
  }
  return "?";
}

inline constexpr double kBernoulliEdge = 1e-6;

/// A parametric family localized at theta0: the data at local parameter h
/// come from theta0 + h / sqrt(n). The structural parameter for treatment
/// choice is mu(theta) = theta - theta0, so the effect in signal units is h.
///   bernoulli:          Y ~ Bernoulli(theta)
///   gaussian_location:  Y ~ N(theta, noise_sd^2)
///   overid_mean:        Y ~ N(theta * 1_p, omega), moments m(Y, mu) = Y - mu 1_p
struct ExperimentModel {
  ModelFamily family = ModelFamily::bernoulli;
  double theta0 = 0.5;
  long n = 100;
  double noise_sd = 1.0;
  std::optional<SpdMatrix> omega;

  static ExperimentModel bernoulli(double theta0, long n) {
    ExperimentModel m{ModelFamily::bernoulli, theta0, n, 1.0, std::nullopt};
    m.validate();
    return m;
  }
  static ExperimentModel gaussian_location(double theta0, double noise_sd, long n) {
    ExperimentModel m{ModelFamily::gaussian_location, theta0, n, noise_sd, std::nullopt};
    m.validate();
    return m;
  }
  static ExperimentModel overid_mean(double mu0, const SpdMatrix& omega, long n) {
    ExperimentModel m{ModelFamily::overid_mean, mu0, n, 1.0, omega};
    m.validate();
    return m;
  }

  void validate() const {
    require(n >= 2, ErrorKind::invalid_argument, "sample size must be at least 2");
    require(std::isfinite(theta0), ErrorKind::invalid_argument, "theta0 must be finite");
    switch (family) {
      case ModelFamily::bernoulli:
        require(theta0 > 0.0 && theta0 < 1.0, ErrorKind::degenerate_information,
                "bernoulli theta0 must lie strictly inside (0,1)");
        break;
      case ModelFamily::gaussian_location:
        require(noise_sd > 0.0 && std::isfinite(noise_sd), ErrorKind::invalid_argument,
                "noise_sd must be positive");
        break;
      case ModelFamily::overid_mean:
        require(omega.has_value(), ErrorKind::invalid_argument, "overid_mean needs omega");
        break;
    }
  }

  ExperimentModel with_n(long new_n) const {
    ExperimentModel m = *this;
    m.n = new_n;
    m.validate();
    return m;
  }

  int moments() const { return family == ModelFamily::overid_mean ? omega->dim() : 1; }

  /// Fisher information for theta at theta0.
  double information() const {
    switch (family) {
      case ModelFamily::bernoulli: return 1.0 / (theta0 * (1.0 - theta0));
      case ModelFamily::gaussian_location: return 1.0 / (noise_sd * noise_sd);
      case ModelFamily::overid_mean: {
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(moments());
        return ones.dot(omega->solve(ones));
      }
    }
    return 0.0;
  }

  /// Effect scale of the efficient signal (mu_dot = 1).
  double sigma() const { return 1.0 / std::sqrt(information()); }

  double theta_at(double h) const {
    const double t = theta0 + h / std::sqrt(static_cast<double>(n));
    if (family == ModelFamily::bernoulli) {
      require(t >= kBernoulliEdge && t <= 1.0 - kBernoulliEdge, ErrorKind::parameter_out_of_range,
              "theta0 + h/sqrt(n) = " + std::to_string(t) + " leaves [1e-6, 1 - 1e-6]");
    }
    return t;
  }
};

// ---------------------------------------------------------------------------
// Estimators

enum class EstimatorName { mle, sample_median, half_sample_mean, gmm_two_step, gmm_diag, gmm_identity };

inline std::string_view to_string(EstimatorName e) noexcept {
  switch (e) {
    case EstimatorName::mle: return "mle";
    case EstimatorName::sample_median: return "sample_median";
    case EstimatorName::half_sample_mean: return "half_sample_mean";
    case EstimatorName::gmm_two_step: return "gmm_two_step";
    case EstimatorName::gmm_diag: return "gmm_diag";
    case EstimatorName::gmm_identity: return "gmm_identity";
  }
  return "?";
}

struct EstimatorSpec {
  EstimatorName name = EstimatorName::mle;

  static EstimatorSpec parse(std::string_view s) {
    for (auto e : {EstimatorName::mle, EstimatorName::sample_median, EstimatorName::half_sample_mean,
                   EstimatorName::gmm_two_step, EstimatorName::gmm_diag, EstimatorName::gmm_identity}) {
      if (to_string(e) == s) return {e};
    }
    throw Error(ErrorKind::unknown_identifier, "unknown rule '" + std::string(s) + "'");
  }

  bool operator==(const EstimatorSpec&) const = default;
};

inline bool is_gmm(EstimatorName e) {
  return e == EstimatorName::gmm_two_step || e == EstimatorName::gmm_diag || e == EstimatorName::gmm_identity;
}

inline void check_estimator_fits(const ExperimentModel& model, EstimatorSpec spec) {
  const bool overid = model.family == ModelFamily::overid_mean;
  require(overid ? (is_gmm(spec.name) || spec.name == EstimatorName::mle) : !is_gmm(spec.name),
          ErrorKind::unknown_identifier,
          std::string("rule ") + std::string(to_string(spec.name)) + " is not defined for " +
              std::string(to_string(model.family)));
}

/// The efficient estimator of each family.
inline bool is_efficient(const ExperimentModel& model, EstimatorSpec spec) {
  if (model.family == ModelFamily::overid_mean) {
    return spec.name == EstimatorName::gmm_two_step || spec.name == EstimatorName::mle;
  }
  return spec.name == EstimatorName::mle;
}

/// n x p observations (p = 1 for scalar families).
struct Dataset {
  Eigen::MatrixXd y;
  long size() const { return static_cast<long>(y.rows()); }
};

inline Dataset draw_dataset(const ExperimentModel& model, double h, RandomStream& rng) {
  const double theta = model.theta_at(h);
  Dataset d;
  d.y.resize(model.n, model.moments());
  switch (model.family) {
    case ModelFamily::bernoulli:
      for (long i = 0; i < model.n; ++i) d.y(i, 0) = rng.bernoulli(theta) ? 1.0 : 0.0;
      break;
    case ModelFamily::gaussian_location:
      for (long i = 0; i < model.n; ++i) d.y(i, 0) = theta + model.noise_sd * rng.normal();
      break;
    case ModelFamily::overid_mean: {
      const Eigen::MatrixXd l = model.omega->cholesky_lower();
      Eigen::VectorXd z(model.moments());
      for (long i = 0; i < model.n; ++i) {
        for (int j = 0; j < z.size(); ++j) z(j) = rng.normal();
        d.y.row(i) = (Eigen::VectorXd::Constant(z.size(), theta) + l * z).transpose();
      }
      break;
    }
  }
  return d;
}

/// Standardized score statistic I^{-1/2} n^{-1/2} sum psi(Y_i) at theta0.
inline double score_statistic(const ExperimentModel& model, const Dataset& data) {
  model.validate();
  require(data.size() > 0 && data.y.cols() == model.moments(), ErrorKind::invalid_argument,
          "dataset does not match the model");
  const double nn = static_cast<double>(data.size());
  double total = 0.0;
  switch (model.family) {
    case ModelFamily::bernoulli:
    case ModelFamily::gaussian_location:
      total = (data.y.col(0).array() - model.theta0).sum() * model.information();
      break;
    case ModelFamily::overid_mean: {
      const Eigen::VectorXd ones = Eigen::VectorXd::Ones(model.moments());
      const Eigen::VectorXd w = model.omega->solve(ones);
      for (long i = 0; i < data.size(); ++i) {
        total += w.dot(data.y.row(i).transpose() - model.theta0 * ones);
      }
      break;
    }
  }
  return total / std::sqrt(model.information() * nn);
}

namespace detail {

inline double median_of(std::vector<double> v) {
  const std::size_t m = v.size();
  const std::size_t mid = m / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (m % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline long first_half(long n) { return (n + 1) / 2; }

/// Median of n binary observations with s ones.
inline double median_of_binary(long s, long n) {
  const long zeros = n - s;
  auto at = [&](long i) { return i >= zeros ? 1.0 : 0.0; };
  return n % 2 == 1 ? at((n - 1) / 2) : 0.5 * (at(n / 2 - 1) + at(n / 2));
}

/// GMM for the linear moment Y - mu 1 from the sample mean and the centered
/// scatter matrix. Shifting ybar by c 1 shifts the estimate by c.
inline double gmm_from_stats(EstimatorName name, const Eigen::VectorXd& ybar, const Eigen::MatrixXd& scatter,
                             double n, const SpdMatrix* omega) {
  const int p = static_cast<int>(ybar.size());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(p);
  auto weighted = [&](const Eigen::MatrixXd& w) {
    const double denom = ones.dot(w * ones);
    require(denom > 0.0 && std::isfinite(denom), ErrorKind::singular, "G'WG is not invertible");
    return ones.dot(w * ybar) / denom;
  };
  if (name == EstimatorName::mle) {
    require(omega != nullptr, ErrorKind::invalid_argument, "mle needs omega");
    const Eigen::VectorXd w = omega->solve(ones);
    return w.dot(ybar) / w.dot(ones);
  }
  const double first = ybar.mean();
  if (name == EstimatorName::gmm_identity) return first;
  const Eigen::VectorXd r = ybar - first * ones;
  const Eigen::MatrixXd omega_hat = scatter / n + r * r.transpose();
  if (name == EstimatorName::gmm_diag) {
    const Eigen::VectorXd d = omega_hat.diagonal();
    require(d.minCoeff() > 0.0, ErrorKind::singular, "diagonal weighting has a zero variance");
    return weighted(d.cwiseInverse().asDiagonal().toDenseMatrix());
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(omega_hat);
  require(ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0,
          ErrorKind::singular, "estimated moment covariance is singular");
  return weighted(ldlt.solve(Eigen::MatrixXd::Identity(p, p)));
}

}  // namespace detail

/// Point estimate of theta (bernoulli, gaussian) or mu (overid_mean).
inline double estimate(EstimatorSpec spec, const ExperimentModel& model, const Dataset& data) {
  check_estimator_fits(model, spec);
  require(data.size() > 0 && data.y.cols() == model.moments(), ErrorKind::invalid_argument,
          "dataset does not match the model");
  if (model.family == ModelFamily::overid_mean) {
    const Eigen::VectorXd ybar = data.y.colwise().mean().transpose();
    const Eigen::MatrixXd centered = data.y.rowwise() - ybar.transpose();
    const Eigen::MatrixXd scatter = centered.transpose() * centered;
    return detail::gmm_from_stats(spec.name, ybar, scatter, static_cast<double>(data.size()),
                                  &*model.omega);
  }
  const auto col = data.y.col(0);
  switch (spec.name) {
    case EstimatorName::mle: return col.mean();
    case EstimatorName::half_sample_mean: return col.head(detail::first_half(data.size())).mean();
    case EstimatorName::sample_median:
      return detail::median_of(std::vector<double>(col.data(), col.data() + col.size()));
    default: break;
  }
  throw Error(ErrorKind::unknown_identifier, "unsupported rule");
}

// ---------------------------------------------------------------------------
// Influence function and pathwise derivative

struct InfluenceReport {
  Eigen::RowVectorXd psi;               // G' Omega^{-1}
  Eigen::RowVectorXd estimator_coeffs;  // -sigma2 G' Omega^{-1}: mu_hat - mu0 ~ coeffs * mbar
  double sigma2 = 0.0;
};

inline InfluenceReport influence_and_sigma(const Eigen::VectorXd& g, const SpdMatrix& omega) {
  require(g.size() == omega.dim() && g.norm() > 0.0, ErrorKind::invalid_argument,
          "G must be a nonzero vector matching omega");
  const Eigen::VectorXd oig = omega.solve(g);
  const double info = g.dot(oig);
  require(info > 0.0, ErrorKind::singular, "G' Omega^{-1} G is not positive");
  InfluenceReport r;
  r.psi = oig.transpose();
  r.sigma2 = 1.0 / info;
  r.estimator_coeffs = -r.sigma2 * r.psi;
  return r;
}

struct PathwiseReport {
  double target = 0.0;  // <psi, score>
  std::vector<double> steps;
  std::vector<double> derivatives;
  std::vector<double> errors;
  double error_ratio = 0.0;  // errors[0] / errors[1]

  bool passed(double lo = 50.0, double hi = 200.0) const {
    return errors.size() >= 2 && error_ratio >= lo && error_ratio <= hi;
  }
};

/// Checks the pathwise derivative of the efficient-weighting estimand
/// mu(P) = argmin E_P[m]' Omega^{-1} E_P[m] along the submodel
/// dP_s ∝ exp(s tanh(u)) dP_0 with u = a' Omega^{-1} (Y - mu0 1), against
/// the influence-function prediction. Central differences at each step.
inline PathwiseReport pathwise_derivative_check(const ExperimentModel& model, const Eigen::VectorXd& a,
                                                std::vector<double> steps = {1e-2, 1e-3}) {
  require(model.family == ModelFamily::overid_mean, ErrorKind::invalid_argument,
          "pathwise check needs the overid_mean model");
  require(a.size() == model.moments() && a.norm() > 0.0, ErrorKind::invalid_argument,
          "direction must be a nonzero vector of moment dimension");
  require(!steps.empty(), ErrorKind::invalid_argument, "need at least one step");
  const SpdMatrix& omega = *model.omega;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(model.moments());
  const InfluenceReport inf = influence_and_sigma(-ones, omega);
  const double tau2 = a.dot(omega.solve(a));
  // E[Y - mu0 | u] = a u / tau^2, so everything reduces to moments of u
  const double lead = inf.sigma2 * ones.dot(omega.solve(a)) / tau2;
  const QuadratureRule& gh = default_hermite_rule();
  auto mu_shift = [&](double s) {
    const double num = gaussian_expectation([&](double u) { return u * std::exp(s * std::tanh(u)); }, 0.0, tau2, gh);
    const double den = gaussian_expectation([&](double u) { return std::exp(s * std::tanh(u)); }, 0.0, tau2, gh);
    return lead * num / den;
  };
  PathwiseReport rep;
  rep.target = lead * gaussian_expectation([&](double u) { return u * std::tanh(u); }, 0.0, tau2, gh);
  for (double s : steps) {
    require(s > 0.0, ErrorKind::invalid_argument, "steps must be positive");
    const double d = (mu_shift(s) - mu_shift(-s)) / (2.0 * s);
    rep.steps.push_back(s);
    rep.derivatives.push_back(d);
    rep.errors.push_back(std::abs(d - rep.target));
  }
  if (rep.errors.size() >= 2) {
    rep.error_ratio = rep.errors[1] > 0.0 ? rep.errors[0] / rep.errors[1] : std::numeric_limits<double>::infinity();
  }
  return rep;
}

/// Exact log likelihood ratio ln dP_{n,h}/dP_{n,0} for bernoulli data with s ones.
inline double bernoulli_log_likelihood_ratio(const ExperimentModel& model, double h, long successes) {
  require(model.family == ModelFamily::bernoulli, ErrorKind::invalid_argument, "bernoulli model expected");
  const double t = model.theta_at(h);
  const double t0 = model.theta0;
  return static_cast<double>(successes) * std::log(t / t0) +
         static_cast<double>(model.n - successes) * std::log1p(-t) -
         static_cast<double>(model.n - successes) * std::log1p(-t0);
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

struct McOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  int refine = 3;        // worst_case_risk: subdivide the cells next to the grid argmax
};

namespace detail {

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(begin, end) over contiguous blocks of [0, count).
template <class Fn>
void parallel_blocks(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, count))));
  if (threads == 1) {
    fn(std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t block = (count + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = t * block;
    const std::size_t e = std::min(count, b + block);
    if (b >= e) break;
    pool.emplace_back([&, t, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& ep : errors) {
    if (ep) std::rethrow_exception(ep);
  }
}

inline constexpr std::size_t kChunk = 4096;

/// Compensated sum in fixed chunks, chunk totals added in order.
inline double ordered_sum(const std::vector<double>& v) {
  double total = 0.0;
  for (std::size_t b = 0; b < v.size(); b += kChunk) {
    double s = 0.0, comp = 0.0;
    const std::size_t e = std::min(v.size(), b + kChunk);
    for (std::size_t i = b; i < e; ++i) {
      const double t = s + v[i];
      comp += std::abs(s) >= std::abs(v[i]) ? (s - t) + v[i] : (v[i] - t) + s;
      s = t;
    }
    total += s + comp;
  }
  return total;
}

}  // namespace detail

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_and_stderr(const std::vector<double>& v) {
  require(v.size() >= 2, ErrorKind::invalid_argument, "need at least two replications");
  const double n = static_cast<double>(v.size());
  const double mean = detail::ordered_sum(v) / n;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
  const double var = detail::ordered_sum(sq) / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

/// Per-replication draws shared by every local parameter and rule.
/// bernoulli keeps two uniforms per replication (one per half sample) that
/// are inverted through binomial CDFs at each theta; the location families
/// keep the estimator error theta_hat - theta, which does not depend on h.
class ReplicationBank {
 public:
  ReplicationBank(const ExperimentModel& model, std::vector<EstimatorSpec> rules, long reps, StreamSeed seed,
                  unsigned threads = 0)
      : model_(model), rules_(std::move(rules)), reps_(reps), seed_(seed) {
    model_.validate();
    require(reps >= 2, ErrorKind::invalid_argument, "need at least two replications");
    require(!rules_.empty(), ErrorKind::invalid_argument, "need at least one rule");
    for (const auto& r : rules_) check_estimator_fits(model_, r);
    const auto count = static_cast<std::size_t>(reps);
    threads = detail::resolve_threads(threads);
    if (model_.family == ModelFamily::bernoulli) {
      u1_.resize(count);
      u2_.resize(count);
      detail::parallel_blocks(count, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t r = b; r < e; ++r) {
          RandomStream rng({seed_.root_seed, seed_.stream_index + r});
          u1_[r] = rng.uniform();
          u2_[r] = rng.uniform();
        }
      });
      return;
    }
    errors_.assign(rules_.size(), std::vector<double>(count));
    detail::parallel_blocks(count, threads, [&](std::size_t b, std::size_t e) {
      std::vector<double> z;
      for (std::size_t r = b; r < e; ++r) {
        RandomStream rng({seed_.root_seed, seed_.stream_index + r});
        if (model_.family == ModelFamily::gaussian_location) {
          draw_location(rng, z, r);
        } else {
          draw_overid(rng, r);
        }
      }
    });
  }

  const ExperimentModel& model() const noexcept { return model_; }
  const std::vector<EstimatorSpec>& rules() const noexcept { return rules_; }
  long reps() const noexcept { return reps_; }
  StreamSeed seed() const noexcept { return seed_; }

  std::size_t rule_index(EstimatorSpec rule) const {
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      if (rules_[i] == rule) return i;
    }
    throw Error(ErrorKind::unknown_identifier,
                "rule " + std::string(to_string(rule.name)) + " was not simulated");
  }

  /// sqrt(n) (estimate - theta_h) and the plug-in treatment decision for
  /// every replication at local parameter h.
  void outcomes(std::size_t rule, double h, std::vector<double>& scaled_error, std::vector<char>& treat) const {
    const auto count = static_cast<std::size_t>(reps_);
    scaled_error.resize(count);
    treat.resize(count);
    const double root_n = std::sqrt(static_cast<double>(model_.n));
    const double theta = model_.theta_at(h);
    if (model_.family == ModelFamily::bernoulli) {
      const long n1 = detail::first_half(model_.n);
      const long n2 = model_.n - n1;
      const auto cdf1 = binomial_cdf(n1, theta);
      const auto cdf2 = binomial_cdf(n2, theta);
      const EstimatorName name = rules_[rule].name;
      for (std::size_t r = 0; r < count; ++r) {
        const long s1 = invert(cdf1, u1_[r]);
        const long s2 = invert(cdf2, u2_[r]);
        double est = 0.0;
        switch (name) {
          case EstimatorName::mle: est = static_cast<double>(s1 + s2) / static_cast<double>(model_.n); break;
          case EstimatorName::half_sample_mean: est = static_cast<double>(s1) / static_cast<double>(n1); break;
          case EstimatorName::sample_median: est = detail::median_of_binary(s1 + s2, model_.n); break;
          default: break;
        }
        scaled_error[r] = root_n * (est - theta);
        treat[r] = est >= model_.theta0 ? 1 : 0;
      }
      return;
    }
    const auto& err = errors_[rule];
    const double shift = h / root_n;
    for (std::size_t r = 0; r < count; ++r) {
      scaled_error[r] = root_n * err[r];
      treat[r] = shift + err[r] >= 0.0 ? 1 : 0;
    }
  }

 private:
  static std::vector<double> binomial_cdf(long trials, double p) {
    const boost::math::binomial_distribution<double> dist(static_cast<double>(trials), p);
    std::vector<double> cdf(static_cast<std::size_t>(trials) + 1);
    double acc = 0.0;
    for (long k = 0; k <= trials; ++k) {
      acc += boost::math::pdf(dist, static_cast<double>(k));
      cdf[static_cast<std::size_t>(k)] = acc;
    }
    cdf.back() = std::max(cdf.back(), 1.0);
    return cdf;
  }

  static long invert(const std::vector<double>& cdf, double u) {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return static_cast<long>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
  }

  void draw_location(RandomStream& rng, std::vector<double>& z, std::size_t r) {
    // estimators are location-scale equivariant: compute on a standard sample
    z.resize(static_cast<std::size_t>(model_.n));
    for (double& x : z) x = rng.normal();
    const double sd = model_.noise_sd;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      double est = 0.0;
      switch (rules_[i].name) {
        case EstimatorName::mle: est = detail::ordered_sum(z) / static_cast<double>(z.size()); break;
        case EstimatorName::half_sample_mean: {
          const long half = detail::first_half(model_.n);
          double s = 0.0;
          for (long k = 0; k < half; ++k) s += z[static_cast<std::size_t>(k)];
          est = s / static_cast<double>(half);
          break;
        }
        case EstimatorName::sample_median: est = detail::median_of(z); break;
        default: break;
      }
      errors_[i][r] = sd * est;
    }
  }

  void draw_overid(RandomStream& rng, std::size_t r) {
    // sample mean and Bartlett-factor Wishart scatter for N(mu 1, Omega)
    const int p = model_.moments();
    const double n = static_cast<double>(model_.n);
    const Eigen::MatrixXd l = model_.omega->cholesky_lower();
    Eigen::VectorXd z(p);
    for (int j = 0; j < p; ++j) z(j) = rng.normal();
    const Eigen::VectorXd ybar_err = l * z / std::sqrt(n);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    for (int i = 0; i < p; ++i) {
      a(i, i) = std::sqrt(rng.chi_squared(n - 1.0 - i));
      for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
    }
    const Eigen::MatrixXd la = l * a;
    const Eigen::MatrixXd scatter = la * la.transpose();
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      errors_[i][r] = detail::gmm_from_stats(rules_[i].name, ybar_err, scatter, n, &*model_.omega);
    }
  }

  ExperimentModel model_;
  std::vector<EstimatorSpec> rules_;
  long reps_;
  StreamSeed seed_;
  std::vector<double> u1_, u2_;
  std::vector<std::vector<double>> errors_;
};

/// Tilted loss of one replication. scaled_error = sqrt(n)(theta_hat - theta_h),
/// effect = sqrt(n) mu(theta_h) = h.
inline double tilted_replication_loss(const TiltedLossSpec& loss, double scaled_error, double effect, bool treat) {
  double l = 0.0;
  switch (loss.kind) {
    case LossKind::estimation: l = std::min(scaled_error * scaled_error, *loss.bound_c); break;
    case LossKind::treatment: {
      const bool wrong = effect >= 0.0 ? !treat : treat;
      l = wrong ? std::abs(effect) : 0.0;
      break;
    }
    case LossKind::linex:
      throw Error(ErrorKind::invalid_argument, "the Monte Carlo harness covers estimation and treatment losses");
  }
  if (loss.trunc_k) l = std::min(l, *loss.trunc_k);
  return tilted_value(l, loss.lambda);
}

/// Per-replication tilted values of a rule at local parameter h.
inline std::vector<double> replication_values(const ReplicationBank& bank, EstimatorSpec rule, double h,
                                              const TiltedLossSpec& loss) {
  loss.validate();
  std::vector<double> err;
  std::vector<char> treat;
  bank.outcomes(bank.rule_index(rule), h, err, treat);
  std::vector<double> out(err.size());
  for (std::size_t r = 0; r < err.size(); ++r) out[r] = tilted_replication_loss(loss, err[r], h, treat[r] != 0);
  return out;
}

/// sqrt(n) (theta_hat - theta_h) across replications, for moment checks.
inline std::vector<double> scaled_estimator_errors(const ExperimentModel& model, EstimatorSpec rule, double h,
                                                   long reps, StreamSeed seed, const McOptions& opts = {}) {
  const ReplicationBank bank(model, {rule}, reps, seed, opts.threads);
  std::vector<double> err;
  std::vector<char> treat;
  bank.outcomes(0, h, err, treat);
  return err;
}

inline MeanStderr mc_tilted_risk(const ExperimentModel& model, EstimatorSpec rule, double h,
                                 const TiltedLossSpec& loss, long reps, StreamSeed seed, const McOptions& opts = {}) {
  const ReplicationBank bank(model, {rule}, reps, seed, opts.threads);
  return mean_and_stderr(replication_values(bank, rule, h, loss));
}

struct RiskReport {
  double value = 0.0;
  double stderr_ = 0.0;
  double worst_h = 0.0;
  long reps = 0;
  StreamSeed seed;
  long n = 0;
  double lambda = 0.0;
  std::vector<double> h_grid;  // every evaluated h, ascending
  std::vector<double> means;
  std::vector<double> stderrs;
};

/// Equispaced effects on [-M sigma, M sigma].
inline std::vector<double> default_effect_grid(double sigma, double budget_m = 3.0, int points = 25) {
  require(points >= 1 && budget_m >= 0.0 && sigma > 0.0, ErrorKind::invalid_argument, "bad grid request");
  if (points == 1) return {0.0};
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = budget_m * sigma * (-1.0 + 2.0 * i / (points - 1));
  return g;
}

/// Grid sup of the simulated tilted risk. With refine > 1 the two cells next
/// to the grid argmax are subdivided refine-fold and evaluated too.
inline RiskReport worst_case_risk(const ReplicationBank& bank, EstimatorSpec rule, const TiltedLossSpec& loss,
                                  std::vector<double> h_grid, int refine = 3) {
  require(!h_grid.empty(), ErrorKind::invalid_argument, "h grid is empty");
  std::sort(h_grid.begin(), h_grid.end());
  h_grid.erase(std::unique(h_grid.begin(), h_grid.end()), h_grid.end());
  RiskReport rep;
  rep.reps = bank.reps();
  rep.seed = bank.seed();
  rep.n = bank.model().n;
  rep.lambda = loss.lambda;

  std::vector<std::pair<double, MeanStderr>> evaluated;
  auto eval = [&](double h) { evaluated.emplace_back(h, mean_and_stderr(replication_values(bank, rule, h, loss))); };
  for (double h : h_grid) eval(h);
  auto argmax = [&] {
    std::size_t best = 0;
    for (std::size_t i = 1; i < evaluated.size(); ++i) {
      if (evaluated[i].second.mean > evaluated[best].second.mean) best = i;
    }
    return best;
  };
  if (refine > 1 && h_grid.size() > 1) {
    const std::size_t b = argmax();
    const double center = evaluated[b].first;
    for (int side : {-1, 1}) {
      const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(b) + side;
      if (nb < 0 || nb >= static_cast<std::ptrdiff_t>(h_grid.size())) continue;
      const double step = (h_grid[static_cast<std::size_t>(nb)] - center) / refine;
      for (int k = 1; k < refine; ++k) eval(center + k * step);
    }
  }
  std::sort(evaluated.begin(), evaluated.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  const std::size_t b = argmax();
  rep.value = evaluated[b].second.mean;
  rep.stderr_ = evaluated[b].second.stderr_;
  rep.worst_h = evaluated[b].first;
  for (const auto& [h, ms] : evaluated) {
    rep.h_grid.push_back(h);
    rep.means.push_back(ms.mean);
    rep.stderrs.push_back(ms.stderr_);
  }
  return rep;
}

inline RiskReport worst_case_risk(const ExperimentModel& model, EstimatorSpec rule, const TiltedLossSpec& loss,
                                  const std::vector<double>& h_grid, long reps, StreamSeed seed,
                                  const McOptions& opts = {}) {
  const ReplicationBank bank(model, {rule}, reps, seed, opts.threads);
  return worst_case_risk(bank, rule, loss, h_grid, opts.refine);
}

/// Limit-experiment value for the model's efficient effect scale.
inline double limit_value(const ExperimentModel& model, const TiltedLossSpec& loss) {
  switch (loss.kind) {
    case LossKind::estimation: return estimation_minimax_value(model.sigma(), loss).value;
    case LossKind::treatment: return treatment_minimax_value(loss.lambda, model.sigma()).value;
    case LossKind::linex: break;
  }
  throw Error(ErrorKind::invalid_argument, "no limit value for linex in the Monte Carlo harness");
}

struct StudyRow {
  EstimatorSpec rule;
  long n = 0;
  RiskReport report;
  double v_star = 0.0;
  double ratio() const { return report.value / v_star; }
};

/// Worst-case risk of each rule at each sample size, against V*. Rules at the
/// same n share one replication bank.
inline std::vector<StudyRow> risk_study(const ExperimentModel& model, const std::vector<EstimatorSpec>& rules,
                                        const TiltedLossSpec& loss, double budget_m, int grid_points,
                                        const std::vector<long>& n_list, long reps, StreamSeed seed,
                                        const McOptions& opts = {}) {
  require(!n_list.empty(), ErrorKind::invalid_argument, "n list is empty");
  for (std::size_t i = 1; i < n_list.size(); ++i) {
    require(n_list[i] > n_list[i - 1], ErrorKind::invalid_argument, "n list must increase");
  }
  const double v_star = limit_value(model, loss);
  const auto grid = default_effect_grid(model.sigma(), budget_m, grid_points);
  std::vector<StudyRow> rows;
  for (long n : n_list) {
    const ExperimentModel m = model.with_n(n);
    const ReplicationBank bank(m, rules, reps, seed, opts.threads);
    for (const auto& rule : rules) {
      rows.push_back({rule, n, worst_case_risk(bank, rule, loss, grid, opts.refine), v_star});
    }
  }
  return rows;
}

inline std::vector<StudyRow> convergence_study(const ExperimentModel& model, EstimatorSpec rule,
                                               const TiltedLossSpec& loss, double budget_m,
                                               const std::vector<long>& n_list, long reps, StreamSeed seed,
                                               const McOptions& opts = {}, int grid_points = 25) {
  return risk_study(model, {rule}, loss, budget_m, grid_points, n_list, reps, seed, opts);
}

struct PairwiseDifference {
  EstimatorSpec better;
  EstimatorSpec worse;
  double difference = 0.0;  // worse.value - better.value
  double stderr_ = 0.0;     // paired over replications at each rule's argmax
  double z() const { return stderr_ > 0.0 ? difference / stderr_ : std::numeric_limits<double>::infinity(); }
};

struct EfficiencyReport {
  std::vector<std::pair<EstimatorSpec, RiskReport>> ranked;  // ascending worst-case risk
  std::vector<PairwiseDifference> differences;               // every pair, from the ranking
  bool efficient_first = false;
};

inline EfficiencyReport efficiency_comparison(const ReplicationBank& bank, const std::vector<EstimatorSpec>& rules,
                                              const TiltedLossSpec& loss, const std::vector<double>& h_grid,
                                              int refine = 3) {
  require(rules.size() >= 2, ErrorKind::invalid_argument, "need at least two rules to compare");
  EfficiencyReport out;
  for (const auto& r : rules) out.ranked.emplace_back(r, worst_case_risk(bank, r, loss, h_grid, refine));
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const auto& a, const auto& b) { return a.second.value < b.second.value; });
  for (std::size_t i = 0; i < out.ranked.size(); ++i) {
    for (std::size_t j = i + 1; j < out.ranked.size(); ++j) {
      const auto& [ra, a] = out.ranked[i];
      const auto& [rb, b] = out.ranked[j];
      const auto va = replication_values(bank, ra, a.worst_h, loss);
      const auto vb = replication_values(bank, rb, b.worst_h, loss);
      std::vector<double> d(va.size());
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = vb[k] - va[k];
      const MeanStderr ms = mean_and_stderr(d);
      out.differences.push_back({ra, rb, ms.mean, ms.stderr_});
    }
  }
  out.efficient_first = is_efficient(bank.model(), out.ranked.front().first);
  return out;
}

inline EfficiencyReport efficiency_comparison(const ExperimentModel& model, const std::vector<EstimatorSpec>& rules,
                                              const TiltedLossSpec& loss, const std::vector<double>& h_grid,
                                              long reps, StreamSeed seed, const McOptions& opts = {}) {
  const ReplicationBank bank(model, rules, reps, seed, opts.threads);
  return efficiency_comparison(bank, rules, loss, h_grid, opts.refine);
}

}  // namespace tiltrisk
