#pragma once

// Numeric substrate: normal distribution functions, Gaussian quadrature,
// bounded 1-D maximization and reproducible random streams.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>
#include <boost/random/chi_squared_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include "tiltrisk/error.hpp"

namespace tiltrisk {

// ---------------------------------------------------------------------------
// Normal distribution

/// Standard normal CDF, computed as erfc(-z/sqrt(2))/2 so that the lower tail
/// keeps full relative precision. Throws on NaN.
inline double std_normal_cdf(double z) {
  if (std::isnan(z)) throw Error(ErrorKind::invalid_argument, "std_normal_cdf of NaN");
  return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0);
}

inline double std_normal_pdf(double z) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

/// log Phi(z), finite far into the lower tail (Mills-ratio continued fraction
/// below z = -30 where Phi itself underflows).
inline double log_std_normal_cdf(double z) {
  if (std::isnan(z)) throw Error(ErrorKind::invalid_argument, "log_std_normal_cdf of NaN");
  if (z > 0.0) return std::log1p(-std_normal_cdf(-z));
  if (z > -30.0) return std::log(std_normal_cdf(z));
  const double t = -z;
  double frac = t;
  for (int k = 40; k >= 1; --k) frac = t + k / frac;
  return -0.5 * t * t - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(frac);
}

/// Inverse of std_normal_cdf on (0, 1).
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "normal quantile needs p in (0,1)");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// ---------------------------------------------------------------------------
// Symmetric positive definite matrices

class SpdMatrix {
 public:
  explicit SpdMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
    require(m_.rows() > 0 && m_.rows() == m_.cols(), ErrorKind::invalid_argument,
            "SPD matrix must be square and nonempty");
    require(m_.allFinite(), ErrorKind::invalid_argument, "SPD matrix has non-finite entries");
    const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
    require((m_ - m_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
            ErrorKind::invalid_argument, "matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m_);
    require(eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() > 0.0,
            ErrorKind::singular, "matrix is not positive definite");
    eigenvalues_ = eig.eigenvalues();
    eigenvectors_ = eig.eigenvectors();
    llt_.compute(m_);
    require(llt_.info() == Eigen::Success, ErrorKind::singular, "Cholesky factorization failed");
  }

  static SpdMatrix identity(int dim) { return SpdMatrix(Eigen::MatrixXd::Identity(dim, dim)); }
  static SpdMatrix scalar(double value) { return SpdMatrix(Eigen::MatrixXd::Constant(1, 1, value)); }

  int dim() const noexcept { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& matrix() const noexcept { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
  Eigen::MatrixXd inverse() const {
    return llt_.solve(Eigen::MatrixXd::Identity(dim(), dim()));
  }
  Eigen::MatrixXd cholesky_lower() const { return llt_.matrixL(); }

  /// Symmetric inverse square root V diag(1/sqrt(ev)) V^T.
  Eigen::MatrixXd inverse_sqrt() const {
    return eigenvectors_ * eigenvalues_.cwiseSqrt().cwiseInverse().asDiagonal() *
           eigenvectors_.transpose();
  }

 private:
  Eigen::MatrixXd m_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

// ---------------------------------------------------------------------------
// Quadrature

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  int order() const noexcept { return static_cast<int>(nodes.size()); }
};

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(0,1): nodes ascending and symmetric,
/// weights summing to one. Roots are found by Newton iteration on the
/// orthonormal Hermite recurrence, which keeps tail weights accurate in
/// relative terms.
inline QuadratureRule gauss_hermite(int order) {
  require(order >= 1 && order <= 400, ErrorKind::invalid_argument,
          "Gauss-Hermite order must be in [1, 400]");
  const int n = order;
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  std::vector<double> x(n), w(n);
  double z = 0.0;
  double pp = 0.0;
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
  if (n % 2 == 1) x[half - 1] = 0.0;

  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    // physicists' root x[i] (descending) -> probabilists' node, ascending order
    rule.nodes[n - 1 - i] = std::numbers::sqrt2 * x[i];
    rule.weights[n - 1 - i] = w[i] * inv_sqrt_pi;
  }
  return rule;
}

/// Gauss-Legendre rule on [-1, 1], nodes ascending.
inline QuadratureRule gauss_legendre(int order) {
  require(order >= 1 && order <= 1000, ErrorKind::invalid_argument,
          "Gauss-Legendre order must be in [1, 1000]");
  const int n = order;
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int half = (n + 1) / 2;
  for (int i = 1; i <= half; ++i) {
    double z = std::cos(std::numbers::pi * (i - 0.25) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0;
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-16) break;
    }
    rule.nodes[i - 1] = -z;
    rule.nodes[n - i] = z;
    rule.weights[i - 1] = 2.0 / ((1.0 - z * z) * pp * pp);
    rule.weights[n - i] = rule.weights[i - 1];
  }
  if (n % 2 == 1) rule.nodes[half - 1] = 0.0;
  return rule;
}

inline constexpr int kDefaultHermiteOrder = 80;

/// Shared order-80 rule; computed once.
inline const QuadratureRule& default_hermite_rule() {
  static const QuadratureRule rule = gauss_hermite(kDefaultHermiteOrder);
  return rule;
}

inline const QuadratureRule& default_legendre_rule() {
  static const QuadratureRule rule = gauss_legendre(32);
  return rule;
}

/// E[f(X)] for X ~ N(mean, variance) as sum_i w_i f(mean + sqrt(variance) z_i).
template <class F>
double gaussian_expectation(F&& f, double mean, double variance, const QuadratureRule& rule) {
  require(variance > 0.0 && std::isfinite(variance) && std::isfinite(mean),
          ErrorKind::invalid_argument, "gaussian_expectation needs finite mean and variance > 0");
  const double sd = std::sqrt(variance);
  double sum = 0.0;
  for (int i = 0; i < rule.order(); ++i) {
    const double value = f(mean + sd * rule.nodes[i]);
    if (!std::isfinite(value)) {
      throw Error(ErrorKind::non_finite_integrand,
                  "integrand is not finite at x = " + std::to_string(mean + sd * rule.nodes[i]));
    }
    sum += rule.weights[i] * value;
  }
  return sum;
}

template <class F>
double gaussian_expectation(F&& f, double mean, double variance) {
  return gaussian_expectation(std::forward<F>(f), mean, variance, default_hermite_rule());
}

/// Partial expectation E[f(X) 1{a <= X <= b}] for X ~ N(mean, variance) by
/// composite Gauss-Legendre on the standardized interval. Used where the
/// integrand has known kinks (truncated losses): split there and integrate
/// each smooth piece.
template <class F>
double gaussian_expectation_between(F&& f, double mean, double variance, double a, double b,
                                    int panels = 16) {
  require(variance > 0.0, ErrorKind::invalid_argument, "variance must be positive");
  require(std::isfinite(a) && std::isfinite(b) && a <= b, ErrorKind::invalid_argument,
          "partial expectation needs a finite interval a <= b");
  if (a == b) return 0.0;
  const double sd = std::sqrt(variance);
  const double za = (a - mean) / sd;
  const double zb = (b - mean) / sd;
  const QuadratureRule& gl = default_legendre_rule();
  const double width = (zb - za) / panels;
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double left = za + p * width;
    const double mid = left + 0.5 * width;
    for (int i = 0; i < gl.order(); ++i) {
      const double z = mid + 0.5 * width * gl.nodes[i];
      const double value = f(mean + sd * z);
      if (!std::isfinite(value)) {
        throw Error(ErrorKind::non_finite_integrand,
                    "integrand is not finite at x = " + std::to_string(mean + sd * z));
      }
      sum += 0.5 * width * gl.weights[i] * value * std_normal_pdf(z);
    }
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Bounded 1-D maximization

struct Maximum {
  double argmax;
  double value;
};

enum class BoundaryPolicy {
  fail,    // grid maximum on lo or hi -> bracket failure
  accept,  // refine inside the boundary cell and allow the endpoint itself
};

struct MaximizeOptions {
  int grid_points = 2049;
  BoundaryPolicy boundary = BoundaryPolicy::fail;
};

namespace detail {

template <class F>
Maximum golden_section_max(F& f, double a, double b, double tol) {
  constexpr double r = 0.6180339887498949;
  double c = b - r * (b - a);
  double d = a + r * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int it = 0; it < 300; ++it) {
    const double width = b - a;
    if (width <= tol) break;
    if (width <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(a), std::abs(b)))
      break;
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc >= fd ? Maximum{c, fc} : Maximum{d, fd};
}

}  // namespace detail

/// Global-then-local maximization on [lo, hi]: a uniform grid scan locates the
/// best cell (ties go to the smallest argument), then golden-section search
/// refines inside the two cells around it.
///
/// A flat grid returns (lo, f(lo)). With BoundaryPolicy::fail a grid maximum on
/// either endpoint throws bracket_failure so the caller can widen.
template <class F>
Maximum maximize_1d(F&& f, double lo, double hi, double tol, MaximizeOptions options = {}) {
  require(std::isfinite(lo) && std::isfinite(hi) && lo < hi, ErrorKind::invalid_argument,
          "maximize_1d needs finite lo < hi");
  require(tol > 0.0, ErrorKind::invalid_argument, "maximize_1d needs tol > 0");
  const int n = std::max(options.grid_points, 1024);
  const double step = (hi - lo) / (n - 1);

  auto eval = [&](double x) {
    const double v = f(x);
    if (std::isnan(v)) throw Error(ErrorKind::invalid_argument, "objective is NaN");
    return v;
  };

  int best = 0;
  double best_value = eval(lo);
  double worst_value = best_value;
  for (int i = 1; i < n; ++i) {
    const double x = (i == n - 1) ? hi : lo + i * step;
    const double v = eval(x);
    if (v > best_value) {
      best_value = v;
      best = i;
    }
    worst_value = std::min(worst_value, v);
  }
  if (worst_value == best_value) return {lo, best_value};

  const auto grid_x = [&](int i) { return i == n - 1 ? hi : lo + i * step; };
  if ((best == 0 || best == n - 1) && options.boundary == BoundaryPolicy::fail) {
    throw Error(ErrorKind::bracket_failure,
                "grid maximum at the " + std::string(best == 0 ? "lower" : "upper") +
                    " end of [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  const double a = grid_x(std::max(best - 1, 0));
  const double b = grid_x(std::min(best + 1, n - 1));
  Maximum refined = detail::golden_section_max(eval, a, b, tol);
  if (refined.value > best_value) return refined;
  return {grid_x(best), best_value};
}

// ---------------------------------------------------------------------------
// Random streams

struct StreamSeed {
  std::uint64_t root_seed = 0;
  std::uint64_t stream_index = 0;
};

/// Deterministic generator keyed by (root_seed, stream_index). Normals use
/// Boost's ziggurat sampler, uniforms take 53 bits and are strictly inside (0,1).
class RandomStream {
 public:
  explicit RandomStream(StreamSeed seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed.root_seed),
                      static_cast<std::uint32_t>(seed.root_seed >> 32),
                      static_cast<std::uint32_t>(seed.stream_index),
                      static_cast<std::uint32_t>(seed.stream_index >> 32),
                      0x7417u};
    engine_.seed(seq);
  }

  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(engine_); }

  bool bernoulli(double p) { return uniform() < p; }

  double chi_squared(double dof) {
    return boost::random::chi_squared_distribution<double>(dof)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  boost::random::normal_distribution<double> normal_;
};

inline RandomStream derive_stream(StreamSeed seed) { return RandomStream(seed); }

}  // namespace tiltrisk
