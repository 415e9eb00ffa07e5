// Unit tests for the numeric substrate: normal CDF, quadrature, 1-D
// maximization and random streams.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "tiltrisk/stat_core.hpp"

using namespace tiltrisk;
using Catch::Approx;

TEST_CASE("std_normal_cdf", "[stat_core]") {
  SECTION("symmetry point and limits") {
    REQUIRE(std_normal_cdf(0.0) == 0.5);
    REQUIRE(std_normal_cdf(INFINITY) == 1.0);
    REQUIRE(std_normal_cdf(-INFINITY) == 0.0);
  }
  SECTION("lower tail against a 40-digit reference") {
    // mpmath ncdf(-1.96) at 40 significant digits
    REQUIRE(std::abs(std_normal_cdf(-1.96) - 0.02499789514822043621282369) < 1e-12);
    // mpmath ncdf(-1) and ncdf(-5)
    REQUIRE(std::abs(std_normal_cdf(-1.0) - 0.15865525393145705141476745) < 1e-12);
    REQUIRE(std::abs(std_normal_cdf(-5.0) - 2.8665157187919391167375233e-7) < 1e-18);
  }
  SECTION("NaN is rejected") {
    REQUIRE_THROWS_AS(std_normal_cdf(NAN), Error);
  }
  SECTION("reflection and monotonicity") {
    double prev = 0.0;
    for (double z = -8.0; z <= 8.0; z += 0.01) {
      REQUIRE(std::abs(std_normal_cdf(z) + std_normal_cdf(-z) - 1.0) <= 1e-14);
      const double p = std_normal_cdf(z);
      REQUIRE(p >= prev);
      prev = p;
    }
  }
  SECTION("log cdf stays finite deep in the tail and matches log(Phi)") {
    for (double z : {-29.9, -10.0, -1.0, 0.0, 2.0}) {
      REQUIRE(log_std_normal_cdf(z) == Approx(std::log(std_normal_cdf(z))).epsilon(1e-13));
    }
    // continuity across the switch to the continued fraction
    REQUIRE(log_std_normal_cdf(-30.0 - 1e-9) == Approx(std::log(std_normal_cdf(-30.0))).epsilon(1e-9));
    REQUIRE(std::isfinite(log_std_normal_cdf(-200.0)));
  }
  SECTION("quantile inverts the cdf") {
    for (double p : {1e-10, 0.025, 0.5, 0.9}) {
      REQUIRE(std_normal_cdf(std_normal_quantile(p)) == Approx(p).epsilon(1e-12));
    }
  }
}

TEST_CASE("Gauss-Hermite rule", "[stat_core]") {
  const QuadratureRule rule = gauss_hermite(80);
  double total = 0.0;
  for (int i = 0; i < rule.order(); ++i) {
    total += rule.weights[i];
    REQUIRE(rule.weights[i] > 0.0);
    REQUIRE(rule.nodes[i] == Approx(-rule.nodes[rule.order() - 1 - i]).margin(1e-13));
  }
  REQUIRE(total == Approx(1.0).epsilon(1e-14));

  SECTION("odd order has a node at zero") {
    const QuadratureRule odd = gauss_hermite(7);
    REQUIRE(odd.nodes[3] == 0.0);
  }
}

TEST_CASE("gaussian_expectation", "[stat_core]") {
  const QuadratureRule& rule = default_hermite_rule();

  SECTION("normalization and second moment") {
    REQUIRE(gaussian_expectation([](double) { return 1.0; }, 3.0, 2.5, rule) ==
            Approx(1.0).epsilon(1e-14));
    REQUIRE(gaussian_expectation([](double x) { return x * x; }, 0.0, 1.0, gauss_hermite(2)) ==
            Approx(1.0).epsilon(1e-14));
  }
  SECTION("exact for polynomials of degree <= 2*order - 1") {
    // E[Z^10] = 9!! = 945 with order 6 (degree limit 11)
    const double m10 = gaussian_expectation([](double x) { return std::pow(x, 10); }, 0.0, 1.0,
                                            gauss_hermite(6));
    REQUIRE(std::abs(m10 - 945.0) <= 1e-13 * 945.0);
    // E[(1 + 2X)^3], X ~ N(1, 4): 1+2X ~ N(3, 16): 27 + 3*3*16 = 171
    const double cubic = gaussian_expectation(
        [](double x) { return std::pow(1.0 + 2.0 * x, 3); }, 1.0, 4.0, gauss_hermite(2));
    REQUIRE(std::abs(cubic - 171.0) <= 1e-13 * 171.0);
  }
  SECTION("moment generating function at order 40") {
    const double mgf = gaussian_expectation([](double x) { return std::exp(x); }, 0.0, 1.0,
                                            gauss_hermite(40));
    REQUIRE(std::abs(mgf - std::exp(0.5)) <= 1e-10);
  }
  SECTION("linearity and shift invariance") {
    auto f = [](double x) { return std::cos(x) + x * x; };
    auto g = [](double x) { return std::exp(-x * x); };
    const double lhs = gaussian_expectation([&](double x) { return 2.0 * f(x) - 3.0 * g(x); }, 0.4, 1.7, rule);
    const double rhs = 2.0 * gaussian_expectation(f, 0.4, 1.7, rule) -
                       3.0 * gaussian_expectation(g, 0.4, 1.7, rule);
    REQUIRE(lhs == Approx(rhs).epsilon(1e-13));
    const double shifted = gaussian_expectation([&](double x) { return f(x + 0.4); }, 0.0, 1.7, rule);
    REQUIRE(shifted == Approx(gaussian_expectation(f, 0.4, 1.7, rule)).epsilon(1e-13));
  }
  SECTION("non-finite integrand is reported") {
    REQUIRE_THROWS_MATCHES(
        gaussian_expectation([](double x) { return x > 3.0 ? INFINITY : 1.0; }, 0.0, 1.0, rule),
        Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
          return e.kind() == ErrorKind::non_finite_integrand;
        }));
  }
  SECTION("invalid variance") {
    REQUIRE_THROWS_AS(gaussian_expectation([](double) { return 1.0; }, 0.0, 0.0, rule), Error);
  }
  SECTION("partial expectation recovers normal probabilities") {
    const double p = gaussian_expectation_between([](double) { return 1.0; }, 1.0, 4.0, -1.0, 3.0);
    REQUIRE(p == Approx(std_normal_cdf(1.0) - std_normal_cdf(-1.0)).epsilon(1e-14));
  }
}

TEST_CASE("quadrature agrees with Monte Carlo on a truncated tilt", "[stat_core]") {
  auto f = [](double x) { return std::exp(std::min(x * x, 25.0) / 4.0); };
  const double quad = gaussian_expectation(f, 0.0, 1.0, gauss_hermite(80));
  RandomStream rng({20260101, 0});
  constexpr int draws = 1'000'000;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double v = f(rng.normal());
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
  REQUIRE(std::abs(quad - mean) <= 4.0 * se);
}

TEST_CASE("maximize_1d", "[stat_core]") {
  SECTION("quadratic") {
    const Maximum m = maximize_1d([](double x) { return -(x - 2.0) * (x - 2.0); }, 0.0, 5.0, 1e-8);
    REQUIRE(m.argmax == Approx(2.0).margin(1e-8));
    REQUIRE(m.value == Approx(0.0).margin(1e-15));
  }
  SECTION("x Phi(-x) against a dense grid") {
    auto f = [](double x) { return x * std_normal_cdf(-x); };
    // oracle: plain scan with step 1e-5 over [0, 10]
    double best_x = 0.0;
    double best = -1.0;
    for (int i = 0; i <= 1'000'000; ++i) {
      const double x = i * 1e-5;
      const double v = x * 0.5 * std::erfc(x / std::numbers::sqrt2);
      if (v > best) {
        best = v;
        best_x = x;
      }
    }
    const Maximum m = maximize_1d(f, 0.0, 10.0, 1e-6);
    REQUIRE(std::abs(m.argmax - best_x) <= 1e-5);
    REQUIRE(m.argmax == Approx(0.7518).margin(1e-3));
    REQUIRE(m.value == f(m.argmax));
  }
  SECTION("constant objective returns the leftmost grid point") {
    const Maximum m = maximize_1d([](double) { return 3.0; }, -1.0, 1.0, 1e-8);
    REQUIRE(m.argmax == -1.0);
    REQUIRE(m.value == 3.0);
  }
  SECTION("boundary maximum is a bracket failure unless accepted") {
    auto increasing = [](double x) { return x; };
    REQUIRE_THROWS_MATCHES(maximize_1d(increasing, 0.0, 1.0, 1e-8), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::bracket_failure;
                           }));
    const Maximum m = maximize_1d(increasing, 0.0, 1.0, 1e-8, {.boundary = BoundaryPolicy::accept});
    REQUIRE(m.argmax == Approx(1.0).margin(1e-8));
  }
  SECTION("argmax is invariant under positive scaling") {
    auto f = [](double x) { return std::sin(x) * std::exp(-0.1 * x); };
    const Maximum a = maximize_1d(f, 0.0, 3.0, 1e-9);
    const Maximum b = maximize_1d([&](double x) { return 250.0 * f(x); }, 0.0, 3.0, 1e-9);
    REQUIRE(a.argmax == Approx(b.argmax).margin(1e-8));
    REQUIRE(b.value == Approx(250.0 * a.value).epsilon(1e-12));
  }
  SECTION("multimodal objective: grid phase finds the global peak") {
    auto f = [](double x) { return std::exp(-(x - 1) * (x - 1)) + 2.0 * std::exp(-50 * (x - 4) * (x - 4)); };
    const Maximum m = maximize_1d(f, -2.0, 6.0, 1e-9);
    REQUIRE(m.argmax == Approx(4.0).margin(1e-3));
  }
}

TEST_CASE("SpdMatrix validation", "[stat_core]") {
  Eigen::MatrixXd m(2, 2);
  m << 2.0, 0.5, 0.5, 1.0;
  const SpdMatrix spd(m);
  const Eigen::MatrixXd root = spd.inverse_sqrt();
  REQUIRE((root * root - spd.inverse()).cwiseAbs().maxCoeff() < 1e-13);
  REQUIRE((spd.cholesky_lower() * spd.cholesky_lower().transpose() - m).cwiseAbs().maxCoeff() < 1e-14);

  Eigen::MatrixXd asym = m;
  asym(0, 1) = 0.6;
  REQUIRE_THROWS_AS(SpdMatrix(asym), Error);
  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  REQUIRE_THROWS_AS(SpdMatrix(indefinite), Error);
}

TEST_CASE("random streams", "[stat_core]") {
  SECTION("same seed gives identical sequences") {
    RandomStream a({7, 3});
    RandomStream b = derive_stream({7, 3});
    bool same = true;
    for (int i = 0; i < 1'000'000; ++i) {
      same = same && (a.uniform() == b.uniform());
    }
    REQUIRE(same);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.normal() == b.normal());
  }
  SECTION("neighbouring stream indices are uncorrelated") {
    RandomStream a({11, 0});
    RandomStream b({11, 1});
    constexpr int n = 100'000;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
      const double x = a.normal();
      const double y = b.normal();
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
    REQUIRE(std::abs(corr) <= 3.0 / std::sqrt(static_cast<double>(n)));
  }
  SECTION("Bernoulli(0.5) frequency") {
    RandomStream rng({5, 0});
    constexpr int n = 1'000'000;
    int ones = 0;
    for (int i = 0; i < n; ++i) ones += rng.bernoulli(0.5) ? 1 : 0;
    REQUIRE(std::abs(ones / static_cast<double>(n) - 0.5) <= 0.0015);
  }
  SECTION("normal draws have unit variance and uniforms stay open") {
    RandomStream rng({99, 42});
    constexpr int n = 200'000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
      const double z = rng.normal();
      s += z;
      ss += z * z;
      const double u = rng.uniform();
      REQUIRE(u > 0.0);
      REQUIRE(u < 1.0);
    }
    REQUIRE(std::abs(s / n) < 4.0 / std::sqrt(n));
    REQUIRE(ss / n == Approx(1.0).margin(0.015));
  }
}
