#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "tiltrisk/finite_sample.hpp"

using namespace tiltrisk;
using Catch::Approx;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::invalid_argument;
}

Dataset rows(std::initializer_list<std::initializer_list<double>> r) {
  Dataset d;
  d.y.resize(static_cast<long>(r.size()), static_cast<long>(r.begin()->size()));
  long i = 0;
  for (const auto& row : r) {
    long j = 0;
    for (double v : row) d.y(i, j++) = v;
    ++i;
  }
  return d;
}

SpdMatrix diag14() { return SpdMatrix((Eigen::MatrixXd(2, 2) << 1, 0, 0, 4).finished()); }
SpdMatrix corr_omega() { return SpdMatrix((Eigen::MatrixXd(2, 2) << 1, 0.8, 0.8, 4).finished()); }

double sample_mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }
double sample_var(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / (v.size() - 1);
}

}  // namespace

TEST_CASE("score statistic", "[finite_sample]") {
  const auto bern = ExperimentModel::bernoulli(0.5, 4);
  CHECK(score_statistic(bern, rows({{1}, {0}, {1}, {0}})) == Approx(0.0).margin(1e-15));
  const auto gauss = ExperimentModel::gaussian_location(2.0, 1.5, 2);
  CHECK(score_statistic(gauss, rows({{3}, {1}})) == Approx(0.0).margin(1e-15));
  // one observation one sd above: x = (1/sd) / sqrt(n)
  CHECK(score_statistic(gauss, rows({{3.5}, {2}})) == Approx(1.0 / std::sqrt(2.0)));

  CHECK(kind_of([] { ExperimentModel::bernoulli(0.0, 10); }) == ErrorKind::degenerate_information);
  ExperimentModel edge;
  edge.theta0 = 1.0;
  CHECK(kind_of([&] { score_statistic(edge, rows({{1}, {1}})); }) == ErrorKind::degenerate_information);
}

TEST_CASE("score statistic is approximately standard normal under h = 0", "[finite_sample][slow]") {
  const auto model = ExperimentModel::bernoulli(0.5, 10000);
  std::vector<double> x(10000);
  for (std::size_t r = 0; r < x.size(); ++r) {
    RandomStream rng({11, r});
    x[r] = score_statistic(model, draw_dataset(model, 0.0, rng));
  }
  CHECK(std::abs(sample_mean(x)) < 4.0 / std::sqrt(10000.0));
  CHECK(sample_var(x) == Approx(1.0).epsilon(0.05));
}

TEST_CASE("estimators on fixed datasets", "[finite_sample]") {
  const auto bern = ExperimentModel::bernoulli(0.3, 5);
  CHECK(estimate({EstimatorName::mle}, bern, rows({{1}, {1}, {1}, {1}, {1}})) == 1.0);
  const auto gauss = ExperimentModel::gaussian_location(0.0, 1.0, 5);
  const auto d = rows({{5}, {1}, {4}, {2}, {100}});
  CHECK(estimate({EstimatorName::sample_median}, gauss, d) == 4.0);
  CHECK(estimate({EstimatorName::half_sample_mean}, gauss, d) == Approx(10.0 / 3.0));
  CHECK(estimate({EstimatorName::sample_median}, gauss, rows({{4}, {1}, {3}, {2}})) == 2.5);

  const auto ident = ExperimentModel::overid_mean(0.0, SpdMatrix::identity(2), 3);
  const auto two = rows({{1, 4}, {2, 7}, {0, 1}});  // means 1 and 4
  CHECK(estimate({EstimatorName::gmm_identity}, ident, two) == Approx(2.5));

  const auto weighted = ExperimentModel::overid_mean(0.0, diag14(), 3);
  CHECK(estimate({EstimatorName::mle}, weighted, two) == Approx(0.8 * 1.0 + 0.2 * 4.0));

  // one observation: the estimated covariance is rank one
  CHECK(kind_of([&] { estimate({EstimatorName::gmm_two_step}, weighted, rows({{1, 3}})); }) == ErrorKind::singular);
  CHECK(kind_of([&] { estimate({EstimatorName::gmm_two_step}, bern, rows({{1}})); }) ==
        ErrorKind::unknown_identifier);
  CHECK(kind_of([] { EstimatorSpec::parse("method_of_moments"); }) == ErrorKind::unknown_identifier);
  CHECK(EstimatorSpec::parse("gmm_diag").name == EstimatorName::gmm_diag);
}

TEST_CASE("two-step GMM approaches the known-covariance weighting", "[finite_sample]") {
  const auto model = ExperimentModel::overid_mean(0.0, diag14(), 20000);
  RandomStream rng({3, 0});
  const Dataset d = draw_dataset(model, 0.0, rng);
  const double gls = estimate({EstimatorName::mle}, model, d);
  const double two = estimate({EstimatorName::gmm_two_step}, model, d);
  const double diag = estimate({EstimatorName::gmm_diag}, model, d);
  // weights differ by O(n^-1/2) and multiply a mean gap of O(n^-1/2)
  CHECK(std::abs(two - gls) < 1e-3);
  CHECK(std::abs(diag - gls) < 1e-3);
}

TEST_CASE("influence function and variance", "[finite_sample]") {
  const Eigen::VectorXd g = -Eigen::VectorXd::Ones(2);
  const auto a = influence_and_sigma(g, SpdMatrix::identity(2));
  CHECK(a.sigma2 == Approx(0.5));
  CHECK(a.estimator_coeffs(0) == Approx(0.5));
  CHECK(a.estimator_coeffs(1) == Approx(0.5));
  const auto b = influence_and_sigma(g, diag14());
  CHECK(b.sigma2 == Approx(0.8));
  CHECK(b.estimator_coeffs(0) == Approx(0.8));
  CHECK(b.estimator_coeffs(1) == Approx(0.2));
  // just identified: psi = -m/G scaled, sigma2 = omega / G^2
  const auto c = influence_and_sigma(Eigen::VectorXd::Constant(1, 2.0), SpdMatrix::scalar(3.0));
  CHECK(c.sigma2 == Approx(0.75));
  CHECK(c.estimator_coeffs(0) == Approx(-0.5));
  CHECK(ExperimentModel::overid_mean(0.0, diag14(), 10).sigma() == Approx(std::sqrt(0.8)));
}

TEST_CASE("pathwise derivative", "[finite_sample]") {
  const auto model = ExperimentModel::overid_mean(0.0, corr_omega(), 100);
  const auto generic = pathwise_derivative_check(model, (Eigen::VectorXd(2) << 1.0, 0.3).finished());
  CHECK(generic.passed());
  CHECK(generic.error_ratio == Approx(100.0).epsilon(0.05));
  CHECK(generic.errors[1] < 1e-6 * std::abs(generic.target));

  // nuisance direction: 1' Omega^-1 a = 0
  const Eigen::VectorXd nuisance = corr_omega().matrix() * (Eigen::VectorXd(2) << 1.0, -1.0).finished();
  const auto orth = pathwise_derivative_check(model, nuisance);
  CHECK(orth.target == Approx(0.0).margin(1e-14));
  CHECK(orth.derivatives[0] == Approx(0.0).margin(1e-14));

  // aligned with psi: a = 1 gives the efficient direction; d mu / ds = sigma2 E[u tanh u] / tau^2 * tau^2
  const auto aligned = pathwise_derivative_check(model, Eigen::VectorXd::Ones(2));
  CHECK(aligned.derivatives[1] == Approx(aligned.target).epsilon(1e-5));
  CHECK(kind_of([&] { pathwise_derivative_check(ExperimentModel::bernoulli(0.5, 10), Eigen::VectorXd::Ones(1)); }) ==
        ErrorKind::invalid_argument);
}

TEST_CASE("exact log likelihood ratio is locally normal", "[finite_sample]") {
  const auto model = ExperimentModel::bernoulli(0.5, 10000);
  const boost::math::binomial_distribution<double> null(10000.0, 0.5);
  for (double h : {1.0, -0.5}) {
    double m = 0.0, m2 = 0.0;
    for (long k = 0; k <= 10000; ++k) {
      const double p = boost::math::pdf(null, static_cast<double>(k));
      const double l = bernoulli_log_likelihood_ratio(model, h, k);
      m += p * l;
      m2 += p * l * l;
    }
    const double info = 4.0;
    CHECK(m == Approx(-h * h * info / 2).epsilon(0.05));
    CHECK(m2 - m * m == Approx(h * h * info).epsilon(0.05));
    if (h == 1.0) {
      CHECK(m == Approx(-2.000400106698835).epsilon(1e-9));
      CHECK(m2 - m * m == Approx(4.001066993885105).epsilon(1e-7));
    }
  }
  CHECK(kind_of([&] { model.theta_at(60.0); }) == ErrorKind::parameter_out_of_range);
}

TEST_CASE("Monte Carlo tilted risk", "[finite_sample][slow]") {
  const auto model = ExperimentModel::bernoulli(0.5, 10000);
  const StreamSeed seed{7, 0};

  const auto zero = mc_tilted_risk(model, {EstimatorName::mle}, 0.0, TiltedLossSpec::treatment(1.0), 200, seed);
  CHECK(zero.mean == 1.0);
  CHECK(zero.stderr_ == 0.0);

  const auto est_loss = TiltedLossSpec::estimation(2.0, 25.0);
  const auto est = mc_tilted_risk(model, {EstimatorName::mle}, 0.0, est_loss, 100000, seed);
  const double exact = 1.1546973310722644;  // binomial sum
  CHECK(std::abs(est.mean - exact) < 4 * est.stderr_);
  CHECK(std::abs(est.mean - estimation_minimax_value(0.5, est_loss).value) < 4 * est.stderr_);

  const double dstar = solve_delta_star(1.0, 0.5).delta_star;
  CHECK(dstar == Approx(0.43391267806696215).epsilon(1e-7));
  const auto trt = mc_tilted_risk(model, {EstimatorName::mle}, dstar, TiltedLossSpec::treatment(1.0), 100000, seed);
  CHECK(std::abs(trt.mean - 1.103228832894423) < 4 * trt.stderr_);
  CHECK(std::abs(trt.mean - treatment_risk(dstar, 1.0, 0.5)) < 4 * trt.stderr_);

  CHECK(kind_of([&] {
          mc_tilted_risk(model.with_n(100), {EstimatorName::mle}, 60.0, est_loss, 100, seed);
        }) == ErrorKind::parameter_out_of_range);
}

TEST_CASE("sampling errors of efficient estimators", "[finite_sample][slow]") {
  const long reps = 20000;
  struct Case {
    ExperimentModel model;
    EstimatorName rule;
  };
  const std::vector<Case> cases{
      {ExperimentModel::bernoulli(0.3, 10000), EstimatorName::mle},
      {ExperimentModel::gaussian_location(1.0, 0.35, 1000), EstimatorName::mle},
      {ExperimentModel::overid_mean(0.0, corr_omega(), 10000), EstimatorName::gmm_two_step},
  };
  for (const auto& c : cases) {
    const auto e = scaled_estimator_errors(c.model, {c.rule}, 0.0, reps, {5, 0});
    const double s = c.model.sigma();
    CHECK(std::abs(sample_mean(e)) < 4 * s / std::sqrt(static_cast<double>(reps)));
    CHECK(sample_var(e) == Approx(s * s).epsilon(0.05));
  }
  // the sample median is inefficient: variance pi/2 sigma^2
  const auto med = scaled_estimator_errors(ExperimentModel::gaussian_location(1.0, 1.0, 1001),
                                           {EstimatorName::sample_median}, 0.0, reps, {5, 0});
  CHECK(sample_var(med) == Approx(M_PI / 2).epsilon(0.05));
}

TEST_CASE("worst-case risk over a grid", "[finite_sample]") {
  const auto loss = TiltedLossSpec::treatment(1.0);
  const auto model = ExperimentModel::bernoulli(0.5, 10000);
  const StreamSeed seed{9, 0};

  const auto single = worst_case_risk(model, {EstimatorName::mle}, loss, {0.0}, 500, seed);
  CHECK(single.value == 1.0);
  CHECK(single.worst_h == 0.0);

  const double dstar = solve_delta_star(1.0, 0.5).delta_star;
  std::vector<double> grid;
  for (double m : {-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0}) grid.push_back(m * dstar);
  const auto r = worst_case_risk(model, {EstimatorName::mle}, loss, grid, 50000, seed, {.threads = 1, .refine = 1});
  CHECK(std::abs(std::abs(r.worst_h) - dstar) <= 0.5 * dstar + 1e-12);
  CHECK(r.h_grid.size() == grid.size());

  // estimation risk of a symmetric rule in a symmetric model
  const auto gauss = ExperimentModel::gaussian_location(0.0, 0.35, 400);
  const auto est_loss = TiltedLossSpec::estimation(1.0, 25.0);
  const auto sym = worst_case_risk(gauss, {EstimatorName::sample_median}, est_loss,
                                   default_effect_grid(gauss.sigma(), 3.0, 9), 20000, seed, {.refine = 1});
  for (std::size_t i = 0; i < sym.h_grid.size(); ++i) {
    const std::size_t j = sym.h_grid.size() - 1 - i;
    CHECK(sym.h_grid[i] == Approx(-sym.h_grid[j]).margin(1e-12));
    CHECK(std::abs(sym.means[i] - sym.means[j]) < 3 * std::hypot(sym.stderrs[i], sym.stderrs[j]));
  }
}

TEST_CASE("refinement adds points next to the argmax", "[finite_sample]") {
  const auto model = ExperimentModel::gaussian_location(0.0, 1.0, 100);
  const auto loss = TiltedLossSpec::treatment(1.0);
  const auto grid = default_effect_grid(1.0, 3.0, 7);
  const auto coarse = worst_case_risk(model, {EstimatorName::mle}, loss, grid, 2000, {1, 0}, {.refine = 1});
  const auto fine = worst_case_risk(model, {EstimatorName::mle}, loss, grid, 2000, {1, 0}, {.refine = 3});
  CHECK(fine.h_grid.size() > coarse.h_grid.size());
  CHECK(fine.value >= coarse.value);
  CHECK(std::is_sorted(fine.h_grid.begin(), fine.h_grid.end()));
}

TEST_CASE("bayes risk over grid priors never exceeds the grid sup", "[finite_sample]") {
  const auto model = ExperimentModel::gaussian_location(0.0, 0.5, 200);
  const auto rep = worst_case_risk(model, {EstimatorName::half_sample_mean}, TiltedLossSpec::treatment(1.0),
                                   default_effect_grid(0.5), 3000, {2, 0});
  RandomStream rng({99, 0});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> w(rep.h_grid.size());
    double total = 0.0;
    for (double& x : w) total += (x = rng.uniform());
    for (double& x : w) x /= total;
    w.back() = 1.0 - std::accumulate(w.begin(), w.end() - 1, 0.0);
    if (w.back() < 0.0) continue;
    const auto prior = DiscretePrior::scalar(rep.h_grid, w);
    const double bayes = bayes_tilted_risk(prior, [&](const Eigen::VectorXd& h) {
      const auto it = std::find(rep.h_grid.begin(), rep.h_grid.end(), h(0));
      return rep.means[static_cast<std::size_t>(it - rep.h_grid.begin())];
    });
    CHECK(bayes <= rep.value * (1 + 1e-15));
  }
}

TEST_CASE("reports are reproducible and independent of thread count", "[finite_sample]") {
  const auto loss = TiltedLossSpec::estimation(2.0, 25.0);
  const auto grid = default_effect_grid(0.35, 3.0, 5);
  const auto model = ExperimentModel::gaussian_location(0.0, 0.35, 500);
  auto run = [&](unsigned threads) {
    return worst_case_risk(model, {EstimatorName::sample_median}, loss, grid, 3001, {42, 0}, {.threads = threads});
  };
  const auto a = run(1), b = run(1), c = run(4);
  CHECK(a.value == b.value);
  CHECK(a.stderr_ == b.stderr_);
  CHECK(a.means == c.means);
  CHECK(a.stderrs == c.stderrs);
  CHECK(a.worst_h == c.worst_h);

  const auto gmm = ExperimentModel::overid_mean(0.0, corr_omega(), 1000);
  const std::vector<EstimatorSpec> rules{{EstimatorName::gmm_two_step}, {EstimatorName::gmm_diag}};
  const auto g1 = efficiency_comparison(gmm, rules, TiltedLossSpec::treatment(1.0), default_effect_grid(gmm.sigma()),
                                        3001, {1, 0}, {.threads = 1});
  const auto g3 = efficiency_comparison(gmm, rules, TiltedLossSpec::treatment(1.0), default_effect_grid(gmm.sigma()),
                                        3001, {1, 0}, {.threads = 3});
  CHECK(g1.ranked[0].second.means == g3.ranked[0].second.means);
  CHECK(g1.differences[0].difference == g3.differences[0].difference);

  const auto bern = ExperimentModel::bernoulli(0.4, 300);
  const auto b1 = worst_case_risk(bern, {EstimatorName::mle}, loss, default_effect_grid(bern.sigma()), 2000, {8, 0},
                                  {.threads = 1});
  const auto b2 = worst_case_risk(bern, {EstimatorName::mle}, loss, default_effect_grid(bern.sigma()), 2000, {8, 0},
                                  {.threads = 2});
  CHECK(b1.means == b2.means);
}

TEST_CASE("truncation is inactive inside the localization budget", "[finite_sample]") {
  const auto model = ExperimentModel::bernoulli(0.5, 10000);
  const auto grid = default_effect_grid(model.sigma());
  const auto k25 = worst_case_risk(model, {EstimatorName::mle}, TiltedLossSpec::treatment(1.0, 25.0), grid, 20000,
                                   {4, 0});
  const auto k50 = worst_case_risk(model, {EstimatorName::mle}, TiltedLossSpec::treatment(1.0, 50.0), grid, 20000,
                                   {4, 0});
  CHECK(std::abs(k25.value - k50.value) < k25.stderr_);
  // a binding truncation lowers the risk
  const auto k01 = worst_case_risk(model, {EstimatorName::mle}, TiltedLossSpec::treatment(1.0, 0.1), grid, 20000,
                                   {4, 0});
  CHECK(k01.value < k25.value);
  CHECK(k01.value <= std::exp(0.1) + 1e-12);
}

TEST_CASE("convergence study and efficiency comparison", "[finite_sample]") {
  const auto loss = TiltedLossSpec::treatment(1.0);
  const auto tiny = ExperimentModel::overid_mean(0.0, SpdMatrix(1e-12 * corr_omega().matrix()), 100);
  const auto rows = convergence_study(tiny, {EstimatorName::gmm_two_step}, loss, 3.0, {100, 1000}, 500, {1, 0});
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.report.value == Approx(1.0).margin(1e-5));
    CHECK(r.v_star == Approx(1.0).margin(1e-5));
  }
  CHECK(rows[1].n == 1000);
  CHECK(kind_of([&] { convergence_study(tiny, {EstimatorName::gmm_two_step}, loss, 3.0, {1000, 100}, 500, {1, 0}); }) ==
        ErrorKind::invalid_argument);

  const auto gauss = ExperimentModel::gaussian_location(0.0, 0.35, 400);
  const auto same = efficiency_comparison(gauss, {{EstimatorName::mle}, {EstimatorName::mle}},
                                          TiltedLossSpec::estimation(2.0, 25.0), default_effect_grid(0.35), 2000,
                                          {3, 0});
  CHECK(same.differences[0].difference == 0.0);
  CHECK(same.efficient_first);
  CHECK(kind_of([&] {
          efficiency_comparison(gauss, {{EstimatorName::mle}}, loss, {0.0}, 100, {3, 0});
        }) == ErrorKind::invalid_argument);
  CHECK(kind_of([&] {
          efficiency_comparison(gauss, {{EstimatorName::mle}, {EstimatorName::gmm_diag}}, loss, {0.0}, 100, {3, 0});
        }) == ErrorKind::unknown_identifier);
}
