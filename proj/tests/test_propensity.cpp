#include <cmath>
#include <numeric>
#include <random>

#include <doctest.h>

#include "selriesz/dgp.hpp"
#include "selriesz/errors.hpp"
#include "selriesz/propensity.hpp"
#include "selriesz/rng.hpp"

using namespace selriesz;

TEST_CASE("logistic with one binary feature matches the saturated MLE") {
  // Group x=0: 30 of 100 positive; group x=1: 70 of 100 positive.
  RowMatrix x(200, 1);
  std::vector<std::uint8_t> y(200);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = i < 100 ? 0.0 : 1.0;
    y[static_cast<std::size_t>(i)] = i < 100 ? (i < 30) : (i < 170);
  }
  const LogisticModel m = fit_logistic(x, y, {}, 0.0);
  CHECK(m.converged);
  const std::vector<double> x0{0.0}, x1{1.0};
  CHECK(m.predict(x0) == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(m.predict(x1) == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(m.linear_predictor(x1) - m.linear_predictor(x0) == doctest::Approx(2.0 * std::log(7.0 / 3.0)).epsilon(1e-9));
}

TEST_CASE("logistic recovers generating coefficients") {
  Rng rng(3);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  const Eigen::Index n = 40000;
  RowMatrix x(n, 2);
  std::vector<std::uint8_t> y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = z(rng);
    x(i, 1) = 2.0 * z(rng) + 1.0;
    const double eta = 0.5 + 1.0 * x(i, 0) - 0.75 * x(i, 1);
    y[static_cast<std::size_t>(i)] = u(rng) < 1.0 / (1.0 + std::exp(-eta));
  }
  const LogisticModel m = fit_logistic(x, y);
  // Back-transform standardized slopes.
  CHECK(m.coef[1] / m.scale[0] == doctest::Approx(1.0).epsilon(0.05));
  CHECK(m.coef[2] / m.scale[1] == doctest::Approx(-0.75).epsilon(0.05));
  const std::vector<double> origin{0.0, 0.0};
  CHECK(m.linear_predictor(origin) == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("weights act as frequency weights") {
  RowMatrix x(4, 1);
  x << 0, 0, 1, 1;
  std::vector<std::uint8_t> y{0, 1, 0, 1};
  std::vector<double> w{3, 1, 1, 3};
  const LogisticModel m = fit_logistic(x, y, w, 0.0);
  const std::vector<double> x0{0.0}, x1{1.0};
  CHECK(m.predict(x0) == doctest::Approx(0.25).epsilon(1e-8));
  CHECK(m.predict(x1) == doctest::Approx(0.75).epsilon(1e-8));
}

TEST_CASE("separation and degenerate labels") {
  RowMatrix x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  std::vector<std::uint8_t> y{0, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(fit_logistic(x, y, {}, 0.0), SeparationError);
  // A small ridge keeps separable data bounded.
  const LogisticModel m = fit_logistic(x, y, {}, 1e-3);
  CHECK(m.coef.allFinite());
  const std::vector<double> far{3.0};
  CHECK(m.predict(far) > 0.95);
  std::vector<std::uint8_t> ones(6, 1);
  CHECK_THROWS_AS(fit_logistic(x, ones), TrainError);
  std::vector<std::uint8_t> short_labels(3, 1);
  CHECK_THROWS_AS(fit_logistic(x, short_labels), DimensionError);
}

TEST_CASE("ols") {
  RowMatrix x(5, 2);
  x << 1, 0, 2, 1, 3, 0, 4, 1, 5, 0;
  std::vector<double> y(5);
  for (int i = 0; i < 5; ++i) y[static_cast<std::size_t>(i)] = 1.0 + 2.0 * x(i, 0) - 3.0 * x(i, 1);
  const LinearModel m = fit_linear(x, y);
  CHECK(m.coef[0] == doctest::Approx(1.0));
  CHECK(m.coef[1] == doctest::Approx(2.0));
  CHECK(m.coef[2] == doctest::Approx(-3.0));
  const std::vector<double> q{10.0, 1.0};
  CHECK(m.predict(q) == doctest::Approx(18.0));
}

TEST_CASE("propensity models on the MAR design") {
  MarDgpConfig cfg;
  cfg.n = 20000;
  cfg.seed = 21;
  const Dataset data = gen_mar(cfg);
  const MarTruth truth(cfg);
  std::vector<std::size_t> rows(data.n());
  std::iota(rows.begin(), rows.end(), 0);
  ForestConfig fc;
  fc.n_trees = 30;
  const auto p1 = PropensityModel::fit(data, rows, PropensityTarget::kTreatment, PropensityKind::kLogistic, 0.01, fc);
  const auto pis = PropensityModel::fit(data, rows, PropensityTarget::kSelection, PropensityKind::kLogistic, 0.01, fc);
  const auto pf = PropensityModel::fit(data, rows, PropensityTarget::kSelection, PropensityKind::kForest, 0.01, fc);
  double e1 = 0, e2 = 0, e3 = 0;
  for (std::size_t i = 0; i < 2000; ++i) {
    auto x = data.row(i);
    e1 += std::abs(p1.predict(0, x) - truth.p1(x));
    e2 += std::abs(pis.predict(1, x) - truth.pi_s(1, x));
    e3 += std::abs(pf.predict(0, x) - truth.pi_s(0, x));
  }
  // Logistic is a near-probit fit here; the forest is coarser.
  CHECK(e1 / 2000 < 0.02);
  CHECK(e2 / 2000 < 0.02);
  CHECK(e3 / 2000 < 0.06);
  const std::vector<double> extreme{-40, 0, 0, 0, 0};
  CHECK(p1.predict(0, extreme) == doctest::Approx(0.01));
  CHECK(p1.clipped(0, extreme));
  CHECK_THROWS_AS(
      PropensityModel::fit(data, rows, PropensityTarget::kTreatment, PropensityKind::kLogistic, 0.7, fc), ConfigError);
}

TEST_CASE("a fully selected arm is the constant one") {
  MarDgpConfig cfg;
  cfg.n = 2000;
  cfg.observe_all = true;
  const Dataset data = gen_mar(cfg);
  std::vector<std::size_t> rows(data.n());
  std::iota(rows.begin(), rows.end(), 0);
  const auto m =
      PropensityModel::fit(data, rows, PropensityTarget::kSelection, PropensityKind::kLogistic, 0.01, ForestConfig{});
  CHECK(m.predict(1, data.row(0)) == 1.0);
  CHECK(m.predict(0, data.row(0)) == 1.0);
  CHECK(!m.clipped(0, data.row(0)));
  CHECK_THROWS_AS(parse_propensity_kind("svm"), ConfigError);
}
