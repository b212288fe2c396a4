#include <cmath>
#include <numeric>

#include <doctest.h>

#include "selriesz/dgp.hpp"
#include "selriesz/errors.hpp"
#include "selriesz/normal.hpp"

using namespace selriesz;

TEST_CASE("mar design: coefficients and reproducibility") {
  auto b = default_beta(3);
  REQUIRE(b.size() == 3);
  CHECK(b[0] == doctest::Approx(0.4));
  CHECK(b[2] == doctest::Approx(0.4 / 9.0));
  MarDgpConfig cfg;
  cfg.n = 500;
  cfg.seed = 3;
  const Dataset a = gen_mar(cfg), c = gen_mar(cfg);
  for (std::size_t i = 0; i < a.n(); ++i) {
    CHECK(a.x(i, 0) == c.x(i, 0));
    CHECK(a.y(i) == c.y(i));
  }
  cfg.p = 0;
  CHECK_THROWS_AS(gen_mar(cfg), ConfigError);
}

TEST_CASE("mar design: sample moments match the true nuisances") {
  MarDgpConfig cfg;
  cfg.n = 200000;
  cfg.seed = 11;
  const Dataset data = gen_mar(cfg);
  const MarTruth truth(cfg);
  double mean_d = 0, mean_p1 = 0, mean_s = 0, mean_pi = 0, alpha_y = 0, effect = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    auto x = data.row(i);
    mean_d += data.d(i);
    mean_p1 += truth.p1(x);
    mean_s += data.s(i);
    mean_pi += truth.pi_s(data.d(i), x);
    alpha_y += truth.alpha_s(data.d(i), x, data.s(i)) * data.y_or_zero(i);
    effect += truth.g(1, x) - truth.g(0, x);
  }
  const double n = static_cast<double>(data.n());
  CHECK(std::abs(mean_d - mean_p1) / n < 0.005);
  CHECK(std::abs(mean_s - mean_pi) / n < 0.005);
  CHECK(effect / n == doctest::Approx(1.0));
  // IPW with the true representer recovers theta0 (sd of alpha*y is ~7 here).
  CHECK(std::abs(alpha_y / n - 1.0) < 0.06);
}

TEST_CASE("mar design: truth functions") {
  MarDgpConfig cfg;
  const MarTruth t(cfg);
  const std::vector<double> x{0.5, -1.0, 0.2, 0.0, 1.0};
  const double idx = 0.4 * 0.5 - 0.1 * 1.0 + 0.4 / 9 * 0.2 + 0.4 / 25;
  CHECK(t.index(x) == doctest::Approx(idx));
  CHECK(t.p1(x) == doctest::Approx(normal_cdf(idx)));
  CHECK(t.pi_s(1, x) == doctest::Approx(normal_cdf(1.0 + idx)));
  CHECK(t.g(1, x) - t.g(0, x) == doctest::Approx(1.0));
  CHECK(t.alpha_s(1, x, 0) == 0.0);
  CHECK(t.alpha_s(0, x, 1) == doctest::Approx(-1.0 / ((1 - normal_cdf(idx)) * normal_cdf(idx))));
}

// Frozen from an exact rational enumeration of the default design.
TEST_CASE("confounded oracle: bias chain") {
  const auto cfg = default_confounded_config(100, 1);
  const OracleTables t = enumerate_oracle(cfg);
  CHECK(t.theta_0 == doctest::Approx(1.43).epsilon(1e-14));
  CHECK(t.theta_s == doctest::Approx(1.3592030300639155).epsilon(1e-13));
  const double bias = t.theta_0 - t.theta_s;
  CHECK(std::abs(bias - 0.07079696993608459) <= 1e-12);
  CHECK(std::abs(t.cross_moment - bias) <= 1e-12 * std::abs(bias));
  CHECK(t.scale_sq == doctest::Approx(6.014336141639089).epsilon(1e-12));
  CHECK(t.cy2 == doctest::Approx(0.27137907859672805).epsilon(1e-12));
  CHECK(t.cs2 == doctest::Approx(0.15350773032912599).epsilon(1e-12));
  CHECK(t.rho == doctest::Approx(0.1414384586563519).epsilon(1e-12));
  const double prod = t.rho * std::sqrt(t.scale_sq * t.cy2 * t.cs2);
  CHECK(std::abs(prod - bias) <= 1e-10 * std::abs(bias));
  // Dropping the only covariate enumerates the covariate-free short parameter.
  CHECK(enumerate_short_theta(cfg, {true}) == doctest::Approx(t.theta_s).epsilon(1e-14));
  CHECK(std::isfinite(enumerate_short_theta(cfg, {false})));
}

TEST_CASE("confounded design: validation and sampling") {
  auto cfg = default_confounded_config(50000, 4);
  auto [data, tables] = gen_confounded(cfg);
  CHECK(data.n() == 50000);
  CHECK(std::abs(static_cast<double>(data.selected_count()) / 50000.0 - tables.selection_rate) < 0.01);
  CHECK(confounded_level(cfg, data.row(0)) < 2);
  const std::vector<double> off{0.5};
  CHECK_THROWS_AS(confounded_level(cfg, off), ConfigError);

  auto back = confounded_config_from_json(to_json(cfg));
  CHECK(back.sel_probs == cfg.sel_probs);
  auto bad = cfg;
  bad.x_probs = {0.5, 0.6};
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = cfg;
  bad.sel_probs[0][1][0] = 1.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}
