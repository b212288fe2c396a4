#include <cmath>
#include <numeric>
#include <random>

#include <doctest.h>

#include "selriesz/dgp.hpp"
#include "selriesz/errors.hpp"
#include "selriesz/feature_map.hpp"
#include "selriesz/forest.hpp"
#include "selriesz/parallel.hpp"
#include "selriesz/rng.hpp"

using namespace selriesz;

namespace {

// Randomized treatment with P(D=1) = 0.5 and selection P(S=1|D=d) = 0.8 (d=1)
// or 0.6 (d=0), independent of two uniform covariates.
Dataset randomized(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowMatrix x(static_cast<Eigen::Index>(n), 2);
  std::vector<std::uint8_t> d(n), s(n);
  std::vector<std::optional<double>> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x(static_cast<Eigen::Index>(i), 0) = u(rng);
    x(static_cast<Eigen::Index>(i), 1) = u(rng);
    d[i] = u(rng) < 0.5;
    s[i] = u(rng) < (d[i] ? 0.8 : 0.6);
    if (s[i]) y[i] = 2.0 * d[i] + (x(static_cast<Eigen::Index>(i), 0) > 0.5 ? 1.0 : 0.0);
  }
  return Dataset::create(std::move(x), std::move(d), std::move(s), std::move(y), {"x1", "x2"});
}

std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> r(d.n());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

ForestConfig small_config() {
  ForestConfig c;
  c.n_trees = 20;
  c.min_leaf = 10;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  ForestConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_trees = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ForestConfig{};
  c.subsample_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ForestConfig{};
  c.multitask_weight = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ForestConfig{};
  c.honest = true;
  c.mtry = 2;
  CHECK(ForestConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("feature maps") {
  const Dataset data = randomized(200, 1);
  const FeatureMap fm = FeatureMap::arm_linear(data);
  CHECK(fm.dim() == 6);
  std::vector<double> r(6), m(6);
  const std::vector<double> x{0.3, 0.7};
  fm.eval(1, x, 0, r);
  for (double v : r) CHECK(v == 0.0);
  fm.eval(1, x, 1, r);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == 0.0);
  fm.moment_eval(x, m);
  std::vector<double> r0(6);
  fm.eval(0, x, 1, r0);
  for (std::size_t a = 0; a < 6; ++a) CHECK(m[a] == doctest::Approx(r[a] - r0[a]));
  auto blocks = fm.blocks();
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0].size() + blocks[1].size() == 6);
  const FeatureMap back = FeatureMap::from_json(fm.to_json());
  back.eval(1, x, 1, r0);
  for (std::size_t a = 0; a < 6; ++a) CHECK(r0[a] == r[a]);
  CHECK(FeatureMap::intercepts(2).dim() == 2);
  CHECK_THROWS_AS(parse_feature_map_kind("cubic"), ConfigError);
}

TEST_CASE("moment system solve") {
  Eigen::MatrixXd j(2, 2);
  j << 2.0, 0.5, 0.5, 1.0;
  Eigen::VectorXd m(2);
  m << 1.0, -1.0;
  const NodeSolution s = solve_moment_system(j, m, 10, 0.0);
  const Eigen::VectorXd exact = j.inverse() * m;
  CHECK((s.beta - exact).norm() < 1e-5);
  CHECK(s.ridge_used == doctest::Approx(1e-6 * 1.5));

  // Rank-deficient J: the ridge keeps the solve finite.
  Eigen::MatrixXd sing(2, 2);
  sing << 1.0, 1.0, 1.0, 1.0;
  const NodeSolution r = solve_moment_system(sing, m, 10, 0.0);
  CHECK(r.beta.allFinite());
  CHECK(r.ridge_used > 0.0);

  Eigen::MatrixXd bad = j;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(solve_moment_system(bad, m, 10, 0.0), SingularNodeError);
}

TEST_CASE("intercept node solves the inverse cell shares") {
  const Dataset data = randomized(2000, 2);
  const auto rows = all_rows(data);
  double n11 = 0, n01 = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.s(i) && data.d(i)) ++n11;
    if (data.s(i) && !data.d(i)) ++n01;
  }
  const NodeSolution s = solve_node(rows, data, FeatureMap::intercepts(2), 0.0);
  const double n = static_cast<double>(data.n());
  CHECK(s.beta[0] == doctest::Approx(n / n11).epsilon(1e-5));
  CHECK(s.beta[1] == doctest::Approx(-n / n01).epsilon(1e-5));
  // Weights of 2 everywhere leave the solution unchanged.
  std::vector<double> w(rows.size(), 2.0);
  const NodeSolution sw = solve_node(rows, w, data, FeatureMap::intercepts(2), 0.0);
  CHECK(sw.beta[0] == doctest::Approx(s.beta[0]));
}

TEST_CASE("split score equals the summed child criterion") {
  const Dataset data = randomized(600, 3);
  const FeatureMap fm = FeatureMap::arm_linear(data);
  const auto rows = all_rows(data);
  const SplitCandidate split{0, 0.4};
  std::vector<std::size_t> left, right;
  for (auto i : rows) (data.x(i, 0) <= 0.4 ? left : right).push_back(i);
  double want = 0.0;
  for (const auto* child : {&left, &right}) {
    const NodeSolution s = solve_node(*child, data, fm, 0.0);
    want += s.count * s.beta.dot(s.j * s.beta);
  }
  const double got = split_score(rows, split, data, fm, 0.0);
  CHECK(got == doctest::Approx(want).epsilon(1e-6));
  // Weight zero is the pure representer criterion.
  CHECK(split_score(rows, split, data, fm, 0.0, {1, 0.0}) == got);
  CHECK(split_score(rows, split, data, fm, 0.0, {1, 0.5}) != got);
  // A child below min_leaf in a selected cell is infeasible.
  CHECK(split_score(rows, SplitCandidate{0, 0.01}, data, fm, 0.0, {20, 0.0}) == kInfeasibleSplit);
  CHECK_THROWS_AS(split_score(rows, SplitCandidate{5, 0.0}, data, fm, 0.0), DimensionError);
}

TEST_CASE("intercept forest recovers a constant representer") {
  const Dataset data = randomized(4000, 4);
  const FeatureMap fm = FeatureMap::intercepts(2);
  ForestConfig cfg = small_config();
  cfg.min_leaf = 20;
  cfg.honest = true;
  const MomentForest f = train_forest(data, all_rows(data), &fm, nullptr, cfg);
  double a1 = 0.0, a0 = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::vector<double> x{(k % 10 + 0.5) / 10.0, (k / 10 + 0.5) / 10.0};
    a1 += f.predict_alpha(1, x, 1) / 100.0;
    a0 += f.predict_alpha(0, x, 1) / 100.0;
  }
  CHECK(a1 == doctest::Approx(1.0 / (0.5 * 0.8)).epsilon(0.1));
  CHECK(a0 == doctest::Approx(-1.0 / (0.5 * 0.6)).epsilon(0.1));
  const std::vector<double> x{0.5, 0.5};
  CHECK(f.predict_alpha(1, x, 0) == 0.0);
  const std::vector<double> wrong{0.5};
  CHECK_THROWS_AS(f.predict_alpha(1, wrong, 1), DimensionError);
  CHECK_THROWS_AS(f.predict_g(1, x), ConfigError);
}

TEST_CASE("regression head tracks group means") {
  const Dataset data = randomized(3000, 6);
  const RegressionTarget t = RegressionTarget::outcome(data);
  const MomentForest f = train_forest(data, all_rows(data), nullptr, &t, small_config());
  const std::vector<double> lo{0.2, 0.5}, hi{0.8, 0.5};
  CHECK(f.predict_g(1, lo) == doctest::Approx(2.0).epsilon(0.05));
  CHECK(f.predict_g(1, hi) == doctest::Approx(3.0).epsilon(0.05));
  CHECK(f.predict_g(0, hi) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(f.n_groups() == 2);
}

TEST_CASE("training is reproducible across thread counts and survives serialization") {
  MarDgpConfig dc;
  dc.n = 1500;
  const Dataset data = gen_mar(dc);
  const FeatureMap fm = FeatureMap::arm_linear(data);
  const RegressionTarget t = RegressionTarget::outcome(data);
  ForestConfig cfg = small_config();
  cfg.mtry = 3;
  set_num_threads(1);
  const MomentForest a = train_forest(data, all_rows(data), &fm, &t, cfg);
  set_num_threads(4);
  const MomentForest b = train_forest(data, all_rows(data), &fm, &t, cfg);
  set_num_threads(0);
  CHECK(a.to_json() == b.to_json());

  const MomentForest c = MomentForest::from_json(nlohmann::json::parse(a.to_json().dump()));
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(c.predict_alpha(data.d(i), data.row(i), 1) == a.predict_alpha(data.d(i), data.row(i), 1));
    CHECK(c.predict_g(1, data.row(i)) == a.predict_g(1, data.row(i)));
  }
  auto j = a.to_json();
  j["version"] = 99;
  CHECK_THROWS_AS(MomentForest::from_json(j), ParseError);
  j = a.to_json();
  j["trees"][0]["nodes"][0][2] = 100000;
  CHECK_THROWS_AS(MomentForest::from_json(j), ParseError);

  cfg.seed = 6;
  const MomentForest d = train_forest(data, all_rows(data), &fm, &t, cfg);
  CHECK(d.to_json() != a.to_json());
}

TEST_CASE("honest trees and depth limits") {
  const Dataset data = randomized(2000, 7);
  const FeatureMap fm = FeatureMap::intercepts(2);
  ForestConfig cfg = small_config();
  cfg.honest = true;
  cfg.max_depth = 2;
  const MomentForest f = train_forest(data, all_rows(data), &fm, nullptr, cfg);
  for (const Tree& t : f.trees()) CHECK(t.depth() <= 2);
  const std::vector<double> x{0.5, 0.5};
  CHECK(std::isfinite(f.predict_alpha(1, x, 1)));
}

TEST_CASE("too few selected rows per arm is a training error") {
  const Dataset data = randomized(100, 8);
  const FeatureMap fm = FeatureMap::arm_linear(data);
  ForestConfig cfg = small_config();
  cfg.min_leaf = 60;
  CHECK_THROWS_AS(train_forest(data, all_rows(data), &fm, nullptr, cfg), TrainError);
  CHECK(effective_min_leaf(ForestConfig{}, &fm) == 20);
  cfg.min_leaf = 1;
  CHECK(effective_min_leaf(cfg, &fm) == 9);
}

TEST_CASE("cross-fit forest pairs") {
  MarDgpConfig dc;
  dc.n = 1000;
  const Dataset data = gen_mar(dc);
  const FoldPlan folds = make_folds(data, 3, 1);
  const FeatureMap fm = FeatureMap::arm_linear(data);
  ForestConfig cfg = small_config();
  auto shared = fit(data, folds, fm, cfg);
  REQUIRE(shared.size() == 3);
  CHECK(shared[0].alpha == shared[0].g);
  cfg.multitask_weight = 0.0;
  auto separate = fit(data, folds, fm, cfg);
  CHECK(separate[0].alpha != separate[0].g);
  CHECK(separate[0].alpha->has_representer());
  CHECK(!separate[0].alpha->has_regression());
  CHECK(separate[0].g->has_regression());
}
