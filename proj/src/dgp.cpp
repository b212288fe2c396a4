#include "selriesz/dgp.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "selriesz/errors.hpp"
#include "selriesz/normal.hpp"
#include "selriesz/rng.hpp"

namespace selriesz {

std::vector<double> default_beta(std::size_t p) {
  std::vector<double> b(p);
  for (std::size_t j = 0; j < p; ++j) b[j] = 0.4 / static_cast<double>((j + 1) * (j + 1));
  return b;
}

std::vector<double> effective_beta(const MarDgpConfig& cfg) {
  return cfg.beta0.empty() ? default_beta(cfg.p) : cfg.beta0;
}

void validate(const MarDgpConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("MAR design: n must be >= 1");
  if (cfg.p < 1) throw ConfigError("MAR design: p must be >= 1");
  if (!(cfg.sigma_x > 0.0)) throw ConfigError("MAR design: sigma_x must be > 0");
  if (!cfg.beta0.empty() && cfg.beta0.size() != cfg.p) throw ConfigError("MAR design: beta0 must have length p");
  if (!std::isfinite(cfg.theta0)) throw ConfigError("MAR design: theta0 must be finite");
}

Dataset gen_mar(const MarDgpConfig& cfg) {
  validate(cfg);
  const auto beta = effective_beta(cfg);
  const double sd_x = std::sqrt(cfg.sigma_x);

  Rng rng_x = make_rng(cfg.seed, {1});
  Rng rng_w = make_rng(cfg.seed, {2});
  Rng rng_u = make_rng(cfg.seed, {3});
  Rng rng_v = make_rng(cfg.seed, {4});
  std::normal_distribution<double> z(0.0, 1.0);

  RowMatrix x(static_cast<Eigen::Index>(cfg.n), static_cast<Eigen::Index>(cfg.p));
  std::vector<std::uint8_t> d(cfg.n), s(cfg.n);
  std::vector<std::optional<double>> y(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    double index = 0.0;
    for (std::size_t j = 0; j < cfg.p; ++j) {
      double v = sd_x * z(rng_x);
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      index += v * beta[j];
    }
    const double w = z(rng_w);
    const double u = z(rng_u);
    const double v = z(rng_v);
    d[i] = index + w > 0.0 ? 1 : 0;
    s[i] = cfg.observe_all || (d[i] + index + v > 0.0) ? 1 : 0;
    if (s[i]) y[i] = cfg.theta0 * d[i] + index + u;
  }

  std::vector<std::string> names(cfg.p);
  for (std::size_t j = 0; j < cfg.p; ++j) names[j] = "x" + std::to_string(j + 1);
  Dataset::Options opts;
  opts.allow_full_selection = cfg.observe_all;
  return Dataset::create(std::move(x), std::move(d), std::move(s), std::move(y), std::move(names), {}, opts);
}

nlohmann::json to_json(const MarDgpConfig& cfg) {
  return {{"design", "mar"},
          {"n", cfg.n},
          {"p", cfg.p},
          {"theta0", cfg.theta0},
          {"beta0", effective_beta(cfg)},
          {"beta0_default_profile", cfg.beta0.empty() ? "0.4/j^2" : "user"},
          {"sigma_x", cfg.sigma_x},
          {"seed", cfg.seed},
          {"observe_all", cfg.observe_all}};
}

MarTruth::MarTruth(const MarDgpConfig& cfg)
    : theta0_(cfg.theta0), observe_all_(cfg.observe_all), beta_(effective_beta(cfg)) {}

double MarTruth::index(std::span<const double> x) const {
  if (x.size() != beta_.size()) throw DimensionError("MarTruth: covariate dimension mismatch");
  return std::inner_product(x.begin(), x.end(), beta_.begin(), 0.0);
}

double MarTruth::p1(std::span<const double> x) const { return normal_cdf(index(x)); }

double MarTruth::pi_s(int d, std::span<const double> x) const {
  return observe_all_ ? 1.0 : normal_cdf(d + index(x));
}

double MarTruth::g(int d, std::span<const double> x) const { return theta0_ * d + index(x); }

double MarTruth::alpha_s(int d, std::span<const double> x, int s) const {
  if (s == 0) return 0.0;
  const double p = p1(x);
  return d == 1 ? 1.0 / (p * pi_s(1, x)) : -1.0 / ((1.0 - p) * pi_s(0, x));
}

namespace {

bool is_probability(double v) { return v > 0.0 && v < 1.0; }

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

void validate(const ConfoundedDgpConfig& cfg) {
  const std::size_t nx = cfg.x_levels.size();
  const std::size_t na = cfg.a_levels.size();
  if (cfg.n < 1) throw ConfigError("confounded design: n must be >= 1");
  if (nx == 0) throw ConfigError("confounded design: empty covariate support");
  if (na == 0) throw ConfigError("confounded design: empty latent support");
  const std::size_t p = cfg.p();
  if (p == 0) throw ConfigError("confounded design: covariate support points must be non-empty");
  for (const auto& lv : cfg.x_levels) {
    if (lv.size() != p) throw ConfigError("confounded design: support points differ in dimension");
  }
  if (cfg.x_probs.size() != nx) throw ConfigError("confounded design: x_probs missing entries");
  if (cfg.a_probs.size() != na) throw ConfigError("confounded design: a_probs missing entries");
  if (cfg.treat_probs.size() != nx) throw ConfigError("confounded design: treat_probs missing entries");
  for (double v : cfg.x_probs) {
    if (!(v > 0.0)) throw ConfigError("confounded design: x_probs must be positive");
  }
  for (double v : cfg.a_probs) {
    if (!(v > 0.0)) throw ConfigError("confounded design: a_probs must be positive");
  }
  if (std::fabs(sum(cfg.x_probs) - 1.0) > 1e-12) throw ConfigError("confounded design: x_probs must sum to 1");
  if (std::fabs(sum(cfg.a_probs) - 1.0) > 1e-12) throw ConfigError("confounded design: a_probs must sum to 1");
  for (double v : cfg.treat_probs) {
    if (!is_probability(v)) throw ConfigError("confounded design: treat_probs must lie in (0, 1)");
  }
  auto check_table = [&](const auto& t, const char* name, bool probs) {
    if (t.size() != nx) throw ConfigError(std::string("confounded design: ") + name + " missing x entries");
    for (const auto& by_d : t) {
      if (by_d.size() != 2) throw ConfigError(std::string("confounded design: ") + name + " needs both arms");
      for (const auto& by_a : by_d) {
        if (by_a.size() != na) throw ConfigError(std::string("confounded design: ") + name + " missing a entries");
        for (double v : by_a) {
          if (probs ? !is_probability(v) : !std::isfinite(v)) {
            throw ConfigError(std::string("confounded design: invalid entry in ") + name);
          }
        }
      }
    }
  };
  check_table(cfg.sel_probs, "sel_probs", true);
  check_table(cfg.outcome_means, "outcome_means", false);
  if (!(cfg.noise_sd >= 0.0)) throw ConfigError("confounded design: noise_sd must be >= 0");
}

ConfoundedDgpConfig default_confounded_config(std::size_t n, std::uint64_t seed) {
  ConfoundedDgpConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.x_levels = {{0.0}, {1.0}};
  cfg.x_probs = {0.6, 0.4};
  cfg.treat_probs = {0.35, 0.6};
  // [x][d][a], a in {-1, +1}
  cfg.sel_probs = {{{0.35, 0.8}, {0.55, 0.9}}, {{0.25, 0.7}, {0.6, 0.85}}};
  cfg.outcome_means = {{{-0.5, 0.7}, {0.8, 2.1}}, {{0.2, 1.0}, {1.4, 2.9}}};
  cfg.noise_sd = 1.0;
  return cfg;
}

nlohmann::json to_json(const ConfoundedDgpConfig& cfg) {
  return {{"design", "confounded"},     {"n", cfg.n},
          {"x_levels", cfg.x_levels},   {"x_probs", cfg.x_probs},
          {"a_levels", cfg.a_levels},   {"a_probs", cfg.a_probs},
          {"treat_probs", cfg.treat_probs}, {"sel_probs", cfg.sel_probs},
          {"outcome_means", cfg.outcome_means}, {"noise_sd", cfg.noise_sd},
          {"seed", cfg.seed}};
}

ConfoundedDgpConfig confounded_config_from_json(const nlohmann::json& j) {
  ConfoundedDgpConfig cfg;
  try {
    cfg.n = j.value("n", cfg.n);
    cfg.x_levels = j.at("x_levels").get<std::vector<std::vector<double>>>();
    cfg.x_probs = j.at("x_probs").get<std::vector<double>>();
    if (j.contains("a_levels")) cfg.a_levels = j.at("a_levels").get<std::vector<double>>();
    if (j.contains("a_probs")) cfg.a_probs = j.at("a_probs").get<std::vector<double>>();
    cfg.treat_probs = j.at("treat_probs").get<std::vector<double>>();
    cfg.sel_probs = j.at("sel_probs").get<std::vector<std::vector<std::vector<double>>>>();
    cfg.outcome_means = j.at("outcome_means").get<std::vector<std::vector<std::vector<double>>>>();
    cfg.noise_sd = j.value("noise_sd", cfg.noise_sd);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("confounded design: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

OracleTables enumerate_oracle(const ConfoundedDgpConfig& cfg) {
  validate(cfg);
  const std::size_t nx = cfg.x_levels.size();
  const std::size_t na = cfg.a_levels.size();
  OracleTables t;
  t.p1 = cfg.treat_probs;
  t.pi_s.assign(nx, std::vector<double>(2));
  t.g_s.assign(nx, std::vector<double>(2));
  t.alpha_s.assign(nx, std::vector<double>(2));
  t.g_0.assign(nx, std::vector<std::vector<double>>(2, std::vector<double>(na)));
  t.alpha_0 = t.g_0;

  double selected_mass = 0.0, selected_effect = 0.0;
  for (std::size_t x = 0; x < nx; ++x) {
    for (int d = 0; d < 2; ++d) {
      const double pd = d == 1 ? t.p1[x] : 1.0 - t.p1[x];
      double pi = 0.0, num = 0.0;
      for (std::size_t a = 0; a < na; ++a) {
        pi += cfg.sel_probs[x][d][a] * cfg.a_probs[a];
        num += cfg.outcome_means[x][d][a] * cfg.sel_probs[x][d][a] * cfg.a_probs[a];
        t.g_0[x][d][a] = cfg.outcome_means[x][d][a];
        t.alpha_0[x][d][a] = (d == 1 ? 1.0 : -1.0) / (pd * cfg.sel_probs[x][d][a]);
      }
      t.pi_s[x][d] = pi;
      t.g_s[x][d] = num / pi;
      t.alpha_s[x][d] = (d == 1 ? 1.0 : -1.0) / (pd * pi);
    }
    const double px = cfg.x_probs[x];
    t.theta_s += px * (t.g_s[x][1] - t.g_s[x][0]);
    t.theta_zero_filled += px * (t.pi_s[x][1] * t.g_s[x][1] - t.pi_s[x][0] * t.g_s[x][0]);
    const double sel_x = t.p1[x] * t.pi_s[x][1] + (1.0 - t.p1[x]) * t.pi_s[x][0];
    selected_mass += px * sel_x;
    selected_effect += px * sel_x * (t.g_s[x][1] - t.g_s[x][0]);
    t.e_inverse_prop_short += px * (1.0 / (t.p1[x] * t.pi_s[x][1]) + 1.0 / ((1.0 - t.p1[x]) * t.pi_s[x][0]));

    for (std::size_t a = 0; a < na; ++a) {
      const double pxa = px * cfg.a_probs[a];
      t.theta_0 += pxa * (t.g_0[x][1][a] - t.g_0[x][0][a]);
      t.e_inverse_prop_long +=
          pxa * (1.0 / (t.p1[x] * cfg.sel_probs[x][1][a]) + 1.0 / ((1.0 - t.p1[x]) * cfg.sel_probs[x][0][a]));
      for (int d = 0; d < 2; ++d) {
        const double pd = d == 1 ? t.p1[x] : 1.0 - t.p1[x];
        // mass of the selected cell (x, a, d, S = 1); alpha and the Y = SY terms vanish off it
        const double w = pxa * pd * cfg.sel_probs[x][d][a];
        const double g_gap = t.g_0[x][d][a] - t.g_s[x][d];
        const double a_gap = t.alpha_0[x][d][a] - t.alpha_s[x][d];
        t.cross_moment += w * g_gap * a_gap;
        t.e_alpha0_sq += w * t.alpha_0[x][d][a] * t.alpha_0[x][d][a];
        t.e_alpha_s_sq += w * t.alpha_s[x][d] * t.alpha_s[x][d];
        t.e_alpha_gap_sq += w * a_gap * a_gap;
        t.e_outcome_gap_sq += w * g_gap * g_gap;
        t.e_residual_sq += w * (g_gap * g_gap + cfg.noise_sd * cfg.noise_sd);
        t.selection_rate += w;
      }
    }
  }
  t.theta_selected = selected_effect / selected_mass;
  t.scale_sq = t.e_residual_sq * t.e_alpha_s_sq;
  t.cy2 = t.e_outcome_gap_sq / t.e_residual_sq;
  t.cs2 = t.e_alpha_gap_sq / t.e_alpha_s_sq;
  const double b2 = t.e_outcome_gap_sq * t.e_alpha_gap_sq;
  t.rho = b2 > 0.0 ? t.cross_moment / std::sqrt(b2) : 0.0;
  return t;
}

nlohmann::json OracleTables::to_json() const {
  return {{"p1", p1},
          {"pi_s", pi_s},
          {"g_s", g_s},
          {"alpha_s", alpha_s},
          {"g_0", g_0},
          {"alpha_0", alpha_0},
          {"theta_0", theta_0},
          {"theta_s", theta_s},
          {"theta_selected", theta_selected},
          {"theta_zero_filled", theta_zero_filled},
          {"bias", theta_0 - theta_s},
          {"cross_moment", cross_moment},
          {"e_alpha0_sq", e_alpha0_sq},
          {"e_alpha_s_sq", e_alpha_s_sq},
          {"e_alpha_gap_sq", e_alpha_gap_sq},
          {"e_outcome_gap_sq", e_outcome_gap_sq},
          {"e_residual_sq", e_residual_sq},
          {"selection_rate", selection_rate},
          {"scale_sq", scale_sq},
          {"cy2", cy2},
          {"cs2", cs2},
          {"rho", rho}};
}

double enumerate_short_theta(const ConfoundedDgpConfig& cfg, const std::vector<bool>& keep) {
  validate(cfg);
  if (keep.size() != cfg.p()) throw DimensionError("keep mask must have one entry per covariate");
  struct Cell {
    double mass = 0;
    double sel_mass[2] = {0, 0};
    double y_mass[2] = {0, 0};
  };
  std::map<std::vector<double>, Cell> cells;
  for (std::size_t x = 0; x < cfg.x_levels.size(); ++x) {
    std::vector<double> key;
    for (std::size_t j = 0; j < keep.size(); ++j) {
      if (keep[j]) key.push_back(cfg.x_levels[x][j]);
    }
    Cell& c = cells[key];
    c.mass += cfg.x_probs[x];
    for (int d = 0; d < 2; ++d) {
      const double pd = d == 1 ? cfg.treat_probs[x] : 1.0 - cfg.treat_probs[x];
      for (std::size_t a = 0; a < cfg.a_levels.size(); ++a) {
        const double w = cfg.x_probs[x] * cfg.a_probs[a] * pd * cfg.sel_probs[x][d][a];
        c.sel_mass[d] += w;
        c.y_mass[d] += w * cfg.outcome_means[x][d][a];
      }
    }
  }
  double theta = 0.0;
  for (const auto& [key, c] : cells) {
    theta += c.mass * (c.y_mass[1] / c.sel_mass[1] - c.y_mass[0] / c.sel_mass[0]);
  }
  return theta;
}

std::size_t confounded_level(const ConfoundedDgpConfig& cfg, std::span<const double> x) {
  for (std::size_t l = 0; l < cfg.x_levels.size(); ++l) {
    if (std::equal(x.begin(), x.end(), cfg.x_levels[l].begin(), cfg.x_levels[l].end())) return l;
  }
  throw ConfigError("covariate vector is not a support point of the design");
}

std::pair<Dataset, OracleTables> gen_confounded(const ConfoundedDgpConfig& cfg) {
  OracleTables tables = enumerate_oracle(cfg);
  const std::size_t p = cfg.p();

  Rng rng_x = make_rng(cfg.seed, {1});
  Rng rng_a = make_rng(cfg.seed, {2});
  Rng rng_d = make_rng(cfg.seed, {3});
  Rng rng_s = make_rng(cfg.seed, {4});
  Rng rng_e = make_rng(cfg.seed, {5});
  std::discrete_distribution<std::size_t> pick_x(cfg.x_probs.begin(), cfg.x_probs.end());
  std::discrete_distribution<std::size_t> pick_a(cfg.a_probs.begin(), cfg.a_probs.end());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);

  RowMatrix x(static_cast<Eigen::Index>(cfg.n), static_cast<Eigen::Index>(p));
  std::vector<std::uint8_t> d(cfg.n), s(cfg.n);
  std::vector<std::optional<double>> y(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const std::size_t xl = pick_x(rng_x);
    const std::size_t al = pick_a(rng_a);
    for (std::size_t j = 0; j < p; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cfg.x_levels[xl][j];
    d[i] = unif(rng_d) < cfg.treat_probs[xl] ? 1 : 0;
    s[i] = unif(rng_s) < cfg.sel_probs[xl][d[i]][al] ? 1 : 0;
    const double noise = z(rng_e);
    if (s[i]) y[i] = cfg.outcome_means[xl][d[i]][al] + cfg.noise_sd * noise;
  }
  std::vector<std::string> names(p);
  for (std::size_t j = 0; j < p; ++j) names[j] = "x" + std::to_string(j + 1);
  Dataset data = Dataset::create(std::move(x), std::move(d), std::move(s), std::move(y), std::move(names));
  return {std::move(data), std::move(tables)};
}

}  // namespace selriesz
