#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "selriesz/data.hpp"

namespace selriesz {

// Conditional missing-at-random design:
//   X ~ N(0, sigma_x I), D = 1{X'b + w > 0}, S = 1{D + X'b + v > 0},
//   Y = theta0 D + X'b + u, with u, v, w independent standard normal.
struct MarDgpConfig {
  std::size_t n = 1000;
  std::size_t p = 5;
  double theta0 = 1.0;
  std::vector<double> beta0;  // empty: default_beta(p)
  double sigma_x = 1.0;       // covariate variance
  std::uint64_t seed = 1;
  bool observe_all = false;   // force S = 1 (no selection)
};

// b_j = 0.4 / j^2, j = 1..p.
std::vector<double> default_beta(std::size_t p);
std::vector<double> effective_beta(const MarDgpConfig& cfg);
void validate(const MarDgpConfig& cfg);

// Random streams: X uses derive_seed(seed, {1}), w {2}, u {3}, v {4}.
Dataset gen_mar(const MarDgpConfig& cfg);
nlohmann::json to_json(const MarDgpConfig& cfg);

// True nuisance functions of the MAR design.
class MarTruth {
 public:
  explicit MarTruth(const MarDgpConfig& cfg);
  double index(std::span<const double> x) const;
  double p1(std::span<const double> x) const;
  double pi_s(int d, std::span<const double> x) const;
  double g(int d, std::span<const double> x) const;
  double alpha_s(int d, std::span<const double> x, int s) const;

 private:
  double theta0_;
  bool observe_all_;
  std::vector<double> beta_;
};

// Discrete design with a latent selection confounder A. Tables are indexed
// [x level][d][a level]. A is independent of (X, D); D depends on X only.
struct ConfoundedDgpConfig {
  std::size_t n = 1000;
  std::vector<std::vector<double>> x_levels;  // support points, each of length p
  std::vector<double> x_probs;
  std::vector<double> a_levels{-1.0, 1.0};
  std::vector<double> a_probs{0.5, 0.5};
  std::vector<double> treat_probs;                      // p_1(x)
  std::vector<std::vector<std::vector<double>>> sel_probs;      // pi_0(d, x, a)
  std::vector<std::vector<std::vector<double>>> outcome_means;  // g_0(d, x, a)
  double noise_sd = 1.0;
  std::uint64_t seed = 1;

  std::size_t p() const { return x_levels.empty() ? 0 : x_levels.front().size(); }
};

void validate(const ConfoundedDgpConfig& cfg);
// A 2-level X, 2-level A design where selection and outcome both load on A.
ConfoundedDgpConfig default_confounded_config(std::size_t n, std::uint64_t seed);
nlohmann::json to_json(const ConfoundedDgpConfig& cfg);
ConfoundedDgpConfig confounded_config_from_json(const nlohmann::json& j);

// Long and short quantities computed by exact enumeration over the support.
// Population expectations are over all units, with the outcome side under
// the Y = S*Y convention (residual and g_0 - g_s terms vanish where S = 0).
struct OracleTables {
  std::vector<double> p1;                              // [x]
  std::vector<std::vector<double>> pi_s;               // [x][d]
  std::vector<std::vector<double>> g_s;                // [x][d]
  std::vector<std::vector<double>> alpha_s;            // [x][d], value at s = 1
  std::vector<std::vector<std::vector<double>>> g_0;   // [x][d][a]
  std::vector<std::vector<std::vector<double>>> alpha_0;

  double theta_0 = 0;
  double theta_s = 0;
  double theta_selected = 0;   // E[g_s(1,X) - g_s(0,X) | S = 1]
  double theta_zero_filled = 0;  // E[E[SY|D=1,X] - E[SY|D=0,X]]
  double cross_moment = 0;     // E[(g_0 - g_s)(alpha_0 - alpha_s)]
  double e_alpha0_sq = 0;
  double e_alpha_s_sq = 0;
  double e_alpha_gap_sq = 0;   // E[(alpha_0 - alpha_s)^2]
  double e_outcome_gap_sq = 0; // E[S (g_0 - g_s)^2]
  double e_residual_sq = 0;    // E[S (Y - g_s)^2]
  double e_inverse_prop_long = 0;   // E[1/(p1 pi_0(1)) + 1/(p0 pi_0(0))]
  double e_inverse_prop_short = 0;  // E[1/(p1 pi_s(1)) + 1/(p0 pi_s(0))]
  double selection_rate = 0;

  double scale_sq = 0;  // E[S(Y-g_s)^2] E[alpha_s^2]
  double cy2 = 0;
  double cs2 = 0;
  double rho = 0;

  nlohmann::json to_json() const;
};

OracleTables enumerate_oracle(const ConfoundedDgpConfig& cfg);

// Short parameter when only the covariates flagged in keep are observed.
double enumerate_short_theta(const ConfoundedDgpConfig& cfg, const std::vector<bool>& keep);

// Index of the support point equal to x; throws ConfigError if none matches.
std::size_t confounded_level(const ConfoundedDgpConfig& cfg, std::span<const double> x);

// Streams: x level {1}, a {2}, d {3}, s {4}, noise {5}.
std::pair<Dataset, OracleTables> gen_confounded(const ConfoundedDgpConfig& cfg);

}  // namespace selriesz
