#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "selriesz/data.hpp"
#include "selriesz/estimators.hpp"

namespace selriesz {

// Expectations are over the whole sample with the Y = S*Y convention: the
// residual moment is sum over selected rows of (y - g_s)^2 divided by n, and
// alpha_s is zero off the selected sample.
struct SensitivityInputs {
  std::vector<double> residuals;  // y - g_s(d, x) on the s = 1 rows
  std::vector<double> alpha_s;    // plug-in alpha_s on all n rows
  double theta_s = 0.0;
  double se_s = 0.0;
  std::size_t n = 0;

  void validate() const;
  static SensitivityInputs from_fit(const Dataset& data, const NuisanceFit& nf, double theta_s, double se_s);
};

double scale_factor(const SensitivityInputs& in);
// |rho| * sqrt(s2 * cy2 * cs2); DomainError outside s2 >= 0, cy2 in [0,1), cs2 >= 0, |rho| <= 1.
double bias_bound(double s2, double cy2, double cs2, double rho);
// Equal-strength robustness value: positive root of r^2 + a r - a = 0, a = theta_s^2 / s2.
double robustness_value(double theta_s, double s2);
// [theta - bound - z se, theta + bound + z se].
std::pair<double, double> adjusted_interval(double theta_s, double se, double bound, double level);

struct CalibrationPoint {
  double mu2 = 0.0;
  double cs2 = 0.0;
  double r2 = 1.0;
  double mc_se = 0.0;  // of cs2
  double e_alpha0_sq = 0.0;
  double e_alpha_s_sq = 0.0;
  // Mean over units and arms of (mean_b pi_0^(b) - pi_s) and its z-score.
  double coherence_gap = 0.0;
  double coherence_z = 0.0;
  // Units/arms whose own gap exceeds 3 MC standard errors.
  std::size_t coherence_outliers = 0;
  std::size_t floor_hits = 0;
  // E[alpha_0^2] is finite under the probit model only for mu2 < 0.5.
  bool moment_finite = true;
};

struct CalibrationCurve {
  std::vector<CalibrationPoint> points;
  std::size_t b_draws = 0;
  std::uint64_t seed = 0;

  // cs2 at mu2 by linear interpolation over the grid; DomainError outside it.
  double cs2_at(double mu2) const;
  nlohmann::json to_json() const;
};

struct CalibrationOptions {
  std::size_t b_draws = 10000;
  std::uint64_t seed = 1;
  double floor = 1e-12;
  // Raise NumericalError when a long probability falls below the floor
  // instead of clamping it there and counting the hit.
  bool strict_floor = false;
};

std::vector<double> default_mu2_grid();

// Quasi-Gaussian calibration: h(d,x) = Phi^-1(pi_s(d,x)) and
// pi_0^(b)(d,x) = Phi((h - mu A) / sqrt(1 - mu^2)) with A ~ N(0,1) drawn per
// unit and shared by both arms and all grid points. p1 and pi1/pi0 are
// per-row fitted probabilities.
CalibrationCurve calibrate_quasi_gaussian(std::span<const double> p1, std::span<const double> pi1,
                                          std::span<const double> pi0, const std::vector<double>& mu2_grid,
                                          const CalibrationOptions& options = {});

enum class SelectionAxis { kLatentR2, kRepresenterR2 };

struct ContourCell {
  double cy2 = 0.0;
  double eta_s2 = 0.0;
  double cs2 = 0.0;
  double bound = 0.0;
  bool flips_sign = false;
};

struct ContourGrid {
  std::vector<double> cy2_values;
  std::vector<double> eta_values;
  std::vector<ContourCell> cells;  // row-major over (cy2, eta)

  void write_csv(const std::string& path) const;
};

// Worst-case bounds over a (cy2, eta_s2) grid. The selection axis is the
// latent partial R^2 mu_S^2 (mapped through the calibration curve) or the
// representer share r with cs2 = r / (1 - r).
ContourGrid contour_grid(double s2, double theta_s, std::pair<double, double> cy2_range,
                         std::pair<double, double> eta_range, std::size_t resolution, SelectionAxis axis,
                         const CalibrationCurve* curve = nullptr, double rho = 1.0);

struct SensitivityScenario {
  double cy2 = 0.0;
  double mu2 = 0.0;
  double cs2 = 0.0;
  double rho = 1.0;
  double bound = 0.0;
  std::pair<double, double> theta_bounds;
  std::pair<double, double> ci_bounds;
};

struct SensitivityReport {
  double theta_s = 0.0;
  double se_s = 0.0;
  double level = 0.95;
  double s2 = 0.0;
  double e_residual_sq = 0.0;
  double e_alpha_s_sq = 0.0;
  double robustness_value = 0.0;
  SensitivityScenario scenario;
  CalibrationCurve curve;

  nlohmann::json to_json() const;
};

// Evaluates one scenario: cs2 from the calibration curve at mu2 (or the
// given cs2 when mu2 is negative).
SensitivityScenario evaluate_scenario(const SensitivityReport& base, double cy2, double mu2, double cs2, double rho);

}  // namespace selriesz
