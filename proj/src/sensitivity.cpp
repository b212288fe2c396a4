#include "selriesz/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "selriesz/errors.hpp"
#include "selriesz/normal.hpp"
#include "selriesz/parallel.hpp"
#include "selriesz/rng.hpp"

namespace selriesz {

void SensitivityInputs::validate() const {
  if (n < 2) throw DomainError("sensitivity inputs need n >= 2");
  if (alpha_s.size() != n) throw DimensionError("alpha_s must have one value per row");
  if (residuals.size() > n) throw DimensionError("more residuals than rows");
  for (double v : residuals)
    if (!std::isfinite(v)) throw DomainError("non-finite residual");
  for (double v : alpha_s)
    if (!std::isfinite(v)) throw DomainError("non-finite alpha_s");
  if (!std::isfinite(theta_s) || !(se_s >= 0.0)) throw DomainError("theta_s and se_s must be finite, se_s >= 0");
}

SensitivityInputs SensitivityInputs::from_fit(const Dataset& data, const NuisanceFit& nf, double theta_s,
                                              double se_s) {
  if (nf.size() != data.n()) throw DimensionError("nuisance fit does not match the dataset");
  SensitivityInputs in;
  in.n = data.n();
  in.theta_s = theta_s;
  in.se_s = se_s;
  in.alpha_s = nf.alpha_plugin;
  for (std::size_t i = 0; i < data.n(); ++i)
    if (data.s(i) == 1) in.residuals.push_back(data.y_or_zero(i) - (data.d(i) == 1 ? nf.g1[i] : nf.g0[i]));
  return in;
}

double scale_factor(const SensitivityInputs& in) {
  in.validate();
  double r2 = 0.0, a2 = 0.0;
  for (double v : in.residuals) r2 += v * v;
  for (double v : in.alpha_s) a2 += v * v;
  const double n = static_cast<double>(in.n);
  return (r2 / n) * (a2 / n);
}

double bias_bound(double s2, double cy2, double cs2, double rho) {
  if (!(s2 >= 0.0) || !std::isfinite(s2)) throw DomainError("bias_bound: s2 must be finite and >= 0");
  if (!(cy2 >= 0.0 && cy2 < 1.0)) throw DomainError("bias_bound: cy2 must lie in [0, 1)");
  if (!(cs2 >= 0.0) || !std::isfinite(cs2)) throw DomainError("bias_bound: cs2 must be finite and >= 0");
  if (!(std::abs(rho) <= 1.0)) throw DomainError("bias_bound: |rho| must be <= 1");
  return std::abs(rho) * std::sqrt(s2 * cy2 * cs2);
}

double robustness_value(double theta_s, double s2) {
  if (!(s2 > 0.0)) throw DomainError("robustness_value: s2 must be > 0");
  const double a = theta_s * theta_s / s2;
  if (a == 0.0) return 0.0;
  // Positive root of r^2 + a r - a = 0, written to avoid cancellation.
  return 2.0 * a / (a + std::sqrt(a * a + 4.0 * a));
}

std::pair<double, double> adjusted_interval(double theta_s, double se, double bound, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("level must lie in (0, 1)");
  const double z = normal_critical(level);
  return {theta_s - bound - z * se, theta_s + bound + z * se};
}

std::vector<double> default_mu2_grid() {
  std::vector<double> g;
  for (int k = 0; k < 20; ++k) g.push_back(0.05 * k);
  return g;
}

double CalibrationCurve::cs2_at(double mu2) const {
  if (points.empty()) throw DomainError("empty calibration curve");
  if (mu2 < points.front().mu2 || mu2 > points.back().mu2)
    throw DomainError("mu2 outside the calibration grid");
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const auto& a = points[k];
    const auto& b = points[k + 1];
    if (mu2 <= b.mu2) {
      if (b.mu2 == a.mu2) return a.cs2;
      const double t = (mu2 - a.mu2) / (b.mu2 - a.mu2);
      return a.cs2 + t * (b.cs2 - a.cs2);
    }
  }
  return points.back().cs2;
}

nlohmann::json CalibrationCurve::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points)
    pts.push_back({{"mu2", p.mu2},
                   {"cs2", p.cs2},
                   {"r2", p.r2},
                   {"mc_se", p.mc_se},
                   {"e_alpha0_sq", p.e_alpha0_sq},
                   {"e_alpha_s_sq", p.e_alpha_s_sq},
                   {"coherence_gap", p.coherence_gap},
                   {"coherence_z", p.coherence_z},
                   {"coherence_outliers", p.coherence_outliers},
                   {"floor_hits", p.floor_hits},
                   {"moment_finite", p.moment_finite}});
  return {{"b_draws", b_draws}, {"seed", seed}, {"points", std::move(pts)}};
}

CalibrationCurve calibrate_quasi_gaussian(std::span<const double> p1, std::span<const double> pi1,
                                          std::span<const double> pi0, const std::vector<double>& mu2_grid,
                                          const CalibrationOptions& options) {
  const std::size_t n = p1.size();
  if (n == 0) throw DomainError("calibration needs at least one unit");
  if (pi1.size() != n || pi0.size() != n) throw DimensionError("calibration inputs differ in length");
  if (options.b_draws < 100) throw DomainError("calibration needs b_draws >= 100");
  if (mu2_grid.empty()) throw DomainError("empty mu2 grid");
  for (std::size_t k = 0; k < mu2_grid.size(); ++k) {
    if (!(mu2_grid[k] >= 0.0 && mu2_grid[k] <= 0.99)) throw DomainError("mu2 grid values must lie in [0, 0.99]");
    if (k > 0 && !(mu2_grid[k] > mu2_grid[k - 1])) throw DomainError("mu2 grid must be increasing");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p1[i] > 0.0 && p1[i] < 1.0)) throw DomainError("p1 must lie in (0, 1)");
    if (!(pi1[i] > 0.0 && pi1[i] <= 1.0) || !(pi0[i] > 0.0 && pi0[i] <= 1.0))
      throw DomainError("selection probabilities must lie in (0, 1]");
  }

  const std::size_t g = mu2_grid.size();
  const std::size_t b_draws = options.b_draws;
  std::vector<double> mu(g), sigma(g);
  for (std::size_t k = 0; k < g; ++k) {
    mu[k] = std::sqrt(mu2_grid[k]);
    sigma[k] = std::sqrt(1.0 - mu2_grid[k]);
  }

  // Per unit and grid point: sum and sum of squares of the inverse
  // probability term, and per arm sum / sum of squares of pi_0.
  struct UnitStats {
    std::vector<double> v, vv, q1, qq1, q0, qq0;
    std::size_t floor_hits_total = 0;
    std::vector<std::size_t> floor_hits;
  };
  std::vector<UnitStats> units(n);
  std::vector<double> e_short(n);

  parallel_for(n, [&](std::size_t i) {
    UnitStats& u = units[i];
    for (auto* vec : {&u.v, &u.vv, &u.q1, &u.qq1, &u.q0, &u.qq0}) vec->assign(g, 0.0);
    u.floor_hits.assign(g, 0);
    const double w1 = 1.0 / p1[i], w0 = 1.0 / (1.0 - p1[i]);
    e_short[i] = w1 / pi1[i] + w0 / pi0[i];
    const double h1 = pi1[i] < 1.0 ? normal_quantile(pi1[i]) : std::numeric_limits<double>::infinity();
    const double h0 = pi0[i] < 1.0 ? normal_quantile(pi0[i]) : std::numeric_limits<double>::infinity();
    Rng rng = make_rng(options.seed, {i});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t b = 0; b < b_draws; ++b) {
      const double a = normal(rng);
      for (std::size_t k = 0; k < g; ++k) {
        auto long_prob = [&](double h) {
          if (std::isinf(h)) return 1.0;
          double q = mu2_grid[k] == 0.0 ? normal_cdf(h) : normal_cdf((h - mu[k] * a) / sigma[k]);
          if (q < options.floor) {
            if (options.strict_floor) {
              char buf[160];
              std::snprintf(buf, sizeof buf, "long selection probability %.3g below floor %.3g at mu2 = %.4g", q,
                            options.floor, mu2_grid[k]);
              throw NumericalError(buf);
            }
            ++u.floor_hits[k];
            q = options.floor;
          }
          return q;
        };
        const double q1 = long_prob(h1), q0 = long_prob(h0);
        const double v = w1 / q1 + w0 / q0;
        u.v[k] += v;
        u.vv[k] += v * v;
        u.q1[k] += q1;
        u.qq1[k] += q1 * q1;
        u.q0[k] += q0;
        u.qq0[k] += q0 * q0;
      }
    }
  });

  const double bd = static_cast<double>(b_draws);
  const double nd = static_cast<double>(n);
  double es = 0.0;
  for (double v : e_short) es += v;
  es /= nd;

  CalibrationCurve curve;
  curve.b_draws = b_draws;
  curve.seed = options.seed;
  for (std::size_t k = 0; k < g; ++k) {
    CalibrationPoint pt;
    pt.mu2 = mu2_grid[k];
    pt.moment_finite = mu2_grid[k] < 0.5;
    double e0 = 0.0, var_sum = 0.0, gap = 0.0, gap_var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const UnitStats& u = units[i];
      const double mean_v = u.v[k] / bd;
      e0 += mean_v;
      var_sum += std::max(0.0, (u.vv[k] - bd * mean_v * mean_v) / (bd - 1.0));
      pt.floor_hits += u.floor_hits[k];
      const double targets[2] = {pi0[i], pi1[i]};
      const double sums[2] = {u.q0[k], u.q1[k]};
      const double sqs[2] = {u.qq0[k], u.qq1[k]};
      for (int d = 0; d < 2; ++d) {
        const double m = sums[d] / bd;
        const double var = std::max(0.0, (sqs[d] - bd * m * m) / (bd - 1.0));
        const double diff = m - targets[d];
        gap += diff;
        gap_var += var / bd;
        if (std::abs(diff) > 3.0 * std::sqrt(var / bd) && std::abs(diff) > 1e-12) ++pt.coherence_outliers;
      }
    }
    e0 /= nd;
    pt.e_alpha0_sq = e0;
    pt.e_alpha_s_sq = es;
    pt.cs2 = e0 / es - 1.0;
    pt.r2 = es / e0;
    pt.mc_se = std::sqrt(var_sum / bd) / nd / es;
    pt.coherence_gap = gap / (2.0 * nd);
    const double gap_se = std::sqrt(gap_var) / (2.0 * nd);
    pt.coherence_z = gap_se > 0.0 ? pt.coherence_gap / gap_se : 0.0;
    if (mu2_grid[k] == 0.0) {
      pt.cs2 = 0.0;
      pt.r2 = 1.0;
    }
    curve.points.push_back(pt);
  }
  return curve;
}

ContourGrid contour_grid(double s2, double theta_s, std::pair<double, double> cy2_range,
                         std::pair<double, double> eta_range, std::size_t resolution, SelectionAxis axis,
                         const CalibrationCurve* curve, double rho) {
  auto check = [](std::pair<double, double> r) {
    if (!(r.first >= 0.0 && r.second <= 0.99 && r.first <= r.second))
      throw DomainError("contour ranges must lie in [0, 0.99]");
  };
  check(cy2_range);
  check(eta_range);
  if (resolution < 2) throw DomainError("contour resolution must be >= 2");
  if (axis == SelectionAxis::kLatentR2 && !curve) throw DomainError("latent axis needs a calibration curve");
  ContourGrid grid;
  for (std::size_t k = 0; k < resolution; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(resolution - 1);
    grid.cy2_values.push_back(cy2_range.first + t * (cy2_range.second - cy2_range.first));
    grid.eta_values.push_back(eta_range.first + t * (eta_range.second - eta_range.first));
  }
  for (double cy2 : grid.cy2_values) {
    for (double eta : grid.eta_values) {
      ContourCell c;
      c.cy2 = cy2;
      c.eta_s2 = eta;
      c.cs2 = axis == SelectionAxis::kLatentR2 ? std::max(0.0, curve->cs2_at(eta)) : eta / (1.0 - eta);
      c.bound = bias_bound(s2, cy2, c.cs2, rho);
      c.flips_sign = c.bound >= std::abs(theta_s);
      grid.cells.push_back(c);
    }
  }
  return grid;
}

void ContourGrid::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "cy2,eta_s2,cs2,bound,flips_sign\n";
  for (const auto& c : cells)
    out << format_real(c.cy2) << ',' << format_real(c.eta_s2) << ',' << format_real(c.cs2) << ','
        << format_real(c.bound) << ',' << (c.flips_sign ? 1 : 0) << '\n';
}

SensitivityScenario evaluate_scenario(const SensitivityReport& base, double cy2, double mu2, double cs2, double rho) {
  SensitivityScenario sc;
  sc.cy2 = cy2;
  sc.mu2 = mu2;
  sc.rho = rho;
  sc.cs2 = mu2 >= 0.0 ? std::max(0.0, base.curve.cs2_at(mu2)) : cs2;
  sc.bound = bias_bound(base.s2, cy2, sc.cs2, rho);
  sc.theta_bounds = {base.theta_s - sc.bound, base.theta_s + sc.bound};
  sc.ci_bounds = adjusted_interval(base.theta_s, base.se_s, sc.bound, base.level);
  return sc;
}

nlohmann::json SensitivityReport::to_json() const {
  return {{"theta_s", theta_s},
          {"se_s", se_s},
          {"level", level},
          {"scale_sq", s2},
          {"e_residual_sq", e_residual_sq},
          {"e_alpha_s_sq", e_alpha_s_sq},
          {"robustness_value", robustness_value},
          {"scenario",
           {{"cy2", scenario.cy2},
            {"mu2", scenario.mu2},
            {"cs2", scenario.cs2},
            {"rho", scenario.rho},
            {"bias_bound", scenario.bound},
            {"theta_bounds", {scenario.theta_bounds.first, scenario.theta_bounds.second}},
            {"ci_bounds", {scenario.ci_bounds.first, scenario.ci_bounds.second}}}},
          {"calibration", curve.to_json()}};
}

}  // namespace selriesz
