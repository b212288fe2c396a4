#include "selriesz/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "selriesz/errors.hpp"

namespace selriesz {

nlohmann::json BenchmarkResult::to_json() const {
  return {{"group", group},         {"k", k},
          {"theta_full", theta_full}, {"theta_minus_j", theta_minus},
          {"delta_theta", delta_theta}, {"gy", gy},
          {"gs", gs},               {"rho", rho},
          {"gy_negative", gy_negative}, {"gs_negative", gs_negative},
          {"mse_full", mse_full},   {"mse_minus_j", mse_minus},
          {"var_y_selected", var_y}, {"alpha_sq_full", alpha_sq_full},
          {"alpha_sq_minus_j", alpha_sq_minus}};
}

BenchmarkResult benchmark_from_fits(const Dataset& data, const std::string& name, std::size_t k,
                                    const EstimateResult& full, const EstimateResult& minus) {
  const NuisanceFit& f = full.nuisances;
  const NuisanceFit& m = minus.nuisances;
  if (f.size() != data.n() || m.size() != data.n()) throw DimensionError("benchmark fits do not match the dataset");
  BenchmarkResult r;
  r.group = name;
  r.k = k;
  r.theta_full = full.estimate.theta;
  r.theta_minus = minus.estimate.theta;
  r.delta_theta = r.theta_minus - r.theta_full;

  double ysum = 0.0, ysq = 0.0, sel = 0.0;
  double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    // E[a^2] through the Riesz loss: 2 m(W; a) - a^2. First-order errors in
    // the fitted a cancel, so extra regressors do not inflate it.
    r.alpha_sq_full += 2.0 * f.alpha_moment[i] - f.alpha[i] * f.alpha[i];
    r.alpha_sq_minus += 2.0 * m.alpha_moment[i] - m.alpha[i] * m.alpha[i];
    if (data.s(i) == 0) continue;
    const double y = data.y_or_zero(i);
    const double gf = data.d(i) == 1 ? f.g1[i] : f.g0[i];
    const double gm = data.d(i) == 1 ? m.g1[i] : m.g0[i];
    r.mse_full += (y - gf) * (y - gf);
    r.mse_minus += (y - gm) * (y - gm);
    ysum += y;
    ysq += y * y;
    sel += 1.0;
    const double u = gm - gf;
    const double v = f.alpha[i] - m.alpha[i];
    sx += u;
    sy += v;
    sxx += u * u;
    syy += v * v;
    sxy += u * v;
  }
  const double n = static_cast<double>(data.n());
  r.alpha_sq_full /= n;
  r.alpha_sq_minus /= n;
  r.mse_full /= sel;
  r.mse_minus /= sel;
  r.var_y = ysq / sel - (ysum / sel) * (ysum / sel);
  r.gy = r.mse_full > 0.0 ? (r.mse_minus - r.mse_full) / r.mse_full : 0.0;
  r.gs = r.alpha_sq_full > 0.0 ? (r.alpha_sq_full - r.alpha_sq_minus) / r.alpha_sq_full : 0.0;
  const double cov = sxy / sel - (sx / sel) * (sy / sel);
  const double vu = sxx / sel - (sx / sel) * (sx / sel);
  const double vv = syy / sel - (sy / sel) * (sy / sel);
  r.rho = vu > 0.0 && vv > 0.0 ? std::clamp(cov / std::sqrt(vu * vv), -1.0, 1.0) : 0.0;
  r.gy_negative = r.gy < 0.0;
  r.gs_negative = r.gs < 0.0;
  return r;
}

BenchmarkResult benchmark_group(const Dataset& data, const FoldPlan& folds, const CovariateGroup& group,
                                const Learners& learners) {
  if (group.indices.empty()) throw GroupError("benchmark group '" + group.name + "' is empty");
  const EstimateResult full = estimate(data, folds, Method::kFr, learners);
  const Dataset reduced = data.without_covariates(group.indices);
  const EstimateResult minus = estimate(reduced, folds, Method::kFr, learners);
  return benchmark_from_fits(data, group.name, group.indices.size(), full, minus);
}

std::vector<BenchmarkResult> benchmark_groups(const Dataset& data, const FoldPlan& folds,
                                              const std::vector<CovariateGroup>& groups, const Learners& learners) {
  for (const auto& g : groups) {
    if (g.indices.empty()) throw GroupError("benchmark group '" + g.name + "' is empty");
    for (std::size_t j : g.indices)
      if (j >= data.p()) throw GroupError("benchmark group '" + g.name + "' indexes a missing covariate");
  }
  const EstimateResult full = estimate(data, folds, Method::kFr, learners);
  std::vector<BenchmarkResult> out(groups.size());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const Dataset reduced = data.without_covariates(groups[k].indices);
    const EstimateResult minus = estimate(reduced, folds, Method::kFr, learners);
    out[k] = benchmark_from_fits(data, groups[k].name, groups[k].indices.size(), full, minus);
  }
  return out;
}

void write_benchmark_csv(const std::vector<BenchmarkResult>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "group,k,theta_full,theta_minus_j,delta_theta,abs_gy,abs_gs,abs_rho,gy,gs,rho,negative_flag\n";
  for (const auto& r : rows) {
    out << r.group << ',' << r.k << ',' << format_real(r.theta_full) << ',' << format_real(r.theta_minus) << ','
        << format_real(r.delta_theta) << ',' << format_real(std::abs(r.gy)) << ','
        << format_real(std::abs(r.gs)) << ',' << format_real(std::abs(r.rho)) << ',' << format_real(r.gy) << ','
        << format_real(r.gs) << ',' << format_real(r.rho) << ',' << ((r.gy_negative || r.gs_negative) ? 1 : 0)
        << '\n';
  }
}

std::string format_benchmark_table(const std::vector<BenchmarkResult>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %3s %10s %10s %10s %8s %8s %8s\n", "Group", "k", "theta", "theta_-j",
                "delta", "|G_Y|", "|G_S|", "|rho|");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %3zu %10.4f %10.4f %10.4f %8.4f %8.4f %8.4f%s\n", r.group.c_str(), r.k,
                  r.theta_full, r.theta_minus, r.delta_theta, std::abs(r.gy), std::abs(r.gs), std::abs(r.rho),
                  (r.gy_negative || r.gs_negative) ? "  *" : "");
    os << buf;
  }
  return os.str();
}

}  // namespace selriesz
