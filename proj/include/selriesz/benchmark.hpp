#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "selriesz/data.hpp"
#include "selriesz/estimators.hpp"

namespace selriesz {

struct BenchmarkResult {
  std::string group;
  std::size_t k = 0;
  double theta_full = 0.0;
  double theta_minus = 0.0;
  double delta_theta = 0.0;  // theta_minus - theta_full
  double gy = 0.0;
  double gs = 0.0;
  double rho = 0.0;
  bool gy_negative = false;
  bool gs_negative = false;
  // Ingredients: out-of-fold outcome MSE on s = 1 rows, var(Y | S = 1),
  // and the Riesz-loss estimate of E[alpha^2] over all rows, for both fits.
  double mse_full = 0.0, mse_minus = 0.0, var_y = 0.0;
  double alpha_sq_full = 0.0, alpha_sq_minus = 0.0;

  nlohmann::json to_json() const;
};

// Outcome gain, representer gain and alignment from two FR fits that share
// folds and seeds. gy = (mse_minus - mse_full) / mse_full,
// gs = (E[a_s^2] - E[a_{s,-j}^2]) / E[a_s^2], rho = corr over s = 1 rows of
// (g_{s,-j} - g_s, a_s - a_{s,-j}). Negative gains are kept and flagged.
BenchmarkResult benchmark_from_fits(const Dataset& data, const std::string& name, std::size_t k,
                                    const EstimateResult& full, const EstimateResult& minus);

BenchmarkResult benchmark_group(const Dataset& data, const FoldPlan& folds, const CovariateGroup& group,
                                const Learners& learners);

// Fits the full model once and benchmarks every group against it.
std::vector<BenchmarkResult> benchmark_groups(const Dataset& data, const FoldPlan& folds,
                                              const std::vector<CovariateGroup>& groups, const Learners& learners);

// Columns: group,k,theta_full,theta_minus_j,delta_theta,abs_gy,abs_gs,abs_rho,gy,gs,rho,negative_flag
void write_benchmark_csv(const std::vector<BenchmarkResult>& rows, const std::string& path);
std::string format_benchmark_table(const std::vector<BenchmarkResult>& rows);

}  // namespace selriesz
