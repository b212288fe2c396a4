#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "selriesz/data.hpp"
#include "selriesz/feature_map.hpp"
#include "selriesz/forest.hpp"
#include "selriesz/propensity.hpp"

namespace selriesz {

enum class Method { kIrm, kSsm, kFr };
enum class OutcomeKind { kForest, kLinear };

// Which population the IRM baseline treats as the sample.
//   kZeroFilled:   all rows, unobserved outcomes set to 0 (Y = S*Y).
//   kSelectedOnly: the s = 1 rows alone.
// Neither adjusts for selection; both are biased under MAR selection.
enum class IrmSample { kZeroFilled, kSelectedOnly };

Method parse_method(const std::string& name);
std::string to_string(Method m);
OutcomeKind parse_outcome_kind(const std::string& name);
std::string to_string(OutcomeKind k);
IrmSample parse_irm_sample(const std::string& name);
std::string to_string(IrmSample s);

struct Learners {
  PropensityKind propensity = PropensityKind::kLogistic;
  OutcomeKind outcome = OutcomeKind::kForest;
  // Intercepts by default: per-arm linear terms inflate the fitted alpha with
  // every extra covariate, which biases representer gains (see README).
  FeatureMapKind feature_map = FeatureMapKind::kIntercepts;
  ForestConfig forest;
  IrmSample irm_sample = IrmSample::kZeroFilled;
  double clip = 0.01;
  double lambda = 1e-6;
  double level = 0.95;
  // Hajek normalization of inverse-probability weights (IRM and SSM).
  bool normalize_ipw = true;

  void validate() const;
  nlohmann::json to_json() const;
};

struct NuisanceDiagnostics {
  std::size_t p1_clipped = 0;
  std::size_t pi_clipped = 0;
  double p1_min = 0.0, p1_max = 0.0;
  double pi_min = 0.0, pi_max = 0.0;
  double alpha_min = 0.0, alpha_max = 0.0;
  std::vector<std::size_t> fold_sizes;

  nlohmann::json to_json() const;
};

// Out-of-fold nuisance predictions, one entry per row. Propensities are
// clipped. alpha is the representer used by the score (forest alpha for FR,
// the plug-in otherwise); alpha_plugin is always the unnormalized plug-in
// s * (d / (p1 pi1) - (1 - d) / ((1 - p1) pi0)).
// alpha_moment is alpha(1,x,1) - alpha(0,x,1) for the score's representer; its
// mean estimates E[alpha^2] through the defining moment of alpha.
struct NuisanceFit {
  std::vector<double> p1, pi1, pi0, g1, g0, alpha, alpha_plugin, alpha_moment;
  std::vector<std::size_t> fold;
  NuisanceDiagnostics diagnostics;

  std::size_t size() const { return p1.size(); }
};

struct AteEstimate {
  Method method = Method::kFr;
  double theta = 0.0;
  double se = 0.0;
  double level = 0.95;
  double ci_low = 0.0, ci_high = 0.0;
  std::size_t n = 0;
  // Score per row; rows outside the estimation sample hold NaN.
  std::vector<double> scores;
  NuisanceDiagnostics diagnostics;

  nlohmann::json to_json() const;
};

// Builds an estimate from scores: theta = mean, se = sd(n denominator)/sqrt(n).
AteEstimate summarize_scores(Method method, std::vector<double> scores, double level);

double plugin_alpha_short(double p1, double pi_s1, double pi_s0, int d, int s);

// Per-row scores with nuisances supplied by the caller. With normalize set,
// inverse-probability weights are rescaled to mean one per arm within each fold.
std::vector<double> irm_scores(const Dataset& data, const NuisanceFit& nf, const FoldPlan& folds, IrmSample sample,
                               bool normalize);
std::vector<double> ssm_scores(const Dataset& data, const NuisanceFit& nf, const FoldPlan& folds, bool normalize);
std::vector<double> dr_scores(const Dataset& data, std::span<const double> g1, std::span<const double> g0,
                              std::span<const double> alpha);

// Cross-fitted propensities and outcome regressions for the given method.
NuisanceFit fit_nuisances(const Dataset& data, const FoldPlan& folds, Method method, const Learners& learners);

struct EstimateResult {
  AteEstimate estimate;
  NuisanceFit nuisances;
};

EstimateResult estimate(const Dataset& data, const FoldPlan& folds, Method method, const Learners& learners);
AteEstimate estimate_irm(const Dataset& data, const FoldPlan& folds, const Learners& learners);
AteEstimate estimate_ssm(const Dataset& data, const FoldPlan& folds, const Learners& learners);
AteEstimate estimate_fr(const Dataset& data, const FoldPlan& folds, const Learners& learners);

using TestFunction = std::function<double(int d, std::span<const double> x, int s)>;

// (mean(alpha * g(d,x,s)), mean(g(1,x,1) - g(0,x,1))).
std::pair<double, double> representer_check(std::span<const double> alpha, const TestFunction& g,
                                            const Dataset& data);

}  // namespace selriesz
