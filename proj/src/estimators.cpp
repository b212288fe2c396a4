#include "selriesz/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "selriesz/errors.hpp"
#include "selriesz/normal.hpp"
#include "selriesz/rng.hpp"

namespace selriesz {

Method parse_method(const std::string& name) {
  if (name == "irm") return Method::kIrm;
  if (name == "ssm") return Method::kSsm;
  if (name == "fr") return Method::kFr;
  throw ConfigError("unknown method '" + name + "' (expected irm, ssm or fr)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kIrm: return "irm";
    case Method::kSsm: return "ssm";
    case Method::kFr: return "fr";
  }
  return "?";
}

OutcomeKind parse_outcome_kind(const std::string& name) {
  if (name == "forest") return OutcomeKind::kForest;
  if (name == "linear") return OutcomeKind::kLinear;
  throw ConfigError("unknown outcome learner '" + name + "' (expected forest or linear)");
}

std::string to_string(OutcomeKind k) { return k == OutcomeKind::kForest ? "forest" : "linear"; }

IrmSample parse_irm_sample(const std::string& name) {
  if (name == "zero-filled") return IrmSample::kZeroFilled;
  if (name == "selected") return IrmSample::kSelectedOnly;
  throw ConfigError("unknown IRM sample '" + name + "' (expected zero-filled or selected)");
}

std::string to_string(IrmSample s) { return s == IrmSample::kZeroFilled ? "zero-filled" : "selected"; }

void Learners::validate() const {
  forest.validate();
  if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("clip must lie in (0, 0.5)");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
}

nlohmann::json Learners::to_json() const {
  return {{"propensity", to_string(propensity)},
          {"outcome", to_string(outcome)},
          {"feature_map", feature_map == FeatureMapKind::kArmLinear ? "arm-linear" : "intercepts"},
          {"forest", forest.to_json()},
          {"irm_sample", to_string(irm_sample)},
          {"clip", clip},
          {"lambda", lambda},
          {"level", level},
          {"normalize_ipw", normalize_ipw}};
}

nlohmann::json NuisanceDiagnostics::to_json() const {
  return {{"p1_clipped", p1_clipped}, {"pi_clipped", pi_clipped}, {"p1_range", {p1_min, p1_max}},
          {"pi_range", {pi_min, pi_max}}, {"alpha_range", {alpha_min, alpha_max}}, {"fold_sizes", fold_sizes}};
}

nlohmann::json AteEstimate::to_json() const {
  return {{"method", to_string(method)}, {"theta", theta},   {"se", se},
          {"level", level},              {"ci", {ci_low, ci_high}}, {"n", n},
          {"diagnostics", diagnostics.to_json()}};
}

AteEstimate summarize_scores(Method method, std::vector<double> scores, double level) {
  AteEstimate e;
  e.method = method;
  e.level = level;
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : scores) {
    if (std::isnan(v)) continue;
    if (!std::isfinite(v)) throw NumericalError("non-finite score");
    sum += v;
    ++n;
  }
  if (n == 0) throw NumericalError("no scores to summarize");
  e.n = n;
  e.theta = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : scores)
    if (!std::isnan(v)) ss += (v - e.theta) * (v - e.theta);
  e.se = std::sqrt(ss / static_cast<double>(n)) / std::sqrt(static_cast<double>(n));
  const double z = normal_critical(level);
  e.ci_low = e.theta - z * e.se;
  e.ci_high = e.theta + z * e.se;
  e.scores = std::move(scores);
  return e;
}

double plugin_alpha_short(double p1, double pi_s1, double pi_s0, int d, int s) {
  if (s == 0) return 0.0;
  return d == 1 ? 1.0 / (p1 * pi_s1) : -1.0 / ((1.0 - p1) * pi_s0);
}

namespace {

void check_lengths(const Dataset& data, const NuisanceFit& nf) {
  const std::size_t n = data.n();
  if (nf.p1.size() != n || nf.g1.size() != n || nf.g0.size() != n || nf.fold.size() != n)
    throw DimensionError("nuisance vectors do not match the dataset");
}

// Per-fold mean of a weight vector over the rows flagged in `use`.
std::vector<double> fold_means(const std::vector<double>& w, const std::vector<std::size_t>& fold, std::size_t k,
                               const std::vector<bool>& use) {
  std::vector<double> sum(k, 0.0), cnt(k, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!use[i]) continue;
    sum[fold[i]] += w[i];
    cnt[fold[i]] += 1.0;
  }
  for (std::size_t f = 0; f < k; ++f) sum[f] = cnt[f] > 0 && sum[f] > 0 ? sum[f] / cnt[f] : 1.0;
  return sum;
}

// Shared AIPW form: g1 - g0 + w1 (y - g1) - w0 (y - g0).
std::vector<double> weighted_scores(const Dataset& data, const NuisanceFit& nf, const FoldPlan& folds,
                                    std::vector<double> w1, std::vector<double> w0, const std::vector<bool>& use,
                                    bool normalize) {
  const std::size_t n = data.n();
  if (normalize) {
    const auto m1 = fold_means(w1, nf.fold, folds.k(), use);
    const auto m0 = fold_means(w0, nf.fold, folds.k(), use);
    for (std::size_t i = 0; i < n; ++i) {
      w1[i] /= m1[nf.fold[i]];
      w0[i] /= m0[nf.fold[i]];
    }
  }
  std::vector<double> out(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < n; ++i) {
    if (!use[i]) continue;
    const double y = data.y_or_zero(i);
    out[i] = nf.g1[i] - nf.g0[i] + w1[i] * (y - nf.g1[i]) - w0[i] * (y - nf.g0[i]);
  }
  return out;
}

}  // namespace

std::vector<double> irm_scores(const Dataset& data, const NuisanceFit& nf, const FoldPlan& folds, IrmSample sample,
                               bool normalize) {
  check_lengths(data, nf);
  const std::size_t n = data.n();
  std::vector<double> w1(n, 0.0), w0(n, 0.0);
  std::vector<bool> use(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    if (sample == IrmSample::kSelectedOnly && data.s(i) == 0) {
      use[i] = false;
      continue;
    }
    if (data.d(i) == 1)
      w1[i] = 1.0 / nf.p1[i];
    else
      w0[i] = 1.0 / (1.0 - nf.p1[i]);
  }
  return weighted_scores(data, nf, folds, std::move(w1), std::move(w0), use, normalize);
}

std::vector<double> ssm_scores(const Dataset& data, const NuisanceFit& nf, const FoldPlan& folds, bool normalize) {
  check_lengths(data, nf);
  const std::size_t n = data.n();
  std::vector<double> w1(n, 0.0), w0(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (data.s(i) == 0) continue;
    if (data.d(i) == 1)
      w1[i] = 1.0 / (nf.p1[i] * nf.pi1[i]);
    else
      w0[i] = 1.0 / ((1.0 - nf.p1[i]) * nf.pi0[i]);
  }
  return weighted_scores(data, nf, folds, std::move(w1), std::move(w0), std::vector<bool>(n, true), normalize);
}

std::vector<double> dr_scores(const Dataset& data, std::span<const double> g1, std::span<const double> g0,
                              std::span<const double> alpha) {
  const std::size_t n = data.n();
  if (g1.size() != n || g0.size() != n || alpha.size() != n)
    throw DimensionError("nuisance vectors do not match the dataset");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = g1[i] - g0[i];
    if (data.s(i) == 1) v += alpha[i] * (data.y_or_zero(i) - (data.d(i) == 1 ? g1[i] : g0[i]));
    out[i] = v;
  }
  return out;
}

namespace {

// Outcome model per arm: either a regression-head forest or two OLS fits.
struct OutcomeFit {
  std::shared_ptr<const MomentForest> forest;
  LinearModel linear[2];
  bool use_forest = true;

  double predict(int d, std::span<const double> x) const {
    return use_forest ? forest->predict_g(d, x) : linear[d].predict(x);
  }
};

OutcomeFit fit_outcome(const Dataset& data, const std::vector<std::size_t>& train, bool zero_filled,
                       const Learners& learners, std::uint64_t seed) {
  OutcomeFit out;
  RegressionTarget target = RegressionTarget::outcome(data);
  if (zero_filled) {
    target.name = "zero-filled outcome";
    std::fill(target.include.begin(), target.include.end(), 1);
  }
  if (learners.outcome == OutcomeKind::kForest) {
    ForestConfig cfg = learners.forest;
    cfg.seed = seed;
    out.forest = std::make_shared<const MomentForest>(train_forest(data, train, nullptr, &target, cfg));
    return out;
  }
  out.use_forest = false;
  for (int d = 0; d < 2; ++d) {
    std::vector<std::size_t> rows;
    for (std::size_t i : train)
      if (data.d(i) == d && target.include[i]) rows.push_back(i);
    if (rows.size() < data.p() + 1) throw TrainError("too few rows for the linear outcome model");
    RowMatrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.p()));
    std::vector<double> y(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)) = data.x().row(static_cast<Eigen::Index>(rows[r]));
      y[r] = target.value[rows[r]];
    }
    out.linear[d] = fit_linear(x, y);
  }
  return out;
}

void fill_ranges(NuisanceFit& nf) {
  auto& dg = nf.diagnostics;
  const auto [p_lo, p_hi] = std::minmax_element(nf.p1.begin(), nf.p1.end());
  dg.p1_min = *p_lo;
  dg.p1_max = *p_hi;
  dg.pi_min = std::min(*std::min_element(nf.pi1.begin(), nf.pi1.end()),
                       *std::min_element(nf.pi0.begin(), nf.pi0.end()));
  dg.pi_max = std::max(*std::max_element(nf.pi1.begin(), nf.pi1.end()),
                       *std::max_element(nf.pi0.begin(), nf.pi0.end()));
  const auto [a_lo, a_hi] = std::minmax_element(nf.alpha.begin(), nf.alpha.end());
  dg.alpha_min = *a_lo;
  dg.alpha_max = *a_hi;
}

}  // namespace

NuisanceFit fit_nuisances(const Dataset& data, const FoldPlan& folds, Method method, const Learners& learners) {
  learners.validate();
  folds.validate(data);
  const std::size_t n = data.n();
  NuisanceFit nf;
  for (auto* v : {&nf.p1, &nf.pi1, &nf.pi0, &nf.g1, &nf.g0, &nf.alpha, &nf.alpha_plugin, &nf.alpha_moment})
    v->assign(n, 0.0);
  nf.fold = folds.assignment();
  nf.diagnostics.fold_sizes = folds.fold_sizes();

  std::vector<ForestPair> pairs;
  if (method == Method::kFr)
    pairs = fit(data, folds, FeatureMap::make(learners.feature_map, data), learners.forest);

  const bool irm_selected = method == Method::kIrm && learners.irm_sample == IrmSample::kSelectedOnly;
  const std::uint64_t base = learners.forest.seed;
  for (std::size_t f = 0; f < folds.k(); ++f) {
    auto train = folds.rows_not_in(f);
    const auto test = folds.rows_in(f);
    if (irm_selected) std::erase_if(train, [&](std::size_t i) { return data.s(i) == 0; });

    ForestConfig pcfg = learners.forest;
    pcfg.seed = derive_seed(base, {f, 3});
    const auto treat = PropensityModel::fit(data, train, PropensityTarget::kTreatment, learners.propensity,
                                            learners.clip, pcfg, learners.lambda);
    // The selection model always uses every training row of the fold.
    const auto all_train = folds.rows_not_in(f);
    pcfg.seed = derive_seed(base, {f, 4});
    const auto sel = PropensityModel::fit(data, all_train, PropensityTarget::kSelection, learners.propensity,
                                          learners.clip, pcfg, learners.lambda);

    OutcomeFit outcome;
    if (method != Method::kFr) {
      const bool zero_filled = method == Method::kIrm && learners.irm_sample == IrmSample::kZeroFilled;
      outcome = fit_outcome(data, train, zero_filled, learners, derive_seed(base, {f, 2}));
    }

    std::vector<double> alpha_fr;
    if (method == Method::kFr) alpha_fr = pairs[f].alpha->predict_alpha(data, test);
    for (std::size_t t = 0; t < test.size(); ++t) {
      const std::size_t i = test[t];
      const auto x = data.row(i);
      nf.p1[i] = treat.predict(1, x);
      nf.pi1[i] = sel.predict(1, x);
      nf.pi0[i] = sel.predict(0, x);
      nf.diagnostics.p1_clipped += treat.clipped(1, x) ? 1 : 0;
      nf.diagnostics.pi_clipped += (sel.clipped(1, x) ? 1 : 0) + (sel.clipped(0, x) ? 1 : 0);
      if (method == Method::kFr) {
        nf.g1[i] = pairs[f].g->predict_g(1, x);
        nf.g0[i] = pairs[f].g->predict_g(0, x);
      } else {
        nf.g1[i] = outcome.predict(1, x);
        nf.g0[i] = outcome.predict(0, x);
      }
      nf.alpha_plugin[i] = plugin_alpha_short(nf.p1[i], nf.pi1[i], nf.pi0[i], data.d(i), data.s(i));
      nf.alpha[i] = method == Method::kFr ? alpha_fr[t] : nf.alpha_plugin[i];
      if (method == Method::kFr)
        nf.alpha_moment[i] = pairs[f].alpha->predict_alpha(1, x, 1) - pairs[f].alpha->predict_alpha(0, x, 1);
      else
        nf.alpha_moment[i] = 1.0 / (nf.p1[i] * nf.pi1[i]) + 1.0 / ((1.0 - nf.p1[i]) * nf.pi0[i]);
    }
  }
  fill_ranges(nf);
  return nf;
}

EstimateResult estimate(const Dataset& data, const FoldPlan& folds, Method method, const Learners& learners) {
  EstimateResult r;
  r.nuisances = fit_nuisances(data, folds, method, learners);
  std::vector<double> scores;
  switch (method) {
    case Method::kIrm:
      scores = irm_scores(data, r.nuisances, folds, learners.irm_sample, learners.normalize_ipw);
      break;
    case Method::kSsm:
      scores = ssm_scores(data, r.nuisances, folds, learners.normalize_ipw);
      break;
    case Method::kFr:
      scores = dr_scores(data, r.nuisances.g1, r.nuisances.g0, r.nuisances.alpha);
      break;
  }
  r.estimate = summarize_scores(method, std::move(scores), learners.level);
  r.estimate.diagnostics = r.nuisances.diagnostics;
  return r;
}

AteEstimate estimate_irm(const Dataset& data, const FoldPlan& folds, const Learners& learners) {
  return estimate(data, folds, Method::kIrm, learners).estimate;
}

AteEstimate estimate_ssm(const Dataset& data, const FoldPlan& folds, const Learners& learners) {
  return estimate(data, folds, Method::kSsm, learners).estimate;
}

AteEstimate estimate_fr(const Dataset& data, const FoldPlan& folds, const Learners& learners) {
  return estimate(data, folds, Method::kFr, learners).estimate;
}

std::pair<double, double> representer_check(std::span<const double> alpha, const TestFunction& g,
                                            const Dataset& data) {
  if (alpha.size() != data.n()) throw DimensionError("alpha length does not match the dataset");
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto x = data.row(i);
    lhs += alpha[i] * g(data.d(i), x, data.s(i));
    rhs += g(1, x, 1) - g(0, x, 1);
  }
  const double n = static_cast<double>(data.n());
  return {lhs / n, rhs / n};
}

}  // namespace selriesz
