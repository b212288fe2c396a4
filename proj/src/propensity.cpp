#include "selriesz/propensity.hpp"

#include <algorithm>
#include <cmath>

#include "selriesz/errors.hpp"

namespace selriesz {

namespace {

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double softplus(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

}  // namespace

double LogisticModel::linear_predictor(std::span<const double> x) const {
  if (static_cast<Eigen::Index>(x.size()) != center.size()) throw DimensionError("logistic: feature dimension mismatch");
  double eta = coef[0];
  for (Eigen::Index j = 0; j < center.size(); ++j)
    eta += coef[j + 1] * (x[static_cast<std::size_t>(j)] - center[j]) / scale[j];
  return eta;
}

double LogisticModel::predict(std::span<const double> x) const { return sigmoid(linear_predictor(x)); }

LogisticModel fit_logistic(const RowMatrix& features, std::span<const std::uint8_t> labels,
                           std::span<const double> weights, double lambda) {
  const Eigen::Index n = features.rows(), p = features.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw DimensionError("logistic: labels length mismatch");
  if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n)
    throw DimensionError("logistic: weights length mismatch");
  if (!(lambda >= 0.0)) throw ConfigError("logistic: lambda must be >= 0");
  Eigen::VectorXd w = weights.empty() ? Eigen::VectorXd::Ones(n)
                                      : Eigen::Map<const Eigen::VectorXd>(weights.data(), n).eval();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)];
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw ConfigError("logistic: weights must have positive sum");
  const double ybar = w.dot(y) / wsum;
  if (!(ybar > 0.0 && ybar < 1.0)) throw TrainError("logistic: both classes must be present");

  LogisticModel model;
  model.center.resize(p);
  model.scale.resize(p);
  Eigen::MatrixXd z(n, p + 1);
  z.col(0).setOnes();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double mean = w.dot(features.col(j)) / wsum;
    const double var = w.dot((features.col(j).array() - mean).square().matrix()) / wsum;
    const double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    model.center[j] = mean;
    model.scale[j] = sd;
    z.col(j + 1) = (features.col(j).array() - mean) / sd;
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  beta[0] = std::log(ybar / (1.0 - ybar));
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p + 1, lambda);
  penalty[0] = 0.0;
  auto objective = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = z * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += w[i] * (y[i] * eta[i] - softplus(eta[i]));
    return ll / wsum - 0.5 * (penalty.array() * b.array().square()).sum();
  };

  double f = objective(beta);
  for (int it = 1; it <= 100; ++it) {
    model.iterations = it;
    const Eigen::VectorXd eta = z * beta;
    Eigen::VectorXd resid(n), hw(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = sigmoid(eta[i]);
      resid[i] = w[i] * (y[i] - mu);
      hw[i] = w[i] * std::max(mu * (1.0 - mu), 1e-300);
    }
    Eigen::VectorXd grad = z.transpose() * resid / wsum - (penalty.array() * beta.array()).matrix();
    Eigen::MatrixXd h = z.transpose() * hw.asDiagonal() * z / wsum;
    h.diagonal() += penalty;
    h.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = h.ldlt().solve(grad);
    if (!step.allFinite() || step.norm() > 1e6) throw SeparationError("logistic: IRLS step diverged (separation)");
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double fn = objective(next);
    // Near the optimum the objective cannot resolve the gain of a Newton
    // step, so rounding-level decreases are accepted.
    const double slack = 1e-12 * (1.0 + std::abs(f));
    for (int halve = 0; halve < 40 && !(fn >= f - slack); ++halve) {
      t *= 0.5;
      next = beta + t * step;
      fn = objective(next);
    }
    beta = next;
    f = fn;
    if (step.cwiseAbs().maxCoeff() < 1e-8) {
      model.converged = true;
      break;
    }
  }
  model.coef = beta;
  if (!model.converged) {
    // Unpenalized fits on separable data drift without bound while every
    // fitted probability saturates at its label.
    double worst = 0.0;
    const Eigen::VectorXd eta = z * beta;
    for (Eigen::Index i = 0; i < n; ++i)
      if (w[i] > 0.0) worst = std::max(worst, std::abs(y[i] - sigmoid(eta[i])));
    if (worst < 1e-6) throw SeparationError("logistic: labels are perfectly separated");
  }
  return model;
}

double LinearModel::predict(std::span<const double> x) const {
  if (static_cast<Eigen::Index>(x.size()) + 1 != coef.size()) throw DimensionError("linear: feature dimension mismatch");
  double v = coef[0];
  for (std::size_t j = 0; j < x.size(); ++j) v += coef[static_cast<Eigen::Index>(j) + 1] * x[j];
  return v;
}

LinearModel fit_linear(const RowMatrix& features, std::span<const double> targets) {
  const Eigen::Index n = features.rows(), p = features.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n) throw DimensionError("linear: targets length mismatch");
  if (n == 0) throw TrainError("linear: no rows");
  Eigen::MatrixXd z(n, p + 1);
  z.col(0).setOnes();
  z.rightCols(p) = features;
  const Eigen::Map<const Eigen::VectorXd> y(targets.data(), n);
  LinearModel m;
  m.coef = z.colPivHouseholderQr().solve(y);
  return m;
}

PropensityKind parse_propensity_kind(const std::string& name) {
  if (name == "logistic") return PropensityKind::kLogistic;
  if (name == "forest") return PropensityKind::kForest;
  throw ConfigError("unknown propensity learner '" + name + "' (expected logistic or forest)");
}

std::string to_string(PropensityKind kind) { return kind == PropensityKind::kLogistic ? "logistic" : "forest"; }

PropensityModel PropensityModel::fit(const Dataset& data, std::span<const std::size_t> rows, PropensityTarget target,
                                     PropensityKind kind, double clip, const ForestConfig& forest, double lambda) {
  if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("clip must lie in (0, 0.5)");
  PropensityModel m;
  m.kind_ = kind;
  m.target_ = target;
  m.clip_ = clip;
  const std::size_t models = target == PropensityTarget::kTreatment ? 1 : 2;
  m.constant_one_.assign(models, false);

  // Rows and labels per model.
  std::vector<std::vector<std::size_t>> model_rows(models);
  for (std::size_t i : rows) {
    if (target == PropensityTarget::kTreatment)
      model_rows[0].push_back(i);
    else
      model_rows[static_cast<std::size_t>(data.d(i))].push_back(i);
  }
  auto label = [&](std::size_t i) { return target == PropensityTarget::kTreatment ? data.d(i) : data.s(i); };
  for (std::size_t k = 0; k < models; ++k) {
    std::size_t ones = 0;
    for (std::size_t i : model_rows[k]) ones += static_cast<std::size_t>(label(i));
    if (model_rows[k].empty() || ones == 0)
      throw TrainError("propensity: no positive labels for a " +
                       std::string(target == PropensityTarget::kTreatment ? "treatment" : "selection") + " model");
    if (ones == model_rows[k].size()) {
      if (target == PropensityTarget::kSelection) {
        m.constant_one_[k] = true;
        continue;
      }
      throw TrainError("propensity: treatment labels have a single class");
    }
  }

  if (kind == PropensityKind::kLogistic) {
    m.logistic_.resize(models);
    for (std::size_t k = 0; k < models; ++k) {
      if (m.constant_one_[k]) continue;
      RowMatrix x(static_cast<Eigen::Index>(model_rows[k].size()), static_cast<Eigen::Index>(data.p()));
      std::vector<std::uint8_t> y(model_rows[k].size());
      for (std::size_t r = 0; r < model_rows[k].size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) = data.x().row(static_cast<Eigen::Index>(model_rows[k][r]));
        y[r] = static_cast<std::uint8_t>(label(model_rows[k][r]));
      }
      m.logistic_[k] = fit_logistic(x, y, {}, lambda);
    }
  } else {
    const RegressionTarget t =
        target == PropensityTarget::kTreatment ? RegressionTarget::treatment(data) : RegressionTarget::selection(data);
    m.forest_ = std::make_shared<const MomentForest>(train_forest(data, rows, nullptr, &t, forest));
  }
  return m;
}

double PropensityModel::predict_raw(int d, std::span<const double> x) const {
  const std::size_t k = target_ == PropensityTarget::kTreatment ? 0 : static_cast<std::size_t>(d);
  if (constant_one_[k]) return 1.0;
  if (kind_ == PropensityKind::kLogistic) return logistic_[k].predict(x);
  return forest_->predict_g(d, x);
}

double PropensityModel::predict(int d, std::span<const double> x) const {
  const std::size_t k = target_ == PropensityTarget::kTreatment ? 0 : static_cast<std::size_t>(d);
  if (constant_one_[k]) return 1.0;
  return std::clamp(predict_raw(d, x), clip_, 1.0 - clip_);
}

bool PropensityModel::clipped(int d, std::span<const double> x) const {
  const std::size_t k = target_ == PropensityTarget::kTreatment ? 0 : static_cast<std::size_t>(d);
  if (constant_one_[k]) return false;
  const double v = predict_raw(d, x);
  return v < clip_ || v > 1.0 - clip_;
}

}  // namespace selriesz
