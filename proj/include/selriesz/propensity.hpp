#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "selriesz/data.hpp"
#include "selriesz/forest.hpp"

namespace selriesz {

// Penalized logistic regression fitted by IRLS on standardized features.
// The L2 penalty (lambda times half the squared norm, per observation)
// applies to slopes only, so separable data yields bounded coefficients.
struct LogisticModel {
  Eigen::VectorXd coef;    // intercept first, standardized scale
  Eigen::VectorXd center;  // feature means
  Eigen::VectorXd scale;   // feature sds (1 for constant columns)
  int iterations = 0;
  bool converged = false;

  double predict(std::span<const double> x) const;
  double linear_predictor(std::span<const double> x) const;
};

LogisticModel fit_logistic(const RowMatrix& features, std::span<const std::uint8_t> labels,
                           std::span<const double> weights = {}, double lambda = 1e-6);

// Ordinary least squares with intercept via column-pivoted QR.
struct LinearModel {
  Eigen::VectorXd coef;  // intercept first

  double predict(std::span<const double> x) const;
};

LinearModel fit_linear(const RowMatrix& features, std::span<const double> targets);

enum class PropensityKind { kLogistic, kForest };
enum class PropensityTarget { kTreatment, kSelection };

PropensityKind parse_propensity_kind(const std::string& name);
std::string to_string(PropensityKind kind);

// p_1(X) = P(D=1|X) or pi_s(d,X) = P(S=1|D=d,X), clipped to [clip, 1-clip].
// A selection arm whose training rows are all selected is fitted as the
// constant 1 and left unclipped, so S == 1 data reduces to the no-selection case.
class PropensityModel {
 public:
  static PropensityModel fit(const Dataset& data, std::span<const std::size_t> rows, PropensityTarget target,
                             PropensityKind kind, double clip, const ForestConfig& forest, double lambda = 1e-6);

  PropensityKind kind() const { return kind_; }
  PropensityTarget target() const { return target_; }
  double clip() const { return clip_; }

  double predict_raw(int d, std::span<const double> x) const;
  double predict(int d, std::span<const double> x) const;
  bool clipped(int d, std::span<const double> x) const;

 private:
  PropensityKind kind_ = PropensityKind::kLogistic;
  PropensityTarget target_ = PropensityTarget::kTreatment;
  double clip_ = 0.01;
  // One entry for the treatment model, one per arm for selection.
  std::vector<LogisticModel> logistic_;
  std::vector<bool> constant_one_;
  std::shared_ptr<const MomentForest> forest_;
};

}  // namespace selriesz
