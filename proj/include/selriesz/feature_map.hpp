#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "selriesz/data.hpp"

namespace selriesz {

enum class FeatureMapKind { kIntercepts, kArmLinear };

// Feature map r(d, x, s) for the locally linear representer
// alpha(z) = <r(d, x, s), beta(x)>.
//   intercepts:  r = s * [d, 1 - d]                                (dim 2)
//   arm-linear:  r = s * [d, 1 - d, d * xs, (1 - d) * xs]           (dim 2 + 2p)
// where xs is the covariate vector min-max scaled with stored bounds.
// r vanishes when s = 0, and moment(x) = r(1, x, 1) - r(0, x, 1).
class FeatureMap {
 public:
  static FeatureMap intercepts(std::size_t p);
  // Scaling bounds taken from the dataset's covariate columns.
  static FeatureMap arm_linear(const Dataset& data);
  static FeatureMap arm_linear(std::vector<double> lower, std::vector<double> range);
  static FeatureMap make(FeatureMapKind kind, const Dataset& data);

  FeatureMapKind kind() const { return kind_; }
  std::string id() const;
  std::size_t dim() const;
  std::size_t p() const { return p_; }

  void eval(int d, std::span<const double> x, int s, std::span<double> out) const;
  void moment_eval(std::span<const double> x, std::span<double> out) const;
  // Index sets on which r r' is block diagonal for every row (one per arm).
  std::vector<std::vector<std::size_t>> blocks() const;

  nlohmann::json to_json() const;
  static FeatureMap from_json(const nlohmann::json& j);

 private:
  FeatureMapKind kind_ = FeatureMapKind::kIntercepts;
  std::size_t p_ = 0;
  std::vector<double> lower_;
  std::vector<double> inv_range_;
};

FeatureMapKind parse_feature_map_kind(const std::string& name);

}  // namespace selriesz
