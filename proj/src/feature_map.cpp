#include "selriesz/feature_map.hpp"

#include <algorithm>

#include "selriesz/errors.hpp"

namespace selriesz {

FeatureMap FeatureMap::intercepts(std::size_t p) {
  FeatureMap f;
  f.kind_ = FeatureMapKind::kIntercepts;
  f.p_ = p;
  return f;
}

FeatureMap FeatureMap::arm_linear(std::vector<double> lower, std::vector<double> range) {
  if (lower.size() != range.size()) throw DimensionError("feature map bounds differ in length");
  FeatureMap f;
  f.kind_ = FeatureMapKind::kArmLinear;
  f.p_ = lower.size();
  f.lower_ = std::move(lower);
  f.inv_range_.resize(range.size());
  for (std::size_t j = 0; j < range.size(); ++j) f.inv_range_[j] = range[j] > 0.0 ? 1.0 / range[j] : 0.0;
  return f;
}

FeatureMap FeatureMap::arm_linear(const Dataset& data) {
  std::vector<double> lower(data.p()), range(data.p());
  for (std::size_t j = 0; j < data.p(); ++j) {
    auto col = data.x().col(static_cast<Eigen::Index>(j));
    lower[j] = col.minCoeff();
    range[j] = col.maxCoeff() - lower[j];
  }
  return arm_linear(std::move(lower), std::move(range));
}

FeatureMap FeatureMap::make(FeatureMapKind kind, const Dataset& data) {
  return kind == FeatureMapKind::kIntercepts ? intercepts(data.p()) : arm_linear(data);
}

std::string FeatureMap::id() const { return kind_ == FeatureMapKind::kIntercepts ? "intercepts" : "arm-linear"; }

std::size_t FeatureMap::dim() const { return kind_ == FeatureMapKind::kIntercepts ? 2 : 2 + 2 * p_; }

void FeatureMap::eval(int d, std::span<const double> x, int s, std::span<double> out) const {
  if (x.size() != p_) throw DimensionError("feature map: covariate dimension mismatch");
  if (out.size() != dim()) throw DimensionError("feature map: output has wrong length");
  std::fill(out.begin(), out.end(), 0.0);
  if (s == 0) return;
  out[d == 1 ? 0 : 1] = 1.0;
  if (kind_ == FeatureMapKind::kArmLinear) {
    const std::size_t base = d == 1 ? 2 : 2 + p_;
    for (std::size_t j = 0; j < p_; ++j) out[base + j] = (x[j] - lower_[j]) * inv_range_[j];
  }
}

void FeatureMap::moment_eval(std::span<const double> x, std::span<double> out) const {
  if (x.size() != p_) throw DimensionError("feature map: covariate dimension mismatch");
  if (out.size() != dim()) throw DimensionError("feature map: output has wrong length");
  out[0] = 1.0;
  out[1] = -1.0;
  if (kind_ == FeatureMapKind::kArmLinear) {
    for (std::size_t j = 0; j < p_; ++j) {
      const double xs = (x[j] - lower_[j]) * inv_range_[j];
      out[2 + j] = xs;
      out[2 + p_ + j] = -xs;
    }
  }
}

std::vector<std::vector<std::size_t>> FeatureMap::blocks() const {
  std::vector<std::vector<std::size_t>> out{{0}, {1}};
  if (kind_ == FeatureMapKind::kArmLinear) {
    for (std::size_t j = 0; j < p_; ++j) {
      out[0].push_back(2 + j);
      out[1].push_back(2 + p_ + j);
    }
  }
  return out;
}

nlohmann::json FeatureMap::to_json() const {
  nlohmann::json j{{"id", id()}, {"p", p_}};
  if (kind_ == FeatureMapKind::kArmLinear) {
    j["lower"] = lower_;
    j["inv_range"] = inv_range_;
  }
  return j;
}

FeatureMap FeatureMap::from_json(const nlohmann::json& j) {
  FeatureMap f;
  f.kind_ = parse_feature_map_kind(j.at("id").get<std::string>());
  f.p_ = j.at("p").get<std::size_t>();
  if (f.kind_ == FeatureMapKind::kArmLinear) {
    f.lower_ = j.at("lower").get<std::vector<double>>();
    f.inv_range_ = j.at("inv_range").get<std::vector<double>>();
    if (f.lower_.size() != f.p_ || f.inv_range_.size() != f.p_) throw ParseError("feature map bounds length");
  }
  return f;
}

FeatureMapKind parse_feature_map_kind(const std::string& name) {
  if (name == "intercepts") return FeatureMapKind::kIntercepts;
  if (name == "arm-linear") return FeatureMapKind::kArmLinear;
  throw ConfigError("unknown feature map '" + name + "' (expected intercepts or arm-linear)");
}

}  // namespace selriesz
