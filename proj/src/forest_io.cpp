#include <string>

#include "selriesz/errors.hpp"
#include "selriesz/forest.hpp"

namespace selriesz {

namespace {
constexpr const char* kFormat = "selriesz.moment_forest";
constexpr int kVersion = 1;
}  // namespace

nlohmann::json ForestConfig::to_json() const {
  return {{"n_trees", n_trees},     {"min_leaf", min_leaf},
          {"max_depth", max_depth}, {"subsample_fraction", subsample_fraction},
          {"mtry", mtry},           {"ridge", ridge},
          {"honest", honest},       {"multitask_weight", multitask_weight},
          {"seed", seed},           {"max_bins", max_bins}};
}

ForestConfig ForestConfig::from_json(const nlohmann::json& j) {
  ForestConfig c;
  c.n_trees = j.value("n_trees", c.n_trees);
  c.min_leaf = j.value("min_leaf", c.min_leaf);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
  c.mtry = j.value("mtry", c.mtry);
  c.ridge = j.value("ridge", c.ridge);
  c.honest = j.value("honest", c.honest);
  c.multitask_weight = j.value("multitask_weight", c.multitask_weight);
  c.seed = j.value("seed", c.seed);
  c.max_bins = j.value("max_bins", c.max_bins);
  c.validate();
  return c;
}

nlohmann::json MomentForest::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const Tree& t : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.leaf});
    nlohmann::json leaves = nlohmann::json::array();
    for (const TreeLeaf& l : t.leaves) {
      nlohmann::json jl{{"count", l.count}};
      if (fmap_) {
        jl["beta"] = std::vector<double>(l.beta.data(), l.beta.data() + l.beta.size());
        jl["ridge"] = l.ridge_used;
      }
      if (n_groups_ > 0) {
        jl["value"] = l.value;
        jl["value_count"] = l.value_count;
      }
      leaves.push_back(std::move(jl));
    }
    trees.push_back({{"nodes", std::move(nodes)}, {"leaves", std::move(leaves)}});
  }
  nlohmann::json j{{"format", kFormat},
                   {"version", kVersion},
                   {"p", p_},
                   {"config", config_.to_json()},
                   {"feature_map", fmap_ ? fmap_->to_json() : nlohmann::json(nullptr)},
                   {"regression", n_groups_ > 0 ? nlohmann::json{{"target", target_name_}, {"groups", n_groups_}}
                                                : nlohmann::json(nullptr)},
                   {"trees", std::move(trees)}};
  return j;
}

MomentForest MomentForest::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kFormat) throw ParseError("not a moment forest document");
    if (j.at("version").get<int>() != kVersion)
      throw ParseError("unsupported forest version " + std::to_string(j.at("version").get<int>()));
    MomentForest f;
    f.p_ = j.at("p").get<std::size_t>();
    f.config_ = ForestConfig::from_json(j.at("config"));
    if (!j.at("feature_map").is_null()) f.fmap_ = FeatureMap::from_json(j.at("feature_map"));
    if (!j.at("regression").is_null()) {
      f.target_name_ = j.at("regression").at("target").get<std::string>();
      f.n_groups_ = j.at("regression").at("groups").get<std::size_t>();
    }
    for (const auto& jt : j.at("trees")) {
      Tree t;
      for (const auto& jn : jt.at("nodes")) {
        TreeNode n;
        n.feature = jn.at(0).get<int>();
        n.threshold = jn.at(1).get<double>();
        n.left = jn.at(2).get<int>();
        n.right = jn.at(3).get<int>();
        n.leaf = jn.at(4).get<int>();
        if (n.feature >= static_cast<int>(f.p_)) throw ParseError("split on a non-covariate column");
        t.nodes.push_back(n);
      }
      for (const auto& jl : jt.at("leaves")) {
        TreeLeaf l;
        l.count = jl.at("count").get<std::size_t>();
        if (f.fmap_) {
          const auto beta = jl.at("beta").get<std::vector<double>>();
          if (beta.size() != f.fmap_->dim()) throw ParseError("leaf coefficient length mismatch");
          l.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
          l.ridge_used = jl.at("ridge").get<double>();
        }
        if (f.n_groups_ > 0) {
          l.value = jl.at("value").get<std::vector<double>>();
          l.value_count = jl.at("value_count").get<std::vector<std::size_t>>();
        }
        t.leaves.push_back(std::move(l));
      }
      const int n_nodes = static_cast<int>(t.nodes.size());
      const int n_leaves = static_cast<int>(t.leaves.size());
      for (const TreeNode& n : t.nodes) {
        const bool ok = n.feature < 0 ? (n.leaf >= 0 && n.leaf < n_leaves)
                                      : (n.left > 0 && n.left < n_nodes && n.right > 0 && n.right < n_nodes);
        if (!ok) throw ParseError("malformed tree node");
      }
      f.trees_.push_back(std::move(t));
    }
    if (f.trees_.empty()) throw ParseError("forest has no trees");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("forest JSON: ") + e.what());
  }
}

}  // namespace selriesz
