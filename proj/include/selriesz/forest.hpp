#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "selriesz/data.hpp"
#include "selriesz/feature_map.hpp"

namespace selriesz {

struct ForestConfig {
  std::size_t n_trees = 100;
  // Minimum rows per child in every cell a head needs: the selected cells
  // (s=1, d=0) and (s=1, d=1) for the representer, the included rows of each
  // group for the regression head. With a representer head the floor is
  // raised to 3x the per-arm coefficient count (see effective_min_leaf).
  std::size_t min_leaf = 20;
  std::size_t max_depth = 12;
  double subsample_fraction = 0.5;
  // Covariates tried per split; 0 means all of them.
  std::size_t mtry = 0;
  // Starting ridge; 0 means 1e-6 * trace(J) / dim at each node.
  double ridge = 0.0;
  bool honest = false;
  // Weight of the regression criterion in a shared split score; 0 trains the
  // two heads as separate forests.
  double multitask_weight = 0.5;
  std::uint64_t seed = 42;
  // Candidate thresholds per covariate and node, at quantile positions.
  std::size_t max_bins = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static ForestConfig from_json(const nlohmann::json& j);
};

struct NodeSolution {
  Eigen::MatrixXd j;
  Eigen::VectorXd m;
  Eigen::VectorXd beta;
  double count = 0.0;
  double ridge_used = 0.0;
};

// Solves (j + rho I) beta = m with rho escalating from the starting ridge by
// factors of 10, at most 6 times. ridge <= 0 selects the trace-scaled default.
NodeSolution solve_moment_system(Eigen::MatrixXd j, Eigen::VectorXd m, double count, double ridge);

NodeSolution solve_node(std::span<const std::size_t> rows, const Dataset& data, const FeatureMap& fmap,
                        double ridge);
// Weighted means; weights must be positive.
NodeSolution solve_node(std::span<const std::size_t> rows, std::span<const double> weights, const Dataset& data,
                        const FeatureMap& fmap, double ridge);

// Per-group leaf means of a target over included rows (the regression head).
struct RegressionTarget {
  std::string name;
  std::vector<double> value;
  std::vector<std::uint8_t> include;
  std::vector<std::uint8_t> group;
  std::size_t n_groups = 1;

  // y on s = 1 rows, one group per arm: E[Y | D = d, X, S = 1].
  static RegressionTarget outcome(const Dataset& data);
  // s on all rows, one group per arm: P(S = 1 | D = d, X).
  static RegressionTarget selection(const Dataset& data);
  // d on all rows, single group: P(D = 1 | X).
  static RegressionTarget treatment(const Dataset& data);
};

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;  // rows with x <= threshold go left
};

struct SplitScoreOptions {
  std::size_t min_leaf = 1;
  // > 0 mixes in the outcome regression criterion, rescaled to the Riesz
  // criterion's parent level.
  double multitask_weight = 0.0;
};

constexpr double kInfeasibleSplit = -std::numeric_limits<double>::infinity();

double split_score(std::span<const std::size_t> parent_rows, const SplitCandidate& split, const Dataset& data,
                   const FeatureMap& fmap, double ridge, const SplitScoreOptions& options = {});

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf = -1;
};

struct TreeLeaf {
  Eigen::VectorXd beta;
  double ridge_used = 0.0;
  std::size_t count = 0;
  std::vector<double> value;        // regression head, one per group
  std::vector<std::size_t> value_count;
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<TreeLeaf> leaves;

  const TreeLeaf& leaf_for(std::span<const double> x) const;
  std::size_t depth() const;
};

// Immutable after training; safe to share across threads.
class MomentForest {
 public:
  const ForestConfig& config() const { return config_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const std::optional<FeatureMap>& feature_map() const { return fmap_; }
  bool has_representer() const { return fmap_.has_value(); }
  bool has_regression() const { return n_groups_ > 0; }
  std::size_t n_groups() const { return n_groups_; }
  const std::string& regression_target() const { return target_name_; }
  std::size_t p() const { return p_; }

  double predict_alpha(int d, std::span<const double> x, int s) const;
  // Group value; for single-group heads d is ignored.
  double predict_g(int d, std::span<const double> x) const;

  // Batched predictions, parallel across rows.
  std::vector<double> predict_alpha(const Dataset& data, std::span<const std::size_t> rows) const;
  std::vector<double> predict_g(int d, const Dataset& data, std::span<const std::size_t> rows) const;

  nlohmann::json to_json() const;
  static MomentForest from_json(const nlohmann::json& j);

 private:
  friend MomentForest train_forest(const Dataset&, std::span<const std::size_t>, const FeatureMap*,
                                   const RegressionTarget*, const ForestConfig&);
  ForestConfig config_;
  std::optional<FeatureMap> fmap_;
  std::size_t n_groups_ = 0;
  std::string target_name_;
  std::size_t p_ = 0;
  std::vector<Tree> trees_;
};

// Trains one forest on the given rows. fmap enables the representer head,
// target the regression head; with both, splits use the shared score.
MomentForest train_forest(const Dataset& data, std::span<const std::size_t> rows, const FeatureMap* fmap,
                          const RegressionTarget* target, const ForestConfig& cfg);

// Per-cell minimum used in training: a leaf-local linear representer needs
// several selected rows per coefficient in each arm.
std::size_t effective_min_leaf(const ForestConfig& cfg, const FeatureMap* fmap);

struct ForestPair {
  std::shared_ptr<const MomentForest> alpha;
  std::shared_ptr<const MomentForest> g;
};

// One pair per fold, trained on the rows outside the fold.
std::vector<ForestPair> fit(const Dataset& data, const FoldPlan& folds, const FeatureMap& fmap,
                            const ForestConfig& cfg);

}  // namespace selriesz
