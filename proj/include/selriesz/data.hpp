#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace selriesz {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct CovariateGroup {
  std::string name;
  std::vector<std::size_t> indices;
};

struct DatasetOptions {
  // S == 1 for every row is rejected unless this is set; simulation and
  // reduction tests need the no-selection case.
  bool allow_full_selection = false;
};

// Observed sample W = (Y, D, S, X). Y is stored as an optional so that the
// "missing exactly where S = 0" rule is checked structurally. Immutable.
class Dataset {
 public:
  using Options = DatasetOptions;

  static Dataset create(RowMatrix x, std::vector<std::uint8_t> d, std::vector<std::uint8_t> s,
                        std::vector<std::optional<double>> y, std::vector<std::string> covariate_names,
                        std::vector<CovariateGroup> groups = {}, Options options = {});

  std::size_t n() const { return d_.size(); }
  std::size_t p() const { return static_cast<std::size_t>(x_.cols()); }

  const RowMatrix& x() const { return x_; }
  std::span<const double> row(std::size_t i) const {
    return {x_.data() + i * p(), p()};
  }
  double x(std::size_t i, std::size_t j) const { return x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); }

  int d(std::size_t i) const { return d_[i]; }
  int s(std::size_t i) const { return s_[i]; }
  const std::optional<double>& y(std::size_t i) const { return y_[i]; }
  // Y with the Y = S*Y convention: 0 where unobserved.
  double y_or_zero(std::size_t i) const { return y_[i].value_or(0.0); }

  const std::vector<std::uint8_t>& d_values() const { return d_; }
  const std::vector<std::uint8_t>& s_values() const { return s_; }
  const std::vector<std::optional<double>>& y_values() const { return y_; }
  const std::vector<std::string>& covariate_names() const { return names_; }
  const std::vector<CovariateGroup>& groups() const { return groups_; }
  std::size_t selected_count() const;

  // Copy with the given covariate columns removed (groups referencing them are dropped).
  Dataset without_covariates(const std::vector<std::size_t>& drop) const;
  // Copy with one extra covariate column appended.
  Dataset with_covariate(const std::string& name, std::span<const double> column) const;
  Dataset with_groups(std::vector<CovariateGroup> groups) const;
  // Rows in the given order; validation is re-run on the result.
  Dataset subset(std::span<const std::size_t> rows, Options options = {}) const;

  std::size_t covariate_index(const std::string& name) const;

 private:
  Dataset() = default;
  void validate(const Options& options) const;

  RowMatrix x_;
  std::vector<std::uint8_t> d_;
  std::vector<std::uint8_t> s_;
  std::vector<std::optional<double>> y_;
  std::vector<std::string> names_;
  std::vector<CovariateGroup> groups_;
  Options options_;
};

struct CsvSchema {
  std::string outcome;
  std::string treatment;
  std::string selection;
  std::vector<std::string> drop;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema, Dataset::Options options = {});
// Columns y, d, s, then covariates; missing outcomes written as NA, reals at 17 significant digits.
void write_csv(const Dataset& data, const std::string& path, const std::string& outcome = "y",
               const std::string& treatment = "d", const std::string& selection = "s");

// {"group name": ["col", ...], ...} resolved against the dataset's covariate names.
std::vector<CovariateGroup> load_groups_json(const std::string& path, const Dataset& data);

std::string format_real(double v);

// Cross-fitting partition, stratified by the (d, s) cell.
class FoldPlan {
 public:
  std::size_t k() const { return k_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::size_t>& assignment() const { return assignment_; }
  std::size_t fold_of(std::size_t i) const { return assignment_[i]; }

  std::vector<std::size_t> rows_in(std::size_t fold) const;
  std::vector<std::size_t> rows_not_in(std::size_t fold) const;
  std::vector<std::size_t> fold_sizes() const;

  // Throws StratificationError if the plan does not fit the dataset invariants.
  void validate(const Dataset& data) const;

  static FoldPlan from_assignment(std::vector<std::size_t> assignment, std::size_t k, std::uint64_t seed);

 private:
  friend FoldPlan make_folds(const Dataset& data, std::size_t k, std::uint64_t seed);
  std::size_t k_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::size_t> assignment_;
};

FoldPlan make_folds(const Dataset& data, std::size_t k, std::uint64_t seed);

}  // namespace selriesz
