#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "selriesz/dgp.hpp"
#include "selriesz/estimators.hpp"

namespace selriesz {

enum class DgpKind { kMar, kConfounded };

struct McConfig {
  DgpKind dgp = DgpKind::kMar;
  MarDgpConfig mar;
  ConfoundedDgpConfig confounded = default_confounded_config(1000, 1);
  std::vector<Method> methods{Method::kIrm, Method::kSsm, Method::kFr};
  std::size_t reps = 50;
  std::vector<std::size_t> sizes{1000, 4000};
  std::uint64_t base_seed = 1;
  std::size_t folds = 5;
  // Learners per method; methods without an entry use Learners{}.
  std::map<Method, Learners> learners;
  // Abort when more than this share of a cell's reps fail.
  double max_failure_share = 0.10;

  void validate() const;
  nlohmann::json to_json() const;
};

struct McRecord {
  std::size_t rep = 0;
  std::size_t n = 0;
  Method method = Method::kFr;
  bool ok = false;
  double theta = 0.0, se = 0.0, ci_low = 0.0, ci_high = 0.0;
  std::string error;
};

struct McCell {
  Method method = Method::kFr;
  std::size_t n = 0;
  double mean_ate = 0.0;
  double mean_se = 0.0;
  double mae = 0.0;
  double coverage = 0.0;
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<double> estimates;
};

struct McSummary {
  double truth = 0.0;
  std::vector<McCell> cells;  // ordered by method, then n
  std::vector<McRecord> records;

  const McCell& cell(Method m, std::size_t n) const;
  nlohmann::json to_json() const;
  std::string format_table() const;
  void write_records_csv(const std::string& path) const;
  // Counts of per-rep estimates in equal-width bins over the common range.
  void write_histogram_csv(const std::string& path, std::size_t bins = 30) const;
};

// Aggregates raw records against the true value; deterministic.
McSummary summarize(const std::vector<McRecord>& records, double truth);

// Seeds per (rep, n) come from derive_seed(base_seed, {rep, n}); each
// dataset is shared by every method in that cell.
McSummary run_mc(const McConfig& cfg);

// The value the estimators target under the configured design: theta0 for
// MAR, the enumerated short parameter for the confounded design.
double mc_truth(const McConfig& cfg);

}  // namespace selriesz
