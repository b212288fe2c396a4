#include "selriesz/mc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "selriesz/errors.hpp"
#include "selriesz/parallel.hpp"
#include "selriesz/rng.hpp"

namespace selriesz {

void McConfig::validate() const {
  if (reps < 1) throw ConfigError("reps must be >= 1");
  if (sizes.empty()) throw ConfigError("at least one sample size is required");
  for (std::size_t n : sizes)
    if (n < 1) throw ConfigError("sample sizes must be positive");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (!(max_failure_share >= 0.0 && max_failure_share <= 1.0))
    throw ConfigError("max_failure_share must lie in [0, 1]");
  if (dgp == DgpKind::kMar)
    selriesz::validate(mar);
  else
    selriesz::validate(confounded);
  for (const auto& [m, l] : learners) l.validate();
}

nlohmann::json McConfig::to_json() const {
  nlohmann::json methods_j = nlohmann::json::array();
  for (Method m : methods) methods_j.push_back(to_string(m));
  nlohmann::json learners_j = nlohmann::json::object();
  for (Method m : methods) {
    const auto it = learners.find(m);
    learners_j[to_string(m)] = (it == learners.end() ? Learners{} : it->second).to_json();
  }
  return {{"dgp", dgp == DgpKind::kMar ? "mar" : "confounded"},
          {"dgp_config", dgp == DgpKind::kMar ? selriesz::to_json(mar) : selriesz::to_json(confounded)},
          {"methods", methods_j},
          {"reps", reps},
          {"sizes", sizes},
          {"base_seed", base_seed},
          {"folds", folds},
          {"learners", learners_j},
          {"max_failure_share", max_failure_share}};
}

const McCell& McSummary::cell(Method m, std::size_t n) const {
  for (const auto& c : cells)
    if (c.method == m && c.n == n) return c;
  throw ConfigError("no summary cell for " + to_string(m) + " at n = " + std::to_string(n));
}

McSummary summarize(const std::vector<McRecord>& records, double truth) {
  McSummary s;
  s.truth = truth;
  s.records = records;
  std::vector<std::pair<Method, std::size_t>> keys;
  for (const auto& r : records)
    if (std::find(keys.begin(), keys.end(), std::make_pair(r.method, r.n)) == keys.end())
      keys.emplace_back(r.method, r.n);
  std::sort(keys.begin(), keys.end());
  for (const auto& [m, n] : keys) {
    McCell c;
    c.method = m;
    c.n = n;
    std::size_t covered = 0;
    for (const auto& r : records) {
      if (r.method != m || r.n != n) continue;
      if (!r.ok) {
        ++c.failures;
        continue;
      }
      ++c.reps;
      c.estimates.push_back(r.theta);
      c.mean_ate += r.theta;
      c.mean_se += r.se;
      c.mae += std::abs(r.theta - truth);
      if (r.ci_low <= truth && truth <= r.ci_high) ++covered;
    }
    if (c.reps > 0) {
      const double k = static_cast<double>(c.reps);
      c.mean_ate /= k;
      c.mean_se /= k;
      c.mae /= k;
      c.coverage = static_cast<double>(covered) / k;
    }
    s.cells.push_back(std::move(c));
  }
  return s;
}

nlohmann::json McSummary::to_json() const {
  nlohmann::json cells_j = nlohmann::json::array();
  for (const auto& c : cells)
    cells_j.push_back({{"method", to_string(c.method)},
                       {"n", c.n},
                       {"mean_ate", c.mean_ate},
                       {"mean_se", c.mean_se},
                       {"mae", c.mae},
                       {"coverage", c.coverage},
                       {"reps", c.reps},
                       {"failures", c.failures},
                       {"estimates", c.estimates}});
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : records)
    if (!r.ok) failures.push_back({{"rep", r.rep}, {"n", r.n}, {"method", to_string(r.method)}, {"error", r.error}});
  return {{"truth", truth}, {"cells", cells_j}, {"failures", failures}};
}

std::string McSummary::format_table() const {
  std::ostringstream os;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-6s %7s %9s %9s %9s %9s %6s %6s\n", "method", "n", "ATE", "SE", "MAE", "cover",
                "reps", "fail");
  os << buf;
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%-6s %7zu %9.4f %9.4f %9.4f %9.3f %6zu %6zu\n", to_string(c.method).c_str(), c.n,
                  c.mean_ate, c.mean_se, c.mae, c.coverage, c.reps, c.failures);
    os << buf;
  }
  return os.str();
}

void McSummary::write_records_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "rep,n,method,ok,theta,se,ci_low,ci_high,error\n";
  for (const auto& r : records) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.rep << ',' << r.n << ',' << to_string(r.method) << ',' << (r.ok ? 1 : 0) << ',';
    if (r.ok)
      out << format_real(r.theta) << ',' << format_real(r.se) << ',' << format_real(r.ci_low) << ','
          << format_real(r.ci_high);
    else
      out << "NA,NA,NA,NA";
    out << ',' << err << '\n';
  }
}

void McSummary::write_histogram_csv(const std::string& path, std::size_t bins) const {
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "method,n,bin_low,bin_high,count\n";
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : cells)
    for (double v : c.estimates) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(lo <= hi)) return;
  if (hi == lo) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (const auto& c : cells) {
    std::vector<std::size_t> count(bins, 0);
    for (double v : c.estimates)
      ++count[std::min(bins - 1, static_cast<std::size_t>((v - lo) / width))];
    for (std::size_t b = 0; b < bins; ++b)
      out << to_string(c.method) << ',' << c.n << ',' << format_real(lo + width * static_cast<double>(b)) << ','
          << format_real(lo + width * static_cast<double>(b + 1)) << ',' << count[b] << '\n';
  }
}

double mc_truth(const McConfig& cfg) {
  if (cfg.dgp == DgpKind::kMar) return cfg.mar.theta0;
  return enumerate_oracle(cfg.confounded).theta_s;
}

McSummary run_mc(const McConfig& cfg) {
  cfg.validate();
  const std::size_t per_task = cfg.methods.size();
  const std::size_t tasks = cfg.reps * cfg.sizes.size();
  std::vector<McRecord> records(tasks * per_task);
  parallel_for(tasks, [&](std::size_t t) {
    const std::size_t rep = t / cfg.sizes.size();
    const std::size_t n = cfg.sizes[t % cfg.sizes.size()];
    const std::uint64_t seed = derive_seed(cfg.base_seed, {rep, n});
    for (std::size_t k = 0; k < per_task; ++k) {
      McRecord& r = records[t * per_task + k];
      r.rep = rep;
      r.n = n;
      r.method = cfg.methods[k];
    }
    try {
      Dataset data = [&] {
        if (cfg.dgp == DgpKind::kMar) {
          MarDgpConfig dc = cfg.mar;
          dc.n = n;
          dc.seed = seed;
          return gen_mar(dc);
        }
        ConfoundedDgpConfig dc = cfg.confounded;
        dc.n = n;
        dc.seed = seed;
        return gen_confounded(dc).first;
      }();
      const FoldPlan folds = make_folds(data, cfg.folds, derive_seed(seed, {1}));
      for (std::size_t k = 0; k < per_task; ++k) {
        McRecord& r = records[t * per_task + k];
        const auto it = cfg.learners.find(r.method);
        Learners l = it == cfg.learners.end() ? Learners{} : it->second;
        l.forest.seed = derive_seed(seed, {2});
        try {
          const AteEstimate e = estimate(data, folds, r.method, l).estimate;
          r.ok = true;
          r.theta = e.theta;
          r.se = e.se;
          r.ci_low = e.ci_low;
          r.ci_high = e.ci_high;
        } catch (const Error& ex) {
          r.error = ex.what();
        }
      }
    } catch (const Error& ex) {
      for (std::size_t k = 0; k < per_task; ++k) records[t * per_task + k].error = ex.what();
    }
  });
  McSummary s = summarize(records, mc_truth(cfg));
  for (const auto& c : s.cells) {
    const double share = static_cast<double>(c.failures) / static_cast<double>(c.failures + c.reps);
    if (share > cfg.max_failure_share)
      throw TrainError("Monte-Carlo cell " + to_string(c.method) + " n=" + std::to_string(c.n) + " failed in " +
                       std::to_string(c.failures) + " of " + std::to_string(c.failures + c.reps) + " reps");
  }
  return s;
}

}  // namespace selriesz
