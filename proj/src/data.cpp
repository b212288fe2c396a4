#include "selriesz/data.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "selriesz/errors.hpp"
#include "selriesz/rng.hpp"

namespace selriesz {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Splits one CSV line; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(trim(field));
  return out;
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NA"; }

double parse_real(const std::string& s, std::size_t line_no, const std::string& column) {
  if (s.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty value in column '" + column + "'");
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse '" + s + "' in column '" + column + "'");
  }
  return v;
}

std::uint8_t parse_binary(const std::string& s, std::size_t line_no, const std::string& column) {
  double v = parse_real(s, line_no, column);
  if (v == 0.0) return 0;
  if (v == 1.0) return 1;
  throw ParseError("line " + std::to_string(line_no) + ": column '" + column + "' must be 0 or 1, got '" + s + "'");
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Dataset Dataset::create(RowMatrix x, std::vector<std::uint8_t> d, std::vector<std::uint8_t> s,
                        std::vector<std::optional<double>> y, std::vector<std::string> covariate_names,
                        std::vector<CovariateGroup> groups, Options options) {
  Dataset ds;
  ds.x_ = std::move(x);
  ds.d_ = std::move(d);
  ds.s_ = std::move(s);
  ds.y_ = std::move(y);
  ds.names_ = std::move(covariate_names);
  ds.groups_ = std::move(groups);
  ds.options_ = options;
  ds.validate(options);
  return ds;
}

void Dataset::validate(const Options& options) const {
  const std::size_t n = d_.size();
  if (n == 0) throw ConsistencyError("dataset has no rows");
  if (s_.size() != n || y_.size() != n || static_cast<std::size_t>(x_.rows()) != n) {
    throw ConsistencyError("column lengths differ");
  }
  if (x_.cols() == 0) throw ConsistencyError("dataset has no covariates");
  if (names_.size() != p()) throw ConsistencyError("covariate name count does not match column count");

  std::array<std::size_t, 2> d_count{}, s_count{};
  for (std::size_t i = 0; i < n; ++i) {
    if (d_[i] > 1 || s_[i] > 1) throw ConsistencyError("treatment and selection must be 0/1");
    ++d_count[d_[i]];
    ++s_count[s_[i]];
    if (s_[i] == 1 && !y_[i]) throw ConsistencyError("row " + std::to_string(i) + ": outcome missing where s = 1");
    if (s_[i] == 0 && y_[i]) throw ConsistencyError("row " + std::to_string(i) + ": outcome present where s = 0");
    if (y_[i] && !std::isfinite(*y_[i])) throw ConsistencyError("row " + std::to_string(i) + ": non-finite outcome");
  }
  if (d_count[0] == 0 || d_count[1] == 0) throw ConsistencyError("degenerate treatment column");
  if (s_count[1] == 0) throw ConsistencyError("degenerate selection column: no observed outcomes");
  if (s_count[0] == 0 && !options.allow_full_selection) {
    throw ConsistencyError("degenerate selection column: every outcome observed");
  }
  if (!x_.allFinite()) throw ConsistencyError("covariates contain NaN or Inf");

  std::set<std::string> seen;
  for (const auto& name : names_) {
    if (!seen.insert(name).second) throw ConsistencyError("duplicate covariate name '" + name + "'");
  }
  std::set<std::size_t> used;
  std::set<std::string> group_names;
  for (const auto& g : groups_) {
    if (!group_names.insert(g.name).second) throw GroupError("duplicate group name '" + g.name + "'");
    for (auto j : g.indices) {
      if (j >= p()) throw GroupError("group '" + g.name + "' references covariate index out of range");
      if (!used.insert(j).second) throw GroupError("groups overlap at covariate '" + names_[j] + "'");
    }
  }
}

std::size_t Dataset::selected_count() const {
  return static_cast<std::size_t>(std::count(s_.begin(), s_.end(), std::uint8_t{1}));
}

std::size_t Dataset::covariate_index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw SchemaError("unknown covariate '" + name + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

Dataset Dataset::without_covariates(const std::vector<std::size_t>& drop) const {
  std::set<std::size_t> dropped(drop.begin(), drop.end());
  for (auto j : dropped) {
    if (j >= p()) throw GroupError("covariate index out of range");
  }
  if (dropped.size() >= p()) throw GroupError("dropping the group leaves no covariates");

  std::vector<std::size_t> keep;
  std::vector<long> remap(p(), -1);
  for (std::size_t j = 0; j < p(); ++j) {
    if (!dropped.count(j)) {
      remap[j] = static_cast<long>(keep.size());
      keep.push_back(j);
    }
  }
  RowMatrix x(x_.rows(), static_cast<Eigen::Index>(keep.size()));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < keep.size(); ++c) {
    x.col(static_cast<Eigen::Index>(c)) = x_.col(static_cast<Eigen::Index>(keep[c]));
    names.push_back(names_[keep[c]]);
  }
  std::vector<CovariateGroup> groups;
  for (const auto& g : groups_) {
    CovariateGroup ng{g.name, {}};
    bool touched = false;
    for (auto j : g.indices) {
      if (remap[j] < 0) touched = true;
      else ng.indices.push_back(static_cast<std::size_t>(remap[j]));
    }
    if (!touched) groups.push_back(std::move(ng));
  }
  return create(std::move(x), d_, s_, y_, std::move(names), std::move(groups), options_);
}

Dataset Dataset::with_covariate(const std::string& name, std::span<const double> column) const {
  if (column.size() != n()) throw DimensionError("appended covariate has wrong length");
  RowMatrix x(x_.rows(), x_.cols() + 1);
  x.leftCols(x_.cols()) = x_;
  for (std::size_t i = 0; i < n(); ++i) x(static_cast<Eigen::Index>(i), x_.cols()) = column[i];
  auto names = names_;
  names.push_back(name);
  return create(std::move(x), d_, s_, y_, std::move(names), groups_, options_);
}

Dataset Dataset::with_groups(std::vector<CovariateGroup> groups) const {
  return create(x_, d_, s_, y_, names_, std::move(groups), options_);
}

Dataset Dataset::subset(std::span<const std::size_t> rows, Options options) const {
  RowMatrix x(static_cast<Eigen::Index>(rows.size()), x_.cols());
  std::vector<std::uint8_t> d, s;
  std::vector<std::optional<double>> y;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto i = rows[r];
    if (i >= n()) throw DimensionError("subset row out of range");
    x.row(static_cast<Eigen::Index>(r)) = x_.row(static_cast<Eigen::Index>(i));
    d.push_back(d_[i]);
    s.push_back(s_[i]);
    y.push_back(y_[i]);
  }
  return create(std::move(x), std::move(d), std::move(s), std::move(y), names_, groups_, options);
}

Dataset load_csv(const std::string& path, const CsvSchema& schema, Dataset::Options options) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line, line_no);
      break;
    }
  }
  if (header.empty()) throw ParseError("'" + path + "' has no header row");

  std::map<std::string, std::size_t> column_of;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].empty()) throw SchemaError("empty column name at position " + std::to_string(c));
    if (!column_of.emplace(header[c], c).second) throw SchemaError("duplicate column '" + header[c] + "'");
  }

  auto role_column = [&](const std::string& name, const char* role) {
    if (name.empty()) throw SchemaError(std::string("no ") + role + " column given");
    auto it = column_of.find(name);
    if (it == column_of.end()) throw SchemaError(std::string(role) + " column '" + name + "' not in header");
    return it->second;
  };
  const std::size_t yc = role_column(schema.outcome, "outcome");
  const std::size_t dc = role_column(schema.treatment, "treatment");
  const std::size_t sc = role_column(schema.selection, "selection");
  if (yc == dc || yc == sc || dc == sc) throw SchemaError("one column assigned to several roles");

  std::set<std::size_t> excluded{yc, dc, sc};
  for (const auto& name : schema.drop) {
    auto it = column_of.find(name);
    if (it == column_of.end()) throw SchemaError("dropped column '" + name + "' not in header");
    if (it->second == yc || it->second == dc || it->second == sc) {
      throw SchemaError("column '" + name + "' is both a role and dropped");
    }
    excluded.insert(it->second);
  }
  std::vector<std::size_t> cov_cols;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!excluded.count(c)) {
      cov_cols.push_back(c);
      names.push_back(header[c]);
    }
  }

  std::vector<double> xs;
  std::vector<std::uint8_t> d, s;
  std::vector<std::optional<double>> y;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line, line_no);
    if (fields.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    d.push_back(parse_binary(fields[dc], line_no, header[dc]));
    s.push_back(parse_binary(fields[sc], line_no, header[sc]));
    if (is_missing_token(fields[yc])) {
      y.emplace_back(std::nullopt);
    } else {
      y.emplace_back(parse_real(fields[yc], line_no, header[yc]));
    }
    for (auto c : cov_cols) xs.push_back(parse_real(fields[c], line_no, header[c]));
  }

  RowMatrix x(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(cov_cols.size()));
  if (!xs.empty()) x = Eigen::Map<RowMatrix>(xs.data(), x.rows(), x.cols());
  return Dataset::create(std::move(x), std::move(d), std::move(s), std::move(y), std::move(names), {}, options);
}

void write_csv(const Dataset& data, const std::string& path, const std::string& outcome,
               const std::string& treatment, const std::string& selection) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << outcome << ',' << treatment << ',' << selection;
  for (const auto& name : data.covariate_names()) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < data.n(); ++i) {
    out << (data.y(i) ? format_real(*data.y(i)) : std::string("NA")) << ',' << data.d(i) << ',' << data.s(i);
    for (std::size_t j = 0; j < data.p(); ++j) out << ',' << format_real(data.x(i, j));
    out << '\n';
  }
  if (!out) throw ParseError("write to '" + path + "' failed");
}

std::vector<CovariateGroup> load_groups_json(const std::string& path, const Dataset& data) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("groups file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw ParseError("groups file must map group name to a list of column names");
  std::vector<CovariateGroup> groups;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array() || it.value().empty()) {
      throw GroupError("group '" + it.key() + "' must be a non-empty list of column names");
    }
    CovariateGroup g{it.key(), {}};
    for (const auto& col : it.value()) {
      if (!col.is_string()) throw GroupError("group '" + it.key() + "' has a non-string entry");
      g.indices.push_back(data.covariate_index(col.get<std::string>()));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<std::size_t> FoldPlan::rows_in(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    if (assignment_[i] == fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::rows_not_in(std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    if (assignment_[i] != fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(k_, 0);
  for (auto f : assignment_) ++sizes[f];
  return sizes;
}

void FoldPlan::validate(const Dataset& data) const {
  if (assignment_.size() != data.n()) throw StratificationError("fold plan length does not match dataset");
  // Per fold: count of (d, s) cells.
  std::vector<std::array<std::size_t, 4>> cells(k_, std::array<std::size_t, 4>{});
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (assignment_[i] >= k_) throw StratificationError("fold id out of range");
    ++cells[assignment_[i]][static_cast<std::size_t>(2 * data.d(i) + data.s(i))];
  }
  for (std::size_t f = 0; f < k_; ++f) {
    if (cells[f][1] == 0 || cells[f][3] == 0) {
      throw StratificationError("fold " + std::to_string(f) + " lacks a selected row in some treatment arm");
    }
  }
}

FoldPlan FoldPlan::from_assignment(std::vector<std::size_t> assignment, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  FoldPlan plan;
  plan.k_ = k;
  plan.seed_ = seed;
  plan.assignment_ = std::move(assignment);
  auto sizes = plan.fold_sizes();
  if (std::find(sizes.begin(), sizes.end(), std::size_t{0}) != sizes.end()) {
    throw StratificationError("empty fold");
  }
  return plan;
}

FoldPlan make_folds(const Dataset& data, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  if (k > data.n() / 4) throw ConfigError("fold count must not exceed n/4");

  std::array<std::vector<std::size_t>, 4> cells;
  for (std::size_t i = 0; i < data.n(); ++i) cells[static_cast<std::size_t>(2 * data.d(i) + data.s(i))].push_back(i);
  // Selected cells (d, s=1) must reach every fold; unselected cells may be empty.
  for (std::size_t c : {std::size_t{1}, std::size_t{3}}) {
    if (cells[c].size() < k) {
      throw StratificationError("cell (d=" + std::to_string(c / 2) + ", s=1) has " + std::to_string(cells[c].size()) +
                                " rows, fewer than k=" + std::to_string(k));
    }
  }

  FoldPlan plan;
  plan.k_ = k;
  plan.seed_ = seed;
  plan.assignment_.assign(data.n(), 0);
  // Round-robin within each shuffled cell; the running offset balances totals.
  std::size_t offset = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    auto rows = cells[c];
    Rng rng = make_rng(seed, {0xF01D, c});
    for (std::size_t i = rows.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(rows[i - 1], rows[pick(rng)]);
    }
    for (std::size_t r = 0; r < rows.size(); ++r) plan.assignment_[rows[r]] = (offset + r) % k;
    offset = (offset + rows.size()) % k;
  }
  plan.validate(data);
  return plan;
}

}  // namespace selriesz
