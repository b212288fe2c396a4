#include "selriesz/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "selriesz/errors.hpp"
#include "selriesz/parallel.hpp"
#include "selriesz/rng.hpp"

namespace selriesz {

void ForestConfig::validate() const {
  if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
  if (min_leaf < 1) throw ConfigError("min_leaf must be >= 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw ConfigError("subsample_fraction must lie in (0, 1]");
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ConfigError("ridge must be finite and >= 0");
  if (!(multitask_weight >= 0.0 && multitask_weight <= 1.0))
    throw ConfigError("multitask_weight must lie in [0, 1]");
  if (max_bins < 2) throw ConfigError("max_bins must be >= 2");
}

NodeSolution solve_moment_system(Eigen::MatrixXd j, Eigen::VectorXd m, double count, double ridge) {
  const Eigen::Index dim = m.size();
  double base = ridge;
  if (!(base > 0.0)) base = 1e-6 * j.trace() / static_cast<double>(dim);
  if (!(base > 0.0) || !std::isfinite(base)) base = 1e-6;
  const double m_norm = m.norm();
  double rho = base;
  for (int attempt = 0; attempt <= 6; ++attempt, rho *= 10.0) {
    Eigen::MatrixXd a = j;
    a.diagonal().array() += rho;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-12)) continue;
    Eigen::VectorXd beta = llt.solve(m);
    const double resid = (a * beta - m).norm();
    if (!(resid <= 1e-10 * std::max(m_norm, 1e-300)) && resid != 0.0) continue;
    NodeSolution out;
    out.j = std::move(j);
    out.m = std::move(m);
    out.beta = std::move(beta);
    out.count = count;
    out.ridge_used = rho;
    return out;
  }
  throw SingularNodeError("node system stays singular at the maximum ridge");
}

NodeSolution solve_node(std::span<const std::size_t> rows, std::span<const double> weights, const Dataset& data,
                        const FeatureMap& fmap, double ridge) {
  if (rows.empty()) throw ConfigError("solve_node needs at least one row");
  if (!weights.empty() && weights.size() != rows.size()) throw DimensionError("weights and rows differ in length");
  const std::size_t dim = fmap.dim();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd r(dim), mv(dim);
  double total = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    const double w = weights.empty() ? 1.0 : weights[k];
    if (!(w > 0.0)) throw ConfigError("solve_node weights must be positive");
    fmap.eval(data.d(i), data.row(i), data.s(i), {r.data(), dim});
    fmap.moment_eval(data.row(i), {mv.data(), dim});
    j.noalias() += w * r * r.transpose();
    m += w * mv;
    total += w;
  }
  j /= total;
  m /= total;
  return solve_moment_system(std::move(j), std::move(m), total, ridge);
}

NodeSolution solve_node(std::span<const std::size_t> rows, const Dataset& data, const FeatureMap& fmap,
                        double ridge) {
  return solve_node(rows, {}, data, fmap, ridge);
}

RegressionTarget RegressionTarget::outcome(const Dataset& data) {
  RegressionTarget t;
  t.name = "outcome";
  t.n_groups = 2;
  t.value.resize(data.n());
  t.include.resize(data.n());
  t.group.resize(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    t.value[i] = data.y_or_zero(i);
    t.include[i] = static_cast<std::uint8_t>(data.s(i));
    t.group[i] = static_cast<std::uint8_t>(data.d(i));
  }
  return t;
}

RegressionTarget RegressionTarget::selection(const Dataset& data) {
  RegressionTarget t;
  t.name = "selection";
  t.n_groups = 2;
  t.value.resize(data.n());
  t.include.assign(data.n(), 1);
  t.group.resize(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    t.value[i] = data.s(i);
    t.group[i] = static_cast<std::uint8_t>(data.d(i));
  }
  return t;
}

RegressionTarget RegressionTarget::treatment(const Dataset& data) {
  RegressionTarget t;
  t.name = "treatment";
  t.n_groups = 1;
  t.value.resize(data.n());
  t.include.assign(data.n(), 1);
  t.group.assign(data.n(), 0);
  for (std::size_t i = 0; i < data.n(); ++i) t.value[i] = data.d(i);
  return t;
}

namespace {

// Per-row quantities precomputed once per training call.
struct Prepared {
  const Dataset* data = nullptr;
  const RegressionTarget* target = nullptr;
  std::size_t dim = 0;
  std::vector<double> r;    // n x dim
  std::vector<double> mom;  // n x dim
  std::vector<std::uint32_t> nz_begin;
  std::vector<std::uint16_t> nz;
  std::vector<std::int8_t> cell;  // arm of a selected row, -1 otherwise
  std::vector<std::vector<std::size_t>> blocks;

  Prepared(const Dataset& d, const FeatureMap* fmap, const RegressionTarget* t) : data(&d), target(t) {
    const std::size_t n = d.n();
    if (fmap) {
      dim = fmap->dim();
      blocks = fmap->blocks();
      r.assign(n * dim, 0.0);
      mom.assign(n * dim, 0.0);
      nz_begin.assign(n + 1, 0);
      for (std::size_t i = 0; i < n; ++i) {
        fmap->eval(d.d(i), d.row(i), d.s(i), {r.data() + i * dim, dim});
        fmap->moment_eval(d.row(i), {mom.data() + i * dim, dim});
        for (std::size_t a = 0; a < dim; ++a)
          if (r[i * dim + a] != 0.0) nz.push_back(static_cast<std::uint16_t>(a));
        nz_begin[i + 1] = static_cast<std::uint32_t>(nz.size());
      }
    }
    cell.resize(n);
    for (std::size_t i = 0; i < n; ++i) cell[i] = d.s(i) == 1 ? static_cast<std::int8_t>(d.d(i)) : -1;
  }

  bool riesz() const { return dim > 0; }
  std::size_t groups() const { return target ? target->n_groups : 0; }
};

struct Stats {
  Eigen::MatrixXd j;
  Eigen::VectorXd m;
  double count = 0.0;
  std::array<std::size_t, 2> cells{0, 0};
  std::vector<double> gn, gsum, gsq;

  Stats() = default;
  explicit Stats(const Prepared& p) { reset(p); }

  void reset(const Prepared& p) {
    if (p.riesz()) {
      j.setZero(p.dim, p.dim);
      m.setZero(p.dim);
    }
    count = 0.0;
    cells = {0, 0};
    gn.assign(p.groups(), 0.0);
    gsum.assign(p.groups(), 0.0);
    gsq.assign(p.groups(), 0.0);
  }

  void add(const Prepared& p, std::size_t i) {
    count += 1.0;
    if (p.cell[i] >= 0) ++cells[static_cast<std::size_t>(p.cell[i])];
    if (p.riesz()) {
      const double* ri = p.r.data() + i * p.dim;
      const double* mi = p.mom.data() + i * p.dim;
      double* mp = m.data();
      for (std::size_t a = 0; a < p.dim; ++a) mp[a] += mi[a];
      double* jp = j.data();
      const std::uint32_t lo = p.nz_begin[i], hi = p.nz_begin[i + 1];
      for (std::uint32_t u = lo; u < hi; ++u) {
        const std::size_t a = p.nz[u];
        const double ra = ri[a];
        for (std::uint32_t v = lo; v < hi; ++v) jp[a * p.dim + p.nz[v]] += ra * ri[p.nz[v]];
      }
    }
    if (p.target && p.target->include[i]) {
      const std::size_t g = p.target->group[i];
      const double v = p.target->value[i];
      gn[g] += 1.0;
      gsum[g] += v;
      gsq[g] += v * v;
    }
  }

  // this = parent - left, reusing storage.
  void assign_difference(const Stats& parent, const Stats& left) {
    if (parent.j.size() > 0) {
      j = parent.j - left.j;
      m = parent.m - left.m;
    }
    count = parent.count - left.count;
    cells = {parent.cells[0] - left.cells[0], parent.cells[1] - left.cells[1]};
    for (std::size_t g = 0; g < gn.size(); ++g) {
      gn[g] = parent.gn[g] - left.gn[g];
      gsum[g] = parent.gsum[g] - left.gsum[g];
      gsq[g] = parent.gsq[g] - left.gsq[g];
    }
  }

  NodeSolution solve(double ridge) const { return solve_moment_system(j / count, m / count, count, ridge); }

  // Sum over groups of sum^2 / n; differences give the SSE reduction.
  double between() const {
    double v = 0.0;
    for (std::size_t g = 0; g < gn.size(); ++g)
      if (gn[g] > 0) v += gsum[g] * gsum[g] / gn[g];
    return v;
  }

  double sse() const {
    double v = 0.0;
    for (std::size_t g = 0; g < gn.size(); ++g)
      if (gn[g] > 0) v += gsq[g] - gsum[g] * gsum[g] / gn[g];
    return std::max(v, 0.0);
  }
};

// Dense Cholesky solve of (a + rho I) x = b for small blocks; a is k x k
// row-major. Returns false when a pivot fails or the factor's diagonal
// spread signals a condition number beyond 1e12.
bool cholesky_solve(const double* a, std::size_t k, double rho, const double* b, double* l, double* x) {
  double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double v = a[i * k + j] + (i == j ? rho : 0.0);
      for (std::size_t t = 0; t < j; ++t) v -= l[i * k + t] * l[j * k + t];
      if (i == j) {
        if (!(v > 0.0)) return false;
        l[i * k + i] = std::sqrt(v);
        dmin = std::min(dmin, v);
        dmax = std::max(dmax, v);
      } else {
        l[i * k + j] = v / l[j * k + j];
      }
    }
  }
  if (!(dmin > 1e-12 * dmax)) return false;
  for (std::size_t i = 0; i < k; ++i) {
    double v = b[i];
    for (std::size_t t = 0; t < i; ++t) v -= l[i * k + t] * x[t];
    x[i] = v / l[i * k + i];
  }
  for (std::size_t i = k; i-- > 0;) {
    double v = x[i];
    for (std::size_t t = i + 1; t < k; ++t) v -= l[t * k + i] * x[t];
    x[i] = v / l[i * k + i];
  }
  return true;
}

// Per-block buffers for split scoring. J is block diagonal across treatment
// arms, so each block is solved on its own with the same ridge schedule as
// solve_moment_system.
struct Workspace {
  std::vector<double> a, l, m, beta;

  explicit Workspace(const Prepared& p) {
    std::size_t kmax = 0;
    for (const auto& b : p.blocks) kmax = std::max(kmax, b.size());
    a.resize(kmax * kmax);
    l.resize(kmax * kmax);
    m.resize(kmax);
    beta.resize(kmax);
  }
};

// count * beta' J beta, or NaN when a block stays singular.
double riesz_value(const Prepared& p, const Stats& s, double ridge, Workspace& ws) {
  const double inv = 1.0 / s.count;
  double base = ridge;
  if (!(base > 0.0)) base = 1e-6 * s.j.trace() * inv / static_cast<double>(p.dim);
  if (!(base > 0.0) || !std::isfinite(base)) base = 1e-6;
  double total = 0.0;
  for (const auto& idx : p.blocks) {
    const std::size_t k = idx.size();
    for (std::size_t u = 0; u < k; ++u) {
      ws.m[u] = s.m[static_cast<Eigen::Index>(idx[u])] * inv;
      for (std::size_t v = 0; v < k; ++v)
        ws.a[u * k + v] = s.j(static_cast<Eigen::Index>(idx[u]), static_cast<Eigen::Index>(idx[v])) * inv;
    }
    bool solved = false;
    double rho = base;
    for (int attempt = 0; attempt <= 6 && !solved; ++attempt, rho *= 10.0)
      solved = cholesky_solve(ws.a.data(), k, rho, ws.m.data(), ws.l.data(), ws.beta.data());
    if (!solved) return std::numeric_limits<double>::quiet_NaN();
    double q = 0.0;
    for (std::size_t u = 0; u < k; ++u) {
      double row = 0.0;
      for (std::size_t v = 0; v < k; ++v) row += ws.a[u * k + v] * ws.beta[v];
      q += ws.beta[u] * row;
    }
    total += s.count * q;
  }
  return total;
}

struct ScoreContext {
  const Prepared* prep;
  double ridge;
  std::size_t min_leaf;
  double weight;
  // Parent-level quantities for the multitask rescaling.
  double parent_between = 0.0;
  double parent_scale = 0.0;
};

bool feasible(const Prepared& p, const Stats& s, std::size_t min_leaf) {
  if (s.count < static_cast<double>(min_leaf)) return false;
  if (p.riesz() && (s.cells[0] < min_leaf || s.cells[1] < min_leaf)) return false;
  for (double n : s.gn)
    if (n < static_cast<double>(min_leaf)) return false;
  return true;
}

ScoreContext make_context(const Prepared& p, const Stats& parent, double ridge, std::size_t min_leaf, double w,
                          Workspace& ws) {
  ScoreContext c{&p, ridge, min_leaf, w};
  if (p.target) {
    c.parent_between = parent.between();
    if (p.riesz() && w > 0.0 && w < 1.0) {
      const double sse = parent.sse();
      const double rp = riesz_value(p, parent, ridge, ws);
      c.parent_scale = sse > 0.0 && std::isfinite(rp) ? rp / sse : 0.0;
    } else {
      c.parent_scale = 1.0;
    }
  }
  return c;
}

double score_children(const ScoreContext& c, const Stats& left, const Stats& right, Workspace& ws) {
  const Prepared& p = *c.prep;
  if (!feasible(p, left, c.min_leaf) || !feasible(p, right, c.min_leaf)) return kInfeasibleSplit;
  double riesz = 0.0;
  const bool use_riesz = p.riesz() && !(p.target && c.weight >= 1.0);
  if (use_riesz) {
    riesz = riesz_value(p, left, c.ridge, ws) + riesz_value(p, right, c.ridge, ws);
    if (!std::isfinite(riesz)) return kInfeasibleSplit;
  }
  double out = riesz;
  if (p.target) {
    const double gain = left.between() + right.between() - c.parent_between;
    if (!p.riesz()) {
      out = gain;
    } else {
      out = (1.0 - c.weight) * riesz + c.weight * c.parent_scale * gain;
    }
  }
  return std::isfinite(out) ? out : kInfeasibleSplit;
}

struct BestSplit {
  int feature = -1;
  double threshold = 0.0;
  double score = kInfeasibleSplit;
  std::size_t left_count = 0;
};

// Candidate boundaries: positions q (left = first q rows) at roughly
// evenly spaced quantiles, moved forward to the next change in value.
std::vector<std::size_t> candidate_positions(const std::vector<double>& v, std::size_t max_bins) {
  const std::size_t m = v.size();
  std::vector<std::size_t> out;
  if (m < 2) return out;
  const std::size_t bins = std::min(max_bins, m);
  std::size_t q = 1;
  for (std::size_t k = 1; k < bins; ++k) {
    std::size_t pos = std::max<std::size_t>(1, k * m / bins);
    if (pos < q) pos = q;
    while (pos < m && !(v[pos - 1] < v[pos])) ++pos;
    if (pos >= m) break;
    if (out.empty() || out.back() != pos) out.push_back(pos);
    q = pos + 1;
  }
  return out;
}

double midpoint(double lo, double hi) {
  const double mid = lo + 0.5 * (hi - lo);
  return mid < hi ? mid : lo;
}

// Row and cell counts of the estimation half, so honest splits can keep
// both children usable for leaf estimates.
struct Counts {
  double count = 0.0;
  std::array<std::size_t, 2> cells{0, 0};
  std::vector<double> gn;

  explicit Counts(const Prepared& p) : gn(p.groups(), 0.0) {}

  void add(const Prepared& p, std::size_t i) {
    count += 1.0;
    if (p.cell[i] >= 0) ++cells[static_cast<std::size_t>(p.cell[i])];
    if (p.target && p.target->include[i]) gn[p.target->group[i]] += 1.0;
  }

  bool feasible(const Prepared& p, std::size_t min_leaf) const {
    if (count < static_cast<double>(min_leaf)) return false;
    if (p.riesz() && (cells[0] < min_leaf || cells[1] < min_leaf)) return false;
    for (double n : gn)
      if (n < static_cast<double>(min_leaf)) return false;
    return true;
  }

  // this = parent - left
  void assign_difference(const Counts& parent, const Counts& left) {
    count = parent.count - left.count;
    cells = {parent.cells[0] - left.cells[0], parent.cells[1] - left.cells[1]};
    for (std::size_t g = 0; g < gn.size(); ++g) gn[g] = parent.gn[g] - left.gn[g];
  }
};

BestSplit find_split(const ScoreContext& ctx, const Stats& parent, const std::vector<std::size_t>& rows,
                     const std::vector<std::size_t>& est, bool honest, const std::vector<std::size_t>& features,
                     std::size_t max_bins, Workspace& ws) {
  const Prepared& p = *ctx.prep;
  const Dataset& data = *p.data;
  BestSplit best;
  std::vector<std::size_t> order(rows), est_order(est);
  std::vector<double> v(rows.size());
  Stats left(p), right(p);
  Counts est_parent(p), est_left(p), est_right(p);
  if (honest) {
    for (std::size_t i : est) est_parent.add(p, i);
    if (!est_parent.feasible(p, 2 * ctx.min_leaf)) return best;
  }
  for (std::size_t f : features) {
    auto by_x = [&](std::size_t a, std::size_t b) {
      const double xa = data.x(a, f), xb = data.x(b, f);
      return xa < xb || (xa == xb && a < b);
    };
    std::sort(order.begin(), order.end(), by_x);
    if (honest) std::sort(est_order.begin(), est_order.end(), by_x);
    for (std::size_t k = 0; k < order.size(); ++k) v[k] = data.x(order[k], f);
    const auto cands = candidate_positions(v, max_bins);
    if (cands.empty()) continue;
    left.reset(p);
    est_left = Counts(p);
    std::size_t added = 0, est_added = 0;
    for (std::size_t q : cands) {
      while (added < q) left.add(p, order[added++]);
      if (!feasible(p, left, ctx.min_leaf)) continue;
      right.assign_difference(parent, left);
      if (!feasible(p, right, ctx.min_leaf)) break;
      const double threshold = midpoint(v[q - 1], v[q]);
      if (honest) {
        while (est_added < est_order.size() && data.x(est_order[est_added], f) <= threshold)
          est_left.add(p, est_order[est_added++]);
        if (!est_left.feasible(p, ctx.min_leaf)) continue;
        est_right.assign_difference(est_parent, est_left);
        if (!est_right.feasible(p, ctx.min_leaf)) break;
      }
      const double sc = score_children(ctx, left, right, ws);
      if (sc > best.score) {
        best.score = sc;
        best.feature = static_cast<int>(f);
        best.threshold = threshold;
        best.left_count = q;
      }
    }
  }
  return best;
}

Stats stats_of(const Prepared& p, const std::vector<std::size_t>& rows) {
  Stats s(p);
  for (std::size_t i : rows) s.add(p, i);
  return s;
}

TreeLeaf make_leaf(const Prepared& p, const Stats& structure, const Stats* estimate, double ridge) {
  TreeLeaf leaf;
  if (p.riesz()) {
    const bool use_est = estimate && estimate->cells[0] > 0 && estimate->cells[1] > 0;
    const Stats& s = use_est ? *estimate : structure;
    const NodeSolution sol = s.solve(ridge);
    leaf.beta = sol.beta;
    leaf.ridge_used = sol.ridge_used;
  }
  leaf.count = static_cast<std::size_t>((estimate ? estimate->count : structure.count));
  const std::size_t groups = p.groups();
  leaf.value.assign(groups, 0.0);
  leaf.value_count.assign(groups, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    const bool use_est = estimate && estimate->gn[g] > 0;
    const Stats& s = use_est ? *estimate : structure;
    leaf.value[g] = s.gn[g] > 0 ? s.gsum[g] / s.gn[g] : 0.0;
    leaf.value_count[g] = static_cast<std::size_t>(s.gn[g]);
  }
  return leaf;
}

std::vector<std::size_t> split_rows(const Dataset& data, const std::vector<std::size_t>& rows, int feature,
                                    double threshold, std::vector<std::size_t>& right) {
  std::vector<std::size_t> left;
  right.clear();
  for (std::size_t i : rows) {
    if (data.x(i, static_cast<std::size_t>(feature)) <= threshold)
      left.push_back(i);
    else
      right.push_back(i);
  }
  return left;
}

Tree grow_tree(const Prepared& p, std::vector<std::size_t> structure, std::vector<std::size_t> estimate,
               bool honest, const ForestConfig& cfg, Rng& rng) {
  const Dataset& data = *p.data;
  const std::size_t n_features = data.p();
  const std::size_t mtry = cfg.mtry == 0 ? n_features : std::min(cfg.mtry, n_features);
  std::vector<std::size_t> all_features(n_features);
  std::iota(all_features.begin(), all_features.end(), 0);

  struct Work {
    int node;
    std::vector<std::size_t> rows;
    std::vector<std::size_t> est;
    std::size_t depth;
  };
  Workspace ws(p);
  Tree tree;
  tree.nodes.emplace_back();
  std::vector<Work> stack;
  stack.push_back({0, std::move(structure), std::move(estimate), 0});
  while (!stack.empty()) {
    Work w = std::move(stack.back());
    stack.pop_back();
    const Stats parent = stats_of(p, w.rows);
    BestSplit best;
    if (w.depth < cfg.max_depth) {
      std::vector<std::size_t> features = all_features;
      if (mtry < n_features) {
        for (std::size_t k = 0; k < mtry; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, n_features - 1);
          std::swap(features[k], features[pick(rng)]);
        }
        features.resize(mtry);
        std::sort(features.begin(), features.end());
      }
      const ScoreContext ctx = make_context(p, parent, cfg.ridge, cfg.min_leaf, cfg.multitask_weight, ws);
      best = find_split(ctx, parent, w.rows, w.est, honest, features, cfg.max_bins, ws);
    }
    if (best.feature < 0) {
      const Stats est = honest ? stats_of(p, w.est) : Stats{};
      TreeNode& node = tree.nodes[static_cast<std::size_t>(w.node)];
      node.leaf = static_cast<int>(tree.leaves.size());
      tree.leaves.push_back(make_leaf(p, parent, honest ? &est : nullptr, cfg.ridge));
      continue;
    }
    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    TreeNode& node = tree.nodes[static_cast<std::size_t>(w.node)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left_id;
    node.right = left_id + 1;
    std::vector<std::size_t> right_rows, right_est;
    auto left_rows = split_rows(data, w.rows, best.feature, best.threshold, right_rows);
    auto left_est = split_rows(data, w.est, best.feature, best.threshold, right_est);
    stack.push_back({left_id + 1, std::move(right_rows), std::move(right_est), w.depth + 1});
    stack.push_back({left_id, std::move(left_rows), std::move(left_est), w.depth + 1});
  }
  return tree;
}

void check_cells(const Prepared& p, const Stats& s, std::size_t min_leaf) {
  if (p.riesz() && (s.cells[0] < min_leaf || s.cells[1] < min_leaf))
    throw TrainError("training rows hold fewer than min_leaf selected observations in a treatment arm");
  for (std::size_t g = 0; g < s.gn.size(); ++g)
    if (s.gn[g] < static_cast<double>(min_leaf))
      throw TrainError("training rows hold fewer than min_leaf observations for the " + p.target->name +
                       " head in group " + std::to_string(g));
}

}  // namespace

double split_score(std::span<const std::size_t> parent_rows, const SplitCandidate& split, const Dataset& data,
                   const FeatureMap& fmap, double ridge, const SplitScoreOptions& options) {
  if (split.feature >= data.p()) throw DimensionError("split feature out of range");
  RegressionTarget target;
  if (options.multitask_weight > 0.0) target = RegressionTarget::outcome(data);
  const Prepared p(data, &fmap, options.multitask_weight > 0.0 ? &target : nullptr);
  std::vector<std::size_t> rows(parent_rows.begin(), parent_rows.end());
  std::vector<std::size_t> right;
  const auto left = split_rows(data, rows, static_cast<int>(split.feature), split.threshold, right);
  const Stats parent = stats_of(p, rows);
  Workspace ws(p);
  const ScoreContext ctx = make_context(p, parent, ridge, options.min_leaf, options.multitask_weight, ws);
  return score_children(ctx, stats_of(p, left), stats_of(p, right), ws);
}

const TreeLeaf& Tree::leaf_for(std::span<const double> x) const {
  std::size_t k = 0;
  while (nodes[k].feature >= 0) {
    const TreeNode& node = nodes[k];
    k = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                                            : node.right);
  }
  return leaves[static_cast<std::size_t>(nodes[k].leaf)];
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> depth(nodes.size(), 0);
  std::size_t out = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    out = std::max(out, depth[k]);
    if (nodes[k].feature >= 0) {
      depth[static_cast<std::size_t>(nodes[k].left)] = depth[k] + 1;
      depth[static_cast<std::size_t>(nodes[k].right)] = depth[k] + 1;
    }
  }
  return out;
}

double MomentForest::predict_alpha(int d, std::span<const double> x, int s) const {
  if (!fmap_) throw ConfigError("forest has no representer head");
  if (x.size() != p_) throw DimensionError("predict_alpha: covariate dimension mismatch");
  if (s == 0) return 0.0;
  const std::size_t dim = fmap_->dim();
  Eigen::VectorXd r(dim);
  fmap_->eval(d, x, s, {r.data(), dim});
  double sum = 0.0;
  for (const Tree& t : trees_) sum += r.dot(t.leaf_for(x).beta);
  return sum / static_cast<double>(trees_.size());
}

double MomentForest::predict_g(int d, std::span<const double> x) const {
  if (n_groups_ == 0) throw ConfigError("forest has no regression head");
  if (x.size() != p_) throw DimensionError("predict_g: covariate dimension mismatch");
  const std::size_t g = n_groups_ == 1 ? 0 : static_cast<std::size_t>(d);
  double sum = 0.0;
  for (const Tree& t : trees_) sum += t.leaf_for(x).value[g];
  return sum / static_cast<double>(trees_.size());
}

namespace {

template <typename F>
std::vector<double> predict_rows(std::span<const std::size_t> rows, F&& one) {
  std::vector<double> out(rows.size());
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (rows.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(rows.size(), (c + 1) * kChunk);
    for (std::size_t k = c * kChunk; k < end; ++k) out[k] = one(rows[k]);
  });
  return out;
}

}  // namespace

std::vector<double> MomentForest::predict_alpha(const Dataset& data, std::span<const std::size_t> rows) const {
  return predict_rows(rows, [&](std::size_t i) { return predict_alpha(data.d(i), data.row(i), data.s(i)); });
}

std::vector<double> MomentForest::predict_g(int d, const Dataset& data, std::span<const std::size_t> rows) const {
  return predict_rows(rows, [&](std::size_t i) { return predict_g(d, data.row(i)); });
}

std::size_t effective_min_leaf(const ForestConfig& cfg, const FeatureMap* fmap) {
  if (!fmap) return cfg.min_leaf;
  return std::max(cfg.min_leaf, 3 * (fmap->dim() / 2));
}

MomentForest train_forest(const Dataset& data, std::span<const std::size_t> rows, const FeatureMap* fmap,
                          const RegressionTarget* target, const ForestConfig& cfg) {
  cfg.validate();
  if (!fmap && !target) throw ConfigError("train_forest needs at least one head");
  if (fmap && fmap->p() != data.p()) throw DimensionError("feature map covariate dimension mismatch");
  if (target && target->value.size() != data.n()) throw DimensionError("regression target length mismatch");
  if (rows.empty()) throw TrainError("no training rows");

  const Prepared prep(data, fmap, target);
  std::vector<std::size_t> train(rows.begin(), rows.end());
  std::sort(train.begin(), train.end());
  ForestConfig run = cfg;
  run.min_leaf = effective_min_leaf(cfg, fmap);
  check_cells(prep, stats_of(prep, train), run.min_leaf);

  const std::size_t n_train = train.size();
  const std::size_t m = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.subsample_fraction * static_cast<double>(n_train))), 1, n_train);

  MomentForest forest;
  forest.config_ = cfg;
  if (fmap) forest.fmap_ = *fmap;
  if (target) {
    forest.n_groups_ = target->n_groups;
    forest.target_name_ = target->name;
  }
  forest.p_ = data.p();
  forest.trees_.resize(cfg.n_trees);
  parallel_for(cfg.n_trees, [&](std::size_t t) {
    Rng rng = make_rng(cfg.seed, {t});
    std::vector<std::size_t> sample = train;
    if (m < n_train || cfg.honest) {
      for (std::size_t k = 0; k < m; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n_train - 1);
        std::swap(sample[k], sample[pick(rng)]);
      }
      sample.resize(m);
    }
    std::vector<std::size_t> est;
    if (cfg.honest) {
      const std::size_t half = (m + 1) / 2;
      est.assign(sample.begin() + static_cast<std::ptrdiff_t>(half), sample.end());
      sample.resize(half);
      std::sort(est.begin(), est.end());
    }
    std::sort(sample.begin(), sample.end());
    forest.trees_[t] = grow_tree(prep, std::move(sample), std::move(est), cfg.honest, run, rng);
  });
  return forest;
}

std::vector<ForestPair> fit(const Dataset& data, const FoldPlan& folds, const FeatureMap& fmap,
                            const ForestConfig& cfg) {
  cfg.validate();
  folds.validate(data);
  const RegressionTarget outcome = RegressionTarget::outcome(data);
  std::vector<ForestPair> out;
  out.reserve(folds.k());
  for (std::size_t f = 0; f < folds.k(); ++f) {
    const auto rows = folds.rows_not_in(f);
    ForestConfig fc = cfg;
    fc.seed = derive_seed(cfg.seed, {f});
    ForestPair pair;
    if (cfg.multitask_weight > 0.0) {
      auto shared = std::make_shared<const MomentForest>(train_forest(data, rows, &fmap, &outcome, fc));
      pair.alpha = shared;
      pair.g = shared;
    } else {
      pair.alpha = std::make_shared<const MomentForest>(train_forest(data, rows, &fmap, nullptr, fc));
      ForestConfig gc = fc;
      gc.seed = derive_seed(cfg.seed, {f, 1});
      pair.g = std::make_shared<const MomentForest>(train_forest(data, rows, nullptr, &outcome, gc));
    }
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace selriesz
