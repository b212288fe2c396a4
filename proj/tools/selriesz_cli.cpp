// Command-line front end: simulate, estimate, sensitivity, benchmark and
// simulate-study. Reports are JSON without timestamps or thread counts so
// reruns with the same flags compare byte for byte.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "selriesz/benchmark.hpp"
#include "selriesz/data.hpp"
#include "selriesz/dgp.hpp"
#include "selriesz/errors.hpp"
#include "selriesz/estimators.hpp"
#include "selriesz/mc.hpp"
#include "selriesz/parallel.hpp"
#include "selriesz/sensitivity.hpp"

using namespace selriesz;
using nlohmann::json;

namespace {

struct DataFlags {
  std::string path;
  std::string y = "y", d = "d", s = "s";
  std::vector<std::string> drop;

  void add(CLI::App* app) {
    app->add_option("--data", path, "input CSV")->required()->check(CLI::ExistingFile);
    app->add_option("--y", y, "outcome column");
    app->add_option("--d", d, "treatment column");
    app->add_option("--s", s, "selection column");
    app->add_option("--drop", drop, "columns to ignore");
  }

  Dataset load() const { return load_csv(path, CsvSchema{y, d, s, drop}); }
};

struct LearnerFlags {
  Learners l;
  std::string propensity = "logistic", outcome = "forest", fmap = "intercepts", irm_sample = "zero-filled";
  bool no_normalize = false;

  void add(CLI::App* app) {
    ForestConfig& f = l.forest;
    app->add_option("--trees", f.n_trees, "trees per forest");
    app->add_option("--min-leaf", f.min_leaf, "minimum rows per leaf cell");
    app->add_option("--max-depth", f.max_depth, "maximum tree depth");
    app->add_option("--subsample", f.subsample_fraction, "subsample fraction per tree");
    app->add_option("--mtry", f.mtry, "covariates tried per split (0 = all)");
    app->add_option("--ridge", f.ridge, "starting Jacobian ridge (0 = trace-scaled)");
    app->add_flag("--honest", f.honest, "estimate leaves on a held-out half");
    app->add_option("--multitask-weight", f.multitask_weight, "regression weight in the shared split score");
    app->add_option("--max-bins", f.max_bins, "candidate thresholds per covariate and node");
    app->add_option("--feature-map", fmap, "intercepts or arm-linear");
    app->add_option("--propensity", propensity, "logistic or forest");
    app->add_option("--outcome", outcome, "forest or linear (IRM/SSM outcome model)");
    app->add_option("--irm-sample", irm_sample, "zero-filled or selected");
    app->add_option("--clip", l.clip, "probability clipping floor");
    app->add_option("--lambda", l.lambda, "logistic L2 penalty");
    app->add_option("--level", l.level, "confidence level");
    app->add_flag("--no-normalize-ipw", no_normalize, "disable Hajek weight normalization");
  }

  Learners resolve(std::uint64_t seed) {
    l.propensity = parse_propensity_kind(propensity);
    l.outcome = parse_outcome_kind(outcome);
    l.feature_map = parse_feature_map_kind(fmap);
    l.irm_sample = parse_irm_sample(irm_sample);
    l.normalize_ipw = !no_normalize;
    l.forest.seed = seed;
    l.validate();
    return l;
  }
};

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

json dataset_summary(const Dataset& data) {
  return {{"n", data.n()}, {"p", data.p()}, {"selected", data.selected_count()},
          {"covariates", data.covariate_names()}};
}

std::string fmt(double v) { return std::isnan(v) ? "NA" : format_real(v); }

void write_nuisance_csv(const std::string& path, const Dataset& data, const EstimateResult& r) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  const NuisanceFit& nf = r.nuisances;
  out << "row,fold,d,s,y,p1,pi1,pi0,g1,g0,alpha,alpha_plugin,alpha_moment,score\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    out << i << ',' << nf.fold[i] << ',' << data.d(i) << ',' << data.s(i) << ','
        << (data.y(i) ? format_real(*data.y(i)) : std::string("NA")) << ',' << fmt(nf.p1[i]) << ','
        << fmt(nf.pi1[i]) << ',' << fmt(nf.pi0[i]) << ',' << fmt(nf.g1[i]) << ',' << fmt(nf.g0[i]) << ','
        << fmt(nf.alpha[i]) << ',' << fmt(nf.alpha_plugin[i]) << ',' << fmt(nf.alpha_moment[i]) << ','
        << fmt(r.estimate.scores[i]) << '\n';
  }
}

// Nuisance CSV written by `estimate`, read back for `sensitivity`.
struct NuisanceTable {
  std::vector<int> d, s;
  std::vector<double> y, p1, pi1, pi0, g1, g0, alpha_plugin;
};

NuisanceTable read_nuisance_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto col = [&](const std::string& name) {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    throw SchemaError(path + ": missing column " + name);
  };
  const std::size_t cd = col("d"), cs = col("s"), cy = col("y"), cp = col("p1"), c1 = col("pi1"), c0 = col("pi0"),
                    cg1 = col("g1"), cg0 = col("g0"), ca = col("alpha_plugin");
  NuisanceTable t;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw ParseError(path + ":" + std::to_string(line_no) + ": wrong field count");
    auto num = [&](std::size_t k) {
      if (cells[k] == "NA") return std::numeric_limits<double>::quiet_NaN();
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[k], &used);
        if (used != cells[k].size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + cells[k] + "'");
      }
    };
    t.d.push_back(static_cast<int>(num(cd)));
    t.s.push_back(static_cast<int>(num(cs)));
    t.y.push_back(num(cy));
    t.p1.push_back(num(cp));
    t.pi1.push_back(num(c1));
    t.pi0.push_back(num(c0));
    t.g1.push_back(num(cg1));
    t.g0.push_back(num(cg0));
    t.alpha_plugin.push_back(num(ca));
  }
  if (t.d.size() < 2) throw ParseError(path + ": fewer than two rows");
  return t;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int run_simulate(const std::string& dgp, std::size_t n, std::size_t p, double theta0, double sigma_x,
                 std::uint64_t seed, const std::string& config_path, const std::string& out,
                 const std::string& truth_path) {
  json sidecar;
  if (dgp == "mar") {
    MarDgpConfig cfg;
    cfg.n = n;
    cfg.p = p;
    cfg.theta0 = theta0;
    cfg.sigma_x = sigma_x;
    cfg.seed = seed;
    const Dataset data = gen_mar(cfg);
    write_csv(data, out);
    sidecar = {{"dgp", "mar"}, {"config", to_json(cfg)}, {"theta0", cfg.theta0}};
  } else if (dgp == "confounded") {
    ConfoundedDgpConfig cfg =
        config_path.empty() ? default_confounded_config(n, seed) : confounded_config_from_json(read_json(config_path));
    cfg.n = n;
    cfg.seed = seed;
    auto [data, tables] = gen_confounded(cfg);
    write_csv(data, out);
    sidecar = {{"dgp", "confounded"}, {"config", to_json(cfg)}, {"oracle", tables.to_json()}};
  } else {
    throw ConfigError("unknown dgp '" + dgp + "' (expected mar or confounded)");
  }
  write_json(sidecar, truth_path.empty() ? out + ".json" : truth_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment effects under sample selection: estimation, sensitivity and simulation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = all cores)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string sim_dgp = "mar", sim_config, sim_out, sim_truth;
  std::size_t sim_n = 1000, sim_p = 5;
  double sim_theta = 1.0, sim_sigma = 1.0;
  std::uint64_t sim_seed = 1;
  sim->add_option("--dgp", sim_dgp, "mar or confounded");
  sim->add_option("--n", sim_n, "sample size");
  sim->add_option("--p", sim_p, "covariates (mar)");
  sim->add_option("--theta0", sim_theta, "true ATE (mar)");
  sim->add_option("--sigma-x", sim_sigma, "covariate variance (mar)");
  sim->add_option("--seed", sim_seed, "seed");
  sim->add_option("--config", sim_config, "confounded design JSON");
  sim->add_option("--out", sim_out, "output CSV")->required();
  sim->add_option("--truth", sim_truth, "sidecar JSON (default: <out>.json)");

  // estimate
  auto* est = app.add_subcommand("estimate", "estimate the ATE");
  DataFlags est_data;
  LearnerFlags est_learn;
  std::string est_method = "fr", est_out, est_scores;
  std::size_t est_folds = 5;
  std::uint64_t est_seed = 42;
  est_data.add(est);
  est_learn.add(est);
  est->add_option("--method", est_method, "irm, ssm or fr");
  est->add_option("--folds", est_folds, "cross-fitting folds");
  est->add_option("--seed", est_seed, "seed for folds and learners");
  est->add_option("--out", est_out, "report JSON (default stdout)");
  est->add_option("--scores", est_scores, "per-observation nuisance and score CSV");

  // sensitivity
  auto* sens = app.add_subcommand("sensitivity", "omitted-variable-bias bounds for an estimate");
  std::string sens_report, sens_nuis, sens_out, sens_grid, sens_axis = "latent";
  double sens_cy2 = 0.05, sens_mu2 = 0.05, sens_rho = 1.0, sens_cs2 = -1.0, sens_grid_max = 0.3;
  std::size_t sens_b = 10000, sens_res = 31;
  std::uint64_t sens_seed = 1;
  sens->add_option("--report", sens_report, "estimate report JSON")->required()->check(CLI::ExistingFile);
  sens->add_option("--nuisance", sens_nuis, "nuisance CSV from estimate --scores")->required()->check(CLI::ExistingFile);
  sens->add_option("--cy2", sens_cy2, "outcome confounding strength C_Y^2");
  sens->add_option("--mu2", sens_mu2, "latent selection partial R^2 (calibrated to C_S^2)");
  sens->add_option("--cs2", sens_cs2, "C_S^2 directly (overrides --mu2)");
  sens->add_option("--rho", sens_rho, "alignment in [-1, 1]");
  sens->add_option("--b-draws", sens_b, "Monte-Carlo draws per unit");
  sens->add_option("--seed", sens_seed, "calibration seed");
  sens->add_option("--grid", sens_grid, "contour grid CSV");
  sens->add_option("--grid-max", sens_grid_max, "upper end of both grid axes");
  sens->add_option("--grid-resolution", sens_res, "points per grid axis");
  sens->add_option("--axis", sens_axis, "selection axis: latent or representer");
  sens->add_option("--out", sens_out, "report JSON (default stdout)");

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "drop covariate groups and measure gains");
  DataFlags bench_data;
  LearnerFlags bench_learn;
  std::string bench_groups, bench_out, bench_json;
  std::size_t bench_folds = 5;
  std::uint64_t bench_seed = 42;
  bench_data.add(bench);
  bench_learn.add(bench);
  bench->add_option("--groups", bench_groups, "groups JSON (default: one group per covariate)");
  bench->add_option("--folds", bench_folds, "cross-fitting folds");
  bench->add_option("--seed", bench_seed, "seed for folds and learners");
  bench->add_option("--out", bench_out, "table CSV")->required();
  bench->add_option("--json", bench_json, "report JSON");

  // simulate-study
  auto* study = app.add_subcommand("simulate-study", "Monte-Carlo comparison of estimators");
  LearnerFlags study_learn;
  std::string study_dgp = "mar", study_methods = "irm,ssm,fr", study_out, study_sizes = "1000,4000";
  std::string study_base_prop = "logistic", study_base_out = "linear";
  std::size_t study_reps = 50, study_folds = 5, study_bins = 30;
  std::uint64_t study_seed = 1;
  study_learn.add(study);
  study->add_option("--dgp", study_dgp, "mar or confounded");
  study->add_option("--reps", study_reps, "replications");
  study->add_option("--sizes", study_sizes, "comma-separated sample sizes");
  study->add_option("--methods", study_methods, "comma-separated methods");
  study->add_option("--seed", study_seed, "base seed");
  study->add_option("--folds", study_folds, "cross-fitting folds");
  study->add_option("--baseline-propensity", study_base_prop, "IRM/SSM propensity learner");
  study->add_option("--baseline-outcome", study_base_out, "IRM/SSM outcome learner");
  study->add_option("--bins", study_bins, "histogram bins");
  study->add_option("--out", study_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    set_num_threads(threads);
    if (*sim) return run_simulate(sim_dgp, sim_n, sim_p, sim_theta, sim_sigma, sim_seed, sim_config, sim_out, sim_truth);

    if (*est) {
      const Dataset data = est_data.load();
      const Learners l = est_learn.resolve(est_seed);
      const Method m = parse_method(est_method);
      const FoldPlan folds = make_folds(data, est_folds, est_seed);
      const EstimateResult r = estimate(data, folds, m, l);
      json report{{"estimate", r.estimate.to_json()},
                  {"learners", l.to_json()},
                  {"folds", {{"k", folds.k()}, {"seed", folds.seed()}}},
                  {"data", dataset_summary(data)}};
      write_json(report, est_out);
      if (!est_scores.empty()) write_nuisance_csv(est_scores, data, r);
      return 0;
    }

    if (*sens) {
      const json rep = read_json(sens_report);
      const NuisanceTable t = read_nuisance_csv(sens_nuis);
      SensitivityInputs in;
      in.n = t.d.size();
      in.theta_s = rep.at("estimate").at("theta").get<double>();
      in.se_s = rep.at("estimate").at("se").get<double>();
      in.alpha_s = t.alpha_plugin;
      for (std::size_t i = 0; i < in.n; ++i)
        if (t.s[i] == 1) in.residuals.push_back(t.y[i] - (t.d[i] == 1 ? t.g1[i] : t.g0[i]));
      SensitivityReport out;
      out.theta_s = in.theta_s;
      out.se_s = in.se_s;
      out.level = rep.at("estimate").value("level", 0.95);
      out.s2 = scale_factor(in);
      double r2 = 0.0, a2 = 0.0;
      for (double v : in.residuals) r2 += v * v;
      for (double v : in.alpha_s) a2 += v * v;
      out.e_residual_sq = r2 / static_cast<double>(in.n);
      out.e_alpha_s_sq = a2 / static_cast<double>(in.n);
      out.robustness_value = robustness_value(out.theta_s, out.s2);
      CalibrationOptions co;
      co.b_draws = sens_b;
      co.seed = sens_seed;
      out.curve = calibrate_quasi_gaussian(t.p1, t.pi1, t.pi0, default_mu2_grid(), co);
      out.scenario = evaluate_scenario(out, sens_cy2, sens_cs2 >= 0.0 ? -1.0 : sens_mu2, sens_cs2, sens_rho);
      json j = out.to_json();
      j["source"] = {{"method", rep.at("estimate").at("method")}, {"n", in.n}};
      write_json(j, sens_out);
      if (!sens_grid.empty()) {
        SelectionAxis axis;
        if (sens_axis == "latent")
          axis = SelectionAxis::kLatentR2;
        else if (sens_axis == "representer")
          axis = SelectionAxis::kRepresenterR2;
        else
          throw ConfigError("unknown axis '" + sens_axis + "' (expected latent or representer)");
        contour_grid(out.s2, out.theta_s, {0.0, sens_grid_max}, {0.0, sens_grid_max}, sens_res, axis, &out.curve,
                     sens_rho)
            .write_csv(sens_grid);
      }
      return 0;
    }

    if (*bench) {
      Dataset data = bench_data.load();
      std::vector<CovariateGroup> groups;
      if (!bench_groups.empty()) {
        groups = load_groups_json(bench_groups, data);
      } else {
        for (std::size_t j = 0; j < data.p(); ++j) groups.push_back({data.covariate_names()[j], {j}});
      }
      const Learners l = bench_learn.resolve(bench_seed);
      const FoldPlan folds = make_folds(data, bench_folds, bench_seed);
      const auto rows = benchmark_groups(data, folds, groups, l);
      write_benchmark_csv(rows, bench_out);
      std::cout << format_benchmark_table(rows);
      if (!bench_json.empty()) {
        json arr = json::array();
        for (const auto& r : rows) arr.push_back(r.to_json());
        write_json({{"groups", arr}, {"learners", l.to_json()}, {"folds", {{"k", folds.k()}, {"seed", folds.seed()}}},
                    {"data", dataset_summary(data)}},
                   bench_json);
      }
      return 0;
    }

    if (*study) {
      McConfig cfg;
      if (study_dgp == "mar")
        cfg.dgp = DgpKind::kMar;
      else if (study_dgp == "confounded")
        cfg.dgp = DgpKind::kConfounded;
      else
        throw ConfigError("unknown dgp '" + study_dgp + "' (expected mar or confounded)");
      cfg.reps = study_reps;
      cfg.base_seed = study_seed;
      cfg.folds = study_folds;
      cfg.methods.clear();
      for (const auto& m : split_list(study_methods)) cfg.methods.push_back(parse_method(m));
      cfg.sizes.clear();
      for (const auto& s : split_list(study_sizes)) {
        try {
          cfg.sizes.push_back(static_cast<std::size_t>(std::stoull(s)));
        } catch (const std::exception&) {
          throw ConfigError("bad sample size '" + s + "'");
        }
      }
      const Learners fr = study_learn.resolve(study_seed);
      Learners base = fr;
      base.propensity = parse_propensity_kind(study_base_prop);
      base.outcome = parse_outcome_kind(study_base_out);
      cfg.learners[Method::kFr] = fr;
      cfg.learners[Method::kIrm] = base;
      cfg.learners[Method::kSsm] = base;
      const McSummary s = run_mc(cfg);
      std::filesystem::create_directories(study_out);
      const std::filesystem::path dir(study_out);
      json j = s.to_json();
      j["config"] = cfg.to_json();
      write_json(j, (dir / "summary.json").string());
      {
        std::ofstream txt(dir / "summary.txt");
        txt << s.format_table();
      }
      s.write_records_csv((dir / "reps.csv").string());
      s.write_histogram_csv((dir / "histogram.csv").string(), study_bins);
      std::cout << s.format_table();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
