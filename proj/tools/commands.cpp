#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "balsens/amplification.hpp"
#include "balsens/balancer.hpp"
#include "balsens/bootstrap.hpp"
#include "balsens/core.hpp"
#include "balsens/sensitivity.hpp"
#include "balsens/simulate.hpp"
#include "balsens/text_io.hpp"

namespace balsens::cli {

using nlohmann::json;

void RunConfig::check() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::ConfigError, "alpha must lie in (0, 1)");
  if (!(tol >= 0.0)) throw Error(ErrorCode::ConfigError, "tol must be >= 0");
  if (!(iota >= 0.0)) throw Error(ErrorCode::ConfigError, "iota must be >= 0");
  if (lambda && !(*lambda >= 1.0)) throw Error(ErrorCode::ConfigError, "lambda must be >= 1");
  for (std::size_t k = 0; k < lambda_grid.size(); ++k) {
    if (!(lambda_grid[k] >= 1.0)) throw Error(ErrorCode::ConfigError, "lambda grid values must be >= 1");
    if (k > 0 && !(lambda_grid[k] > lambda_grid[k - 1]))
      throw Error(ErrorCode::ConfigError, "lambda grid must be strictly ascending");
  }
  if (b_reps && *b_reps < 2) throw Error(ErrorCode::ConfigError, "b_reps must be >= 2");
  if (workers == 0) throw Error(ErrorCode::ConfigError, "workers must be >= 1");
  if (grid < 2) throw Error(ErrorCode::ConfigError, "grid must be >= 2");
  if (estimand) parse_estimand(*estimand);
  if (method) parse_method(*method);
}

void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "input") c.input = v.get<std::string>();
      else if (key == "out_dir") c.out_dir = v.get<std::string>();
      else if (key == "estimand") c.estimand = v.get<std::string>();
      else if (key == "method") c.method = v.get<std::string>();
      else if (key == "tol") c.tol = v.get<double>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "lambda_grid") c.lambda_grid = v.get<std::vector<double>>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "b_reps") c.b_reps = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "iota") c.iota = v.get<double>();
      else if (key == "workers") c.workers = v.get<std::size_t>();
      else if (key == "covariates") c.covariates = v.get<std::vector<std::string>>();
      else if (key == "grid") c.grid = v.get<std::size_t>();
      else if (key == "n") c.n = v.get<std::size_t>();
      else if (key == "n_sims") c.n_sims = v.get<std::size_t>();
      else throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config '" + path + "'");
  RunConfig c;
  try {
    apply_json(c, json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
  return c;
}

std::uint64_t resolve_seed(const RunConfig& c) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("BALSENS_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw Error(ErrorCode::ConfigError, "BALSENS_SEED is not an unsigned integer");
    return v;
  }
  return 1;
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NoConvergence:
    case ErrorCode::Infeasible:
    case ErrorCode::ZeroWeightSum:
    case ErrorCode::DegenerateResampling:
    case ErrorCode::RankDeficient:
    case ErrorCode::TooManyDropped: return 3;
    case ErrorCode::NotBracketed: return 4;
    default: return 2;
  }
}

std::string error_json(std::string_view code, std::string_view message) {
  return json{{"error", code}, {"message", message}}.dump();
}

namespace {

struct Loaded {
  Dataset raw;
  Standardized std;
};

Loaded load(const RunConfig& c) {
  if (c.input.empty()) throw Error(ErrorCode::ConfigError, "--input is required");
  Dataset ds = read_csv_file(c.input);
  if (!c.covariates.empty()) {
    Eigen::MatrixXd x(ds.x.rows(), static_cast<Eigen::Index>(c.covariates.size()));
    for (std::size_t k = 0; k < c.covariates.size(); ++k) {
      const auto it = std::find(ds.names.begin(), ds.names.end(), c.covariates[k]);
      if (it == ds.names.end())
        throw Error(ErrorCode::SchemaError, "covariate '" + c.covariates[k] + "' not in input");
      x.col(static_cast<Eigen::Index>(k)) = ds.x.col(it - ds.names.begin());
    }
    ds.x = std::move(x);
    ds.names = c.covariates;
  }
  ds = validate(std::move(ds));
  Standardized st = standardize(ds);
  return {std::move(ds), std::move(st)};
}

Estimand estimand_of(const RunConfig& c, Estimand fallback = Estimand::Att) {
  return c.estimand ? parse_estimand(*c.estimand) : fallback;
}

BalanceSpec balance_spec(const RunConfig& c, Estimand estimand) {
  BalanceSpec spec;
  spec.method = c.method ? parse_method(*c.method) : BalanceMethod::SbwDual;
  spec.tol = c.tol;
  if (estimand != Estimand::Ate) spec.target_group = target_group_for(estimand);
  return spec;
}

SensConfig sens_config(const RunConfig& c, double lambda) {
  SensConfig s;
  s.lambda_sens = lambda;
  s.alpha = c.alpha;
  s.b_reps = c.b_reps.value_or(1000);
  s.seed = resolve_seed(c);
  s.iota = c.iota;
  s.check();
  return s;
}

std::filesystem::path out_path(const RunConfig& c, const char* name) {
  std::filesystem::create_directories(c.out_dir);
  return std::filesystem::path(c.out_dir) / name;
}

void write_file(const RunConfig& c, const char* name, const std::string& content) {
  const auto path = out_path(c, name);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot write '" + path.string() + "'");
  out << content;
}

void write_json(const RunConfig& c, const char* name, const json& j) { write_file(c, name, j.dump(2) + "\n"); }

json config_json(const RunConfig& c, Estimand estimand, const BalanceSpec& spec) {
  return {{"estimand", to_string(estimand)},
          {"method", to_string(spec.method)},
          {"tol", spec.tol},
          {"alpha", c.alpha},
          {"seed", resolve_seed(c)}};
}

void balance_rows(std::ostream& out, const Dataset& ds, const WeightFit& fit, const std::string& suffix) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(fit.rows.size()));
  WeightFit uniform = fit;
  uniform.gamma = ones;
  for (std::size_t j = 0; j < ds.dim(); ++j) {
    const Eigen::VectorXd col = ds.x.col(static_cast<Eigen::Index>(j));
    out << ds.names[j] << suffix << ',' << format_double(std::abs(signed_imbalance(ds, uniform, col))) << ','
        << format_double(std::abs(signed_imbalance(ds, fit, col))) << '\n';
  }
}

}  // namespace

void cmd_balance(const RunConfig& c) {
  c.check();
  const Loaded data = load(c);
  const Dataset& ds = data.std.data;
  const Estimand estimand = estimand_of(c);
  const BalanceSpec spec = balance_spec(c, estimand);
  const EstimandFits fits = fit_estimand(ds, spec, estimand);

  std::vector<const WeightFit*> all{&fits.primary};
  if (fits.secondary) all.push_back(&*fits.secondary);

  std::vector<std::pair<std::size_t, double>> weights;
  for (const auto* f : all)
    for (std::size_t k = 0; k < f->rows.size(); ++k) weights.emplace_back(f->rows[k], f->gamma[static_cast<Eigen::Index>(k)]);
  std::sort(weights.begin(), weights.end());
  std::ostringstream w;
  w << "row_id,gamma\n";
  for (const auto& [row, g] : weights) w << row << ',' << format_double(g) << '\n';
  write_file(c, "weights.csv", w.str());

  std::ostringstream t;
  t << "name,delta_pre,delta_post\n";
  if (fits.secondary) {
    balance_rows(t, ds, fits.primary, ":treated");
    balance_rows(t, ds, *fits.secondary, ":control");
  } else {
    balance_rows(t, ds, fits.primary, "");
  }
  write_file(c, "balance_table.csv", t.str());

  json j = config_json(c, estimand, spec);
  const EstimandProblem prob = make_problem(ds, fits, estimand);
  j["point_estimate"] = point_value(prob);
  j["covariates"] = ds.names;
  j["fits"] = json::array();
  for (const auto* f : all) {
    json fj = to_json(*f);
    fj.erase("weights");
    fj.erase("rows");
    j["fits"].push_back(std::move(fj));
  }
  write_json(c, "fit.json", j);
}

void cmd_sensitivity(const RunConfig& c) {
  c.check();
  std::vector<double> grid = c.lambda_grid;
  if (grid.empty() && c.lambda) grid.push_back(*c.lambda);
  if (grid.empty()) throw Error(ErrorCode::ConfigError, "sensitivity needs --lambda-grid or --lambda");
  const Loaded data = load(c);
  const Estimand estimand = estimand_of(c);
  const BalanceSpec spec = balance_spec(c, estimand);
  const SensConfig sens = sens_config(c, grid.front());
  const auto ens = BootstrapEnsemble::build(data.std.data, spec, estimand, plan_from(sens, c.workers));

  std::vector<SensitivityResult> results;
  for (double l : grid) results.push_back(ens.evaluate(l, c.alpha));
  std::ostringstream wide, lng;
  write_intervals_csv(wide, results);
  write_intervals_long_csv(lng, results);
  write_file(c, "intervals.csv", wide.str());
  write_file(c, "intervals_long.csv", lng.str());

  json j = config_json(c, estimand, spec);
  j["point_estimate"] = point_value(ens.original());
  j["b_reps"] = sens.b_reps;
  j["results"] = json::array();
  for (const auto& r : results) j["results"].push_back(to_json(r));
  write_json(c, "sensitivity.json", j);
}

void cmd_lambda_star(const RunConfig& c) {
  c.check();
  const Loaded data = load(c);
  const Estimand estimand = estimand_of(c);
  const BalanceSpec spec = balance_spec(c, estimand);
  const SensConfig sens = sens_config(c, 1.0);
  const LambdaStarResult r = lambda_star(data.std.data, spec, sens, plan_from(sens, c.workers), estimand);
  json j = config_json(c, estimand, spec);
  j["b_reps"] = sens.b_reps;
  j["result"] = to_json(r);
  write_json(c, "lambda_star.json", j);
}

void cmd_amplify(const RunConfig& c) {
  c.check();
  const Loaded data = load(c);
  const Dataset& ds = data.std.data;
  const Estimand estimand = estimand_of(c);
  if (estimand == Estimand::Ate || estimand == Estimand::MeanControlOfTreated)
    throw Error(ErrorCode::ConfigError, "amplify supports att, mu1 and mu0");
  const BalanceSpec spec = balance_spec(c, estimand);
  const EstimandFits fits = fit_estimand(ds, spec, estimand);
  const EstimandProblem prob = make_problem(ds, fits, estimand);

  json j = config_json(c, estimand, spec);
  json flags = json::array();
  double lstar = 1.0;
  if (c.lambda) {
    lstar = *c.lambda;
    j["lambda_source"] = "supplied";
  } else {
    const SensConfig sens = sens_config(c, 1.0);
    const LambdaStarResult r = lambda_star(ds, spec, sens, plan_from(sens, c.workers), estimand);
    lstar = r.lambda_star;
    if (r.not_significant) flags.push_back("NOT_SIGNIFICANT");
    j["lambda_source"] = "computed";
    j["b_reps"] = sens.b_reps;
  }
  const Interval bounds = error_bounds(prob, lstar);
  const double e = error_magnitude(bounds);
  const Decomposition dec = decompose(ds, fits.primary);
  const AmplificationResult res = contour(e, c.grid, dec.benchmarks);

  std::ostringstream cs, bs, hs;
  write_contour_csv(cs, res);
  write_benchmarks_csv(bs, res.benchmarks);
  write_hull_csv(hs, res);
  write_file(c, "contour.csv", cs.str());
  write_file(c, "benchmarks.csv", bs.str());
  write_file(c, "hull.csv", hs.str());

  j["lambda_star"] = lstar;
  j["point_estimate"] = point_value(prob);
  j["error_bounds"] = {bounds.lo, bounds.hi};
  j["error_bound"] = e;
  if (res.no_confounding_needed) flags.push_back("NO_CONFOUNDING_NEEDED");
  if (res.no_confounding_needed) {
    j["verdict"] = nullptr;
  } else if (res.benchmarks.empty()) {
    flags.push_back("NO_BENCHMARKS");
    j["verdict"] = nullptr;
  } else {
    j["verdict"] = to_string(classify(res));
  }
  j["flags"] = flags;
  j["warnings"] = dec.warnings;
  json diag = json::array();
  for (const auto& b : dec.benchmarks) {
    diag.push_back({{"name", b.name},
                    {"delta_pre_signed", b.delta_pre_signed},
                    {"delta_post_signed", b.delta_post_signed},
                    {"w_imbalance", b.w_imbalance}});
  }
  j["benchmark_diagnostics"] = diag;
  write_json(c, "verdict.json", j);
}

void cmd_simulate(const RunConfig& c) {
  c.check();
  DGPSpec dgp;
  dgp.n = c.n;
  dgp.seed = resolve_seed(c);
  SimSettings settings;
  settings.method = c.method ? parse_method(*c.method) : BalanceMethod::Entropy;
  settings.tol = c.tol;
  settings.estimand = estimand_of(c, Estimand::MeanControl);
  if (!c.lambda_grid.empty()) {
    settings.lambdas = c.lambda_grid;
  } else if (c.lambda) {
    settings.lambdas = {*c.lambda};
  }
  BootstrapPlan plan;
  plan.b_reps = c.b_reps.value_or(500);
  plan.seed = dgp.seed;
  plan.workers = c.workers;

  const CoverageReport cov = coverage_experiment(dgp, c.n_sims, plan, c.alpha, settings);
  std::ostringstream cs;
  write_coverage_csv(cs, cov);
  write_file(c, "coverage.csv", cs.str());

  json j;
  j["estimand"] = to_string(settings.estimand);
  j["method"] = to_string(settings.method);
  j["n"] = dgp.n;
  j["seed"] = dgp.seed;
  j["alpha"] = c.alpha;
  j["b_reps"] = plan.b_reps;
  j["coverage"] = to_json(cov);
  if (settings.estimand == Estimand::MeanControl || settings.estimand == Estimand::MeanTreated) {
    if (dgp.n % 2 != 0) throw Error(ErrorCode::OddN, "sample splitting needs an even n");
    const SplitReport split = split_compare(dgp, plan, settings);
    std::ostringstream ss;
    write_split_csv(ss, split);
    write_file(c, "split_compare.csv", ss.str());
    j["split_compare"] = to_json(split);
  }
  write_json(c, "sim_report.json", j);
}

void run(const RunConfig& c) {
  if (c.command == "balance") return cmd_balance(c);
  if (c.command == "sensitivity") return cmd_sensitivity(c);
  if (c.command == "lambda-star") return cmd_lambda_star(c);
  if (c.command == "amplify") return cmd_amplify(c);
  if (c.command == "simulate") return cmd_simulate(c);
  throw Error(ErrorCode::ConfigError, "unknown command '" + c.command + "'");
}

}  // namespace balsens::cli
