#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "commands.hpp"

namespace {

using balsens::cli::RunConfig;

struct FlagValues {
  std::string input, out_dir, estimand, method, config;
  double tol = 0.0, lambda = 0.0, alpha = 0.0, iota = 0.0;
  std::vector<double> lambda_grid;
  std::size_t b_reps = 0, workers = 0, grid = 0, n = 0, n_sims = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> covariates;
};

// Each flag that was given on the command line overrides the config file.
struct Overrides {
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> items;

  void apply(RunConfig& c) const {
    for (const auto& [opt, set] : items)
      if (opt->count() > 0) set(c);
  }
};

void add_flags(CLI::App* sub, FlagValues& v, Overrides& o) {
  auto add = [&](CLI::Option* opt, std::function<void(RunConfig&)> set) { o.items.emplace_back(opt, std::move(set)); };
  sub->add_option("--config", v.config, "JSON config file; flags take precedence");
  add(sub->add_option("--input", v.input, "input CSV (columns y, z, covariates)"),
      [&](RunConfig& c) { c.input = v.input; });
  add(sub->add_option("--out-dir", v.out_dir, "output directory"), [&](RunConfig& c) { c.out_dir = v.out_dir; });
  add(sub->add_option("--estimand", v.estimand, "att | ate | mu1 | mu0 | mu01")
          ->check(CLI::IsMember({"att", "ate", "mu1", "mu0", "mu01"})),
      [&](RunConfig& c) { c.estimand = v.estimand; });
  add(sub->add_option("--method", v.method, "sbw | entropy")->check(CLI::IsMember({"sbw", "entropy"})),
      [&](RunConfig& c) { c.method = v.method; });
  add(sub->add_option("--tol", v.tol, "covariate imbalance tolerance (sbw)"), [&](RunConfig& c) { c.tol = v.tol; });
  add(sub->add_option("--lambda", v.lambda, "sensitivity parameter (>= 1)"),
      [&](RunConfig& c) { c.lambda = v.lambda; });
  add(sub->add_option("--lambda-grid", v.lambda_grid, "ascending lambda values")->delimiter(','),
      [&](RunConfig& c) { c.lambda_grid = v.lambda_grid; });
  add(sub->add_option("--alpha", v.alpha, "1 - confidence level"), [&](RunConfig& c) { c.alpha = v.alpha; });
  add(sub->add_option("--b-reps", v.b_reps, "bootstrap replicates"), [&](RunConfig& c) { c.b_reps = v.b_reps; });
  add(sub->add_option("--seed", v.seed, "root seed (fallback: BALSENS_SEED, then 1)"),
      [&](RunConfig& c) { c.seed = v.seed; });
  add(sub->add_option("--iota", v.iota, "minimal effect size for lambda*"), [&](RunConfig& c) { c.iota = v.iota; });
  add(sub->add_option("--workers", v.workers, "worker threads"), [&](RunConfig& c) { c.workers = v.workers; });
  add(sub->add_option("--covariates", v.covariates, "covariate columns to use")->delimiter(','),
      [&](RunConfig& c) { c.covariates = v.covariates; });
  add(sub->add_option("--grid", v.grid, "contour points"), [&](RunConfig& c) { c.grid = v.grid; });
  add(sub->add_option("--n", v.n, "simulated sample size"), [&](RunConfig& c) { c.n = v.n; });
  add(sub->add_option("--n-sims", v.n_sims, "number of simulations"), [&](RunConfig& c) { c.n_sims = v.n_sims; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balancing weights with sensitivity analysis"};
  app.require_subcommand(1);
  FlagValues values;
  Overrides overrides;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"balance", "fit balancing weights"},
      {"sensitivity", "estimate ranges and bootstrap intervals over a lambda grid"},
      {"lambda-star", "smallest lambda whose interval covers the null"},
      {"amplify", "error contour, benchmarks and verdict"},
      {"simulate", "coverage and sample-splitting experiments"},
  };
  for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), values, overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << balsens::cli::error_json("CONFIG_ERROR", e.what()) << '\n';
    return 2;
  }

  try {
    RunConfig config = values.config.empty() ? RunConfig{} : balsens::cli::load_config_file(values.config);
    overrides.apply(config);
    config.command = app.get_subcommands().front()->get_name();
    balsens::cli::run(config);
  } catch (const balsens::Error& e) {
    std::cerr << balsens::cli::error_json(balsens::to_string(e.code()), e.what()) << '\n';
    return balsens::cli::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << balsens::cli::error_json("INTERNAL", e.what()) << '\n';
    return 1;
  }
  return 0;
}
