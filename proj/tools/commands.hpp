#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "balsens/error.hpp"

namespace balsens::cli {

/// Settings shared by every subcommand. Unset optionals take command-specific
/// defaults (att / sbw / B = 1000 for data commands, mu0 / entropy / B = 500
/// for simulate).
struct RunConfig {
  std::string command;
  std::string input;
  std::string out_dir = ".";
  std::optional<std::string> estimand;
  std::optional<std::string> method;
  double tol = 0.05;
  std::optional<double> lambda;
  std::vector<double> lambda_grid;
  double alpha = 0.05;
  std::optional<std::size_t> b_reps;
  std::optional<std::uint64_t> seed;
  double iota = 0.0;
  std::size_t workers = 1;
  std::vector<std::string> covariates;  // empty: all
  std::size_t grid = 200;               // contour points
  std::size_t n = 2000;                 // simulate sample size
  std::size_t n_sims = 100;

  void check() const;
};

/// Fills a config from a JSON object whose keys match the long flag names
/// with underscores (lambda_grid, b_reps, out_dir, ...). Unknown keys are an error.
void apply_json(RunConfig& config, const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);

/// Seed from the config, else BALSENS_SEED, else 1.
std::uint64_t resolve_seed(const RunConfig& config);

void cmd_balance(const RunConfig& config);
void cmd_sensitivity(const RunConfig& config);
void cmd_lambda_star(const RunConfig& config);
void cmd_amplify(const RunConfig& config);
void cmd_simulate(const RunConfig& config);

/// Dispatches on config.command.
void run(const RunConfig& config);

/// 2 for schema and configuration errors, 3 for solver errors, 4 for an
/// unbracketed lambda search.
int exit_code(ErrorCode code) noexcept;

std::string error_json(std::string_view code, std::string_view message);

}  // namespace balsens::cli
