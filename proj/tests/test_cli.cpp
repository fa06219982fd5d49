#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "balsens/bootstrap.hpp"
#include "commands.hpp"
#include "generators.hpp"
#include "json.hpp"

using namespace balsens;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("balsens_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_dataset(const fs::path& p, const Dataset& ds) {
  std::ofstream out(p);
  out << "y,z";
  for (const auto& n : ds.names) out << ',' << n;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out << ds.y[k] << ',' << ds.z[k];
    for (Eigen::Index j = 0; j < ds.x.cols(); ++j) out << ',' << ds.x(k, j);
    out << '\n';
  }
}

int run_exe(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(BALSENS_EXE) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path sample_input(const fs::path& dir, double effect = 1.0, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  const fs::path p = dir / "data.csv";
  write_dataset(p, gen::dataset(rng, 200, 2, 0.5, effect));
  return p;
}

}  // namespace

TEST_CASE("balance writes weights, fit and balance table") {
  const fs::path dir = scratch("balance");
  const fs::path in = sample_input(dir);
  const fs::path out = dir / "out";
  REQUIRE(run_exe("balance --input " + in.string() + " --out-dir " + out.string() + " --tol 0", dir / "err") == 0);
  std::ifstream table(out / "balance_table.csv");
  std::string line;
  std::getline(table, line);
  CHECK(line == "name,delta_pre,delta_post");
  int rows = 0;
  while (std::getline(table, line)) {
    const auto comma = line.rfind(',');
    CHECK(std::stod(line.substr(comma + 1)) <= 1e-6);
    ++rows;
  }
  CHECK(rows == 2);
  const auto fit = nlohmann::json::parse(slurp(out / "fit.json"));
  CHECK(fit.contains("point_estimate"));
  CHECK(fit["fits"][0].contains("beta"));
  CHECK(slurp(out / "weights.csv").rfind("row_id,gamma\n", 0) == 0);
}

TEST_CASE("missing treatment column is a schema error") {
  const fs::path dir = scratch("schema");
  std::ofstream(dir / "bad.csv") << "y,x\n1,2\n3,4\n";
  const int code = run_exe("balance --input " + (dir / "bad.csv").string() + " --out-dir " + dir.string(), dir / "err");
  CHECK(code == 2);
  const auto err = nlohmann::json::parse(slurp(dir / "err"));
  CHECK(err["error"] == "SCHEMA_ERROR");
}

TEST_CASE("bad flags and configs exit with code 2") {
  const fs::path dir = scratch("flags");
  const fs::path in = sample_input(dir);
  CHECK(run_exe("balance --input " + in.string() + " --estimand xyz", dir / "err") == 2);
  CHECK(run_exe("sensitivity --input " + in.string() + " --lambda-grid 2,1", dir / "err") == 2);
  std::ofstream(dir / "cfg.json") << "{\"unknown_key\": 1}";
  CHECK(run_exe("balance --config " + (dir / "cfg.json").string(), dir / "err") == 2);
}

TEST_CASE("sensitivity grid is nested and round-trips") {
  const fs::path dir = scratch("sens");
  const fs::path in = sample_input(dir);
  const fs::path out = dir / "out";
  REQUIRE(run_exe("sensitivity --input " + in.string() + " --out-dir " + out.string() +
                      " --lambda-grid 1,2,3 --b-reps 60 --seed 5 --workers 3",
                  dir / "err") == 0);
  std::ifstream csv(out / "intervals.csv");
  const auto rows = read_intervals_csv(csv);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].estimate_range.lo == rows[0].estimate_range.hi);
  for (std::size_t k = 1; k < rows.size(); ++k) {
    CHECK(rows[k].estimate_range.contains(rows[k - 1].estimate_range));
    CHECK(rows[k].ci.contains(rows[k - 1].ci));
  }
  const auto j = nlohmann::json::parse(slurp(out / "sensitivity.json"));
  REQUIRE(j["results"].size() == 3);
  CHECK(j["results"][2]["ci"][1].get<double>() == rows[2].ci.hi);
}

TEST_CASE("config file with flag overrides and seed fallback") {
  const fs::path dir = scratch("config");
  const fs::path in = sample_input(dir);
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << "{\"input\": \"" << in.string() << "\", \"lambda_grid\": [1, 2], \"b_reps\": 30, \"seed\": 9, \"estimand\": \"mu1\"}";
  }
  REQUIRE(run_exe("sensitivity --config " + (dir / "cfg.json").string() + " --out-dir " + (dir / "a").string() +
                      " --estimand att",
                  dir / "err") == 0);
  const auto a = nlohmann::json::parse(slurp(dir / "a" / "sensitivity.json"));
  CHECK(a["estimand"] == "att");
  CHECK(a["seed"] == 9);
  CHECK(a["b_reps"] == 30);

  cli::RunConfig c;
  CHECK(cli::resolve_seed(c) == (std::getenv("BALSENS_SEED") ? cli::resolve_seed(c) : 1u));
  ::setenv("BALSENS_SEED", "77", 1);
  CHECK(cli::resolve_seed(c) == 77u);
  c.seed = 3;
  CHECK(cli::resolve_seed(c) == 3u);
  ::unsetenv("BALSENS_SEED");
}

TEST_CASE("lambda star and amplify") {
  const fs::path dir = scratch("amplify");
  const fs::path in = sample_input(dir);
  const fs::path out = dir / "out";
  REQUIRE(run_exe("lambda-star --input " + in.string() + " --out-dir " + out.string() + " --b-reps 60", dir / "err") == 0);
  const auto ls = nlohmann::json::parse(slurp(out / "lambda_star.json"));
  const double lstar = ls["result"]["lambda_star"].get<double>();
  CHECK(lstar >= 1.0);

  REQUIRE(run_exe("amplify --input " + in.string() + " --out-dir " + out.string() + " --b-reps 60", dir / "err") == 0);
  const auto v = nlohmann::json::parse(slurp(out / "verdict.json"));
  CHECK(v["lambda_star"].get<double>() == lstar);
  const double e = v["error_bound"].get<double>();
  const double lo = v["error_bounds"][0].get<double>();
  const double hi = v["error_bounds"][1].get<double>();
  CHECK(e == std::max(std::abs(lo), std::abs(hi)));
  if (e > 0.0) {
    const std::string verdict = v["verdict"].get<std::string>();
    CHECK((verdict == "SENSITIVE" || verdict == "AMBIGUOUS" || verdict == "ROBUST"));
  }
  CHECK(slurp(out / "benchmarks.csv").rfind("name,delta_pre,delta_post,beta_hat\n", 0) == 0);

  // lambda = 1 supplied: no confounding needed, empty curve
  REQUIRE(run_exe("amplify --input " + in.string() + " --out-dir " + (dir / "one").string() + " --lambda 1",
                  dir / "err") == 0);
  const auto one = nlohmann::json::parse(slurp(dir / "one" / "verdict.json"));
  CHECK(one["flags"][0] == "NO_CONFOUNDING_NEEDED");
  CHECK(slurp(dir / "one" / "contour.csv") == "delta,beta\n");
}

TEST_CASE("not bracketed exits with code 4") {
  const fs::path dir = scratch("bracket");
  std::mt19937_64 rng(3);
  write_dataset(dir / "d.csv", gen::dataset(rng, 200, 2, 0.3, 1000.0));
  CHECK(run_exe("lambda-star --input " + (dir / "d.csv").string() + " --out-dir " + dir.string() + " --b-reps 30",
                dir / "err") == 4);
  CHECK(nlohmann::json::parse(slurp(dir / "err"))["error"] == "NOT_BRACKETED");
}

TEST_CASE("simulate smoke run") {
  const fs::path dir = scratch("simulate");
  REQUIRE(run_exe("simulate --n 100 --n-sims 3 --b-reps 30 --out-dir " + dir.string(), dir / "err") == 0);
  CHECK(slurp(dir / "coverage.csv").rfind("sim_id,lambda,estimate,ci_lo,ci_hi,covered\n", 0) == 0);
  CHECK(fs::exists(dir / "split_compare.csv"));
  const auto rep = nlohmann::json::parse(slurp(dir / "sim_report.json"));
  CHECK(rep["coverage"]["reps"] == 3);
}

TEST_CASE("exit code mapping") {
  CHECK(cli::exit_code(ErrorCode::SchemaError) == 2);
  CHECK(cli::exit_code(ErrorCode::ConfigError) == 2);
  CHECK(cli::exit_code(ErrorCode::NoConvergence) == 3);
  CHECK(cli::exit_code(ErrorCode::TooManyDropped) == 3);
  CHECK(cli::exit_code(ErrorCode::NotBracketed) == 4);
}
