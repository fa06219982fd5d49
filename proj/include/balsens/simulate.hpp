#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "balsens/balancer.hpp"
#include "balsens/bootstrap.hpp"
#include "balsens/core.hpp"
#include "balsens/rng.hpp"

namespace balsens {

/// Two standard normal covariates, treatment from a noisy linear probability
/// (clamped), outcome linear with a constant effect.
struct DGPSpec {
  std::size_t n = 2000;
  double p_intercept = 0.5;
  double p_slope1 = 0.07;
  double p_slope2 = 0.07;
  double p_noise_sd = 0.03;
  double p_min = 0.01;
  double p_max = 0.99;
  double effect = 0.2;
  double y_slope1 = 0.5;
  double y_slope2 = 0.5;
  double y_noise_sd = 0.2;
  std::uint64_t seed = 1;

  void check() const;
};

inline constexpr double kTrueMu0 = 0.0;

struct SimulatedData {
  Dataset data;  // validated, covariates x1, x2 unstandardized
  Eigen::VectorXd y0;
  Eigen::VectorXd y1;
};

SimulatedData generate(const DGPSpec& spec, Engine& rng);

/// Population value of the estimand under the DGP. mu01 depends on the
/// clamped selection model and is not supported.
double true_value(const DGPSpec& spec, Estimand estimand);

struct SimSettings {
  BalanceMethod method = BalanceMethod::Entropy;
  double tol = 0.05;  // used by sbw only
  Estimand estimand = Estimand::MeanControl;
  std::vector<double> lambdas{1.0, 2.0};
};

struct SimRun {
  std::size_t sim_id = 0;
  double estimate = 0.0;
  std::vector<Interval> ci;  // one per lambda
  std::vector<bool> covered;
  std::size_t dropped = 0;
};

struct CoverageReport {
  std::size_t reps = 0;
  double truth = 0.0;
  std::vector<double> lambdas;
  std::vector<double> coverage;    // per lambda
  std::vector<double> mean_width;  // per lambda
  std::vector<SimRun> runs;
  std::size_t dropped = 0;
};

/// Simulations are keyed by index: simulation s draws its data from substream
/// (seed, 1, s) and its bootstrap from (seed, 2, s). plan.workers spreads
/// simulations over threads; plan.seed is ignored.
CoverageReport coverage_experiment(const DGPSpec& dgp, std::size_t n_sims, const BootstrapPlan& plan,
                                   double alpha, const SimSettings& settings);

struct DistributionSummary {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> deciles;  // 10%, 20%, ..., 90%
};

DistributionSummary summarize(std::vector<double> values);

struct SplitReport {
  std::size_t b_reps = 0;
  std::vector<double> full;
  std::vector<double> split;
  DistributionSummary full_summary;
  DistributionSummary split_summary;
  std::size_t dropped_full = 0;
  std::size_t dropped_split = 0;
};

/// Bootstrap distribution of a group mean (mu1 or mu0) on the full data
/// against the cross-fitted version: the data are halved, each half is
/// resampled, the weight function fitted on one half's resample is evaluated
/// on the other's, roles are swapped and the two estimates are averaged with
/// weights proportional to the reweighted-group counts.
SplitReport split_compare(const DGPSpec& dgp, const BootstrapPlan& plan, const SimSettings& settings);

void write_coverage_csv(std::ostream& out, const CoverageReport& report);
void write_split_csv(std::ostream& out, const SplitReport& report);

nlohmann::json to_json(const CoverageReport& report);
nlohmann::json to_json(const SplitReport& report);

}  // namespace balsens
