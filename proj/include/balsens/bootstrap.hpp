#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "json.hpp"

#include "balsens/balancer.hpp"
#include "balsens/core.hpp"
#include "balsens/rng.hpp"
#include "balsens/sensitivity.hpp"

namespace balsens {

struct BootstrapPlan {
  std::size_t b_reps = 1000;
  std::uint64_t seed = 1;
  std::size_t max_redraws = 100;  // per replicate, for resamples missing a group
  std::size_t workers = 1;
  double max_drop_fraction = 0.01;

  void check() const;
};

BootstrapPlan plan_from(const SensConfig& sens, std::size_t workers = 1);

struct ResampledRows {
  std::vector<std::size_t> rows;
  std::size_t redraws = 0;
};

/// n row indices drawn i.i.d. with replacement, ignoring treatment. Draws that
/// miss either group are redrawn, at most `max_redraws` times.
ResampledRows resample_indices(const Eigen::VectorXd& z, Engine& rng, std::size_t max_redraws);

Dataset resample(const Dataset& dataset, Engine& rng, std::size_t max_redraws,
                 std::size_t* redraws = nullptr);

/// Nearest-rank quantile: the ceil(p * B)-th smallest value (1-based), clamped to [1, B].
double nearest_rank_quantile(std::span<const double> sorted, double p);

/// [Q_{alpha/2}, Q_{1-alpha/2}] of the values.
Interval percentile_ci(std::span<const double> values, double alpha);

struct SensitivityResult {
  double lambda_sens = 1.0;
  Interval estimate_range;  // extrema on the original sample
  Interval ci;              // percentile bootstrap interval
  std::size_t b_reps = 0;
  std::size_t b_used = 0;
  std::size_t dropped = 0;
  std::size_t redraws = 0;
};

/// Bootstrap replicates with their re-solved weights. Weights do not depend on
/// lambda, so one ensemble serves every lambda; the same seed gives the same
/// replicates, which makes intervals nested in lambda.
class BootstrapEnsemble {
 public:
  static BootstrapEnsemble build(const Dataset& dataset, const BalanceSpec& spec, Estimand estimand,
                                 const BootstrapPlan& plan);

  SensitivityResult evaluate(double lambda_sens, double alpha) const;

  const EstimandProblem& original() const { return original_; }
  std::size_t b_reps() const { return b_reps_; }
  std::size_t dropped() const { return dropped_; }
  std::size_t redraws() const { return redraws_; }
  const std::vector<EstimandProblem>& replicates() const { return replicates_; }

 private:
  EstimandProblem original_;
  std::vector<EstimandProblem> replicates_;
  std::size_t b_reps_ = 0;
  std::size_t dropped_ = 0;
  std::size_t redraws_ = 0;
};

/// Resample, re-solve the weights, take per-replicate extrema at lambda and
/// form [Q_{alpha/2}(minima), Q_{1-alpha/2}(maxima)]. For ate the two means
/// each get alpha/2 and are combined.
SensitivityResult sensitivity_interval(const Dataset& dataset, const BalanceSpec& spec,
                                       const SensConfig& sens, const BootstrapPlan& plan,
                                       Estimand estimand);

struct LambdaSearch {
  double lambda_max = 50.0;
  double abs_tol = 0.01;
};

struct LambdaStarResult {
  double lambda_star = 1.0;
  bool not_significant = false;
  std::vector<double> targets;
  SensitivityResult at_star;
  std::size_t evaluations = 0;
};

/// Smallest lambda whose interval contains any of the targets (0, or +-iota),
/// by bisection on a fixed ensemble.
LambdaStarResult lambda_star(const BootstrapEnsemble& ensemble, double alpha,
                             std::span<const double> targets, const LambdaSearch& search = {});

LambdaStarResult lambda_star(const Dataset& dataset, const BalanceSpec& spec, const SensConfig& sens,
                             const BootstrapPlan& plan, Estimand estimand,
                             const LambdaSearch& search = {});

/// {0} when iota is 0, otherwise {-iota, iota}.
std::vector<double> lambda_targets(double iota);

nlohmann::json to_json(const SensitivityResult& result);
nlohmann::json to_json(const LambdaStarResult& result);

/// Wide table: lambda,est_lo,est_hi,ci_lo,ci_hi.
void write_intervals_csv(std::ostream& out, std::span<const SensitivityResult> results);
/// Long table: lambda,bound_type,value.
void write_intervals_long_csv(std::ostream& out, std::span<const SensitivityResult> results);

struct IntervalRow {
  double lambda_sens = 1.0;
  Interval estimate_range;
  Interval ci;
};

std::vector<IntervalRow> read_intervals_csv(std::istream& in);

}  // namespace balsens
