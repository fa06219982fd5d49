#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "balsens/balancer.hpp"
#include "balsens/core.hpp"
#include "balsens/sensitivity.hpp"

namespace balsens {

/// KL projection of the fitted weights onto the set of weights whose Hajek
/// mean of the potential outcome equals the target:
/// oracle_i = gamma_i * exp(tilt * (y_i - target)), rescaled to the same total.
struct OracleFit {
  Eigen::VectorXd oracle_gamma;
  double tilt = 0.0;
  double target = 0.0;
  double achieved_target = 0.0;
  double kl = 0.0;  // sum oracle * log(oracle / gamma)
};

OracleFit oracle_weights(const Eigen::Ref<const Eigen::VectorXd>& gamma_hat,
                         const Eigen::Ref<const Eigen::VectorXd>& potential_outcome, double target);

/// Dataset form: `potential_outcome` holds the relevant potential outcome for
/// every row (Y(1) for mu1, Y(0) otherwise). The target is its mean over the
/// full sample (mu1, mu0) or over the treated (mu01, att).
OracleFit oracle_weights(const Dataset& dataset, const Eigen::VectorXd& potential_outcome,
                         const WeightFit& fit, Estimand estimand);

/// [inf shifted estimate - estimate, sup shifted estimate - estimate] on the
/// original sample. For att the bounds refer to the weighted control mean.
Interval error_bounds(const EstimandProblem& problem, double lambda_sens);

/// max(|lo|, |hi|).
double error_magnitude(const Interval& bounds);

struct Benchmark {
  std::string name;
  std::size_t column = 0;
  double delta_pre = 0.0;    // |target mean - group mean|, unweighted
  double delta_post = 0.0;   // |target mean - weighted group mean|
  double delta_pre_signed = 0.0;
  double delta_post_signed = 0.0;
  double beta_hat = 0.0;     // joint least-squares coefficient on the group outcome
  double w_imbalance = 0.0;  // |target mean - weighted group mean| of the residual part W
};

struct Decomposition {
  std::vector<Benchmark> benchmarks;
  Eigen::MatrixXd u;  // fitted values of each covariate regressed on Z (one column per benchmark)
  Eigen::MatrixXd w;  // residuals
  std::vector<std::string> warnings;
};

/// Target mean minus Hajek-weighted group mean of a per-row quantity.
double signed_imbalance(const Dataset& dataset, const WeightFit& fit, const Eigen::VectorXd& values);

/// Splits every non-constant (standardized) covariate into its regression on Z
/// (U) and the residual (W), and reports benchmark imbalances and outcome
/// coefficients.
Decomposition decompose(const Dataset& dataset, const WeightFit& fit);

struct ContourPoint {
  double delta = 0.0;
  double beta = 0.0;
};

struct AmplificationResult {
  double error_bound = 0.0;
  std::vector<ContourPoint> curve;
  std::vector<Benchmark> benchmarks;
  std::vector<ContourPoint> hull;  // counter-clockwise
  bool no_confounding_needed = false;
};

/// Points (delta, E / delta) on a log-spaced delta grid spanning the
/// benchmarks, plus the convex hull of the post-weighting benchmark points,
/// the origin, (0, max beta) and (max delta_post, 0).
AmplificationResult contour(double error_bound, std::size_t grid, std::span<const Benchmark> benchmarks);

std::vector<ContourPoint> convex_hull(std::vector<ContourPoint> points);

/// Largest delta * beta over a convex polygon (attained on its boundary).
double max_product(std::span<const ContourPoint> polygon);

enum class Verdict { Sensitive, Ambiguous, Robust };

std::string_view to_string(Verdict verdict) noexcept;

/// Sensitive: the curve meets the post-weighting region. Robust: the curve
/// passes above and right of (max delta_pre, max |beta|). Ambiguous otherwise.
Verdict classify(const AmplificationResult& result);

void write_contour_csv(std::ostream& out, const AmplificationResult& result);
void write_benchmarks_csv(std::ostream& out, std::span<const Benchmark> benchmarks);
void write_hull_csv(std::ostream& out, const AmplificationResult& result);

nlohmann::json to_json(const OracleFit& fit);

}  // namespace balsens
