#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "balsens/core.hpp"

namespace balsens {

enum class BalanceMethod { SbwDual, Entropy };

BalanceMethod parse_method(std::string_view text);
std::string_view to_string(BalanceMethod method) noexcept;

/// Balancing problem. The feature map is an intercept followed by the selected
/// covariate columns; covariates constant on the sample are dropped. The
/// intercept is always balanced exactly, which fixes the weight total at the
/// size of the target sample.
struct BalanceSpec {
  TargetGroup target_group = TargetGroup::TreatedToAll;
  BalanceMethod method = BalanceMethod::SbwDual;
  double tol = 0.05;                       // L-inf imbalance allowed on covariates
  std::optional<std::vector<std::size_t>> columns;  // default: every covariate
  double stationarity_tol = 1e-8;
  std::size_t max_iterations = 50000;
  double beta_cap = 1e6;  // warn when |beta|_inf exceeds this
};

struct WeightFit {
  BalanceMethod method = BalanceMethod::SbwDual;
  TargetGroup target_group = TargetGroup::TreatedToAll;
  std::vector<std::size_t> rows;      // dataset rows of the reweighted group
  std::vector<std::size_t> features;  // covariate columns in the feature map
  Eigen::VectorXd gamma;              // one weight per entry of `rows`
  Eigen::VectorXd beta;               // intercept first
  Eigen::VectorXd imbalance;          // weighted group mean - target mean, intercept first
  double objective = 0.0;             // dual objective at beta
  double stationarity = 0.0;          // min-norm subgradient (sbw) / gradient (entropy)
  std::size_t iterations = 0;
  std::size_t target_size = 0;        // size of the target sample
  std::vector<std::string> warnings;
};

/// Stable balancing weights through the Lagrangian dual
///   min_beta (1/2N) sum_G [beta.phi_i]_+^2 - beta.m + tol * sum_{j>0} |beta_j|
/// solved by accelerated proximal gradient with backtracking and an active-set
/// Newton refinement. Weights are recovered as [beta.phi_i]_+.
WeightFit solve_sbw_dual(const Dataset& dataset, const BalanceSpec& spec);

/// Entropy balancing with exact balance: exponential tilting of uniform weights,
/// Newton iterations on the covariate dual parameters.
WeightFit solve_entropy(const Dataset& dataset, const BalanceSpec& spec);

/// Dispatches on spec.method.
WeightFit fit_weights(const Dataset& dataset, const BalanceSpec& spec);

/// Weight function of a fit evaluated at a covariate row of any dataset sharing
/// the same columns.
double weight_at(const WeightFit& fit, const Eigen::Ref<const Eigen::RowVectorXd>& x_row);

struct PointEstimate {
  double hajek = 0.0;
  double raw = 0.0;  // (1/n_group) sum gamma_i y_i for group means
};

/// Hajek weighted mean of the fitted group (mu1, mu0, mu01), or mean of the
/// treated outcomes minus the weighted control mean (att).
PointEstimate point_estimate(const Dataset& dataset, const WeightFit& fit, Estimand estimand);

/// ate from a treated-to-all and a control-to-all fit.
PointEstimate point_estimate_ate(const Dataset& dataset, const WeightFit& treated_fit,
                                 const WeightFit& control_fit);

/// Hajek mean sum w_i v_i / sum w_i.
double hajek_mean(const Eigen::Ref<const Eigen::VectorXd>& weights,
                  const Eigen::Ref<const Eigen::VectorXd>& values);

nlohmann::json to_json(const WeightFit& fit);

}  // namespace balsens
