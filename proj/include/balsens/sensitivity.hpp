#pragma once

#include <cstddef>
#include <optional>

#include <Eigen/Dense>
#include "json.hpp"

#include "balsens/balancer.hpp"
#include "balsens/core.hpp"

namespace balsens {

/// How a log odds-ratio shift h perturbs a weight.
enum class ShiftForm {
  InverseProbability,  // 1 + (gamma - 1) e^h      (group means over the full sample)
  Odds,                // e^{-h} gamma              (control mean of the treated)
};

ShiftForm shift_form_for(TargetGroup group) noexcept;
ShiftForm shift_form_for(Estimand estimand);

struct ShiftSpec {
  double lambda_sens = 1.0;
  Estimand estimand = Estimand::MeanTreated;
};

/// Outcomes and fitted weights of the reweighted group.
struct WeightedGroup {
  Eigen::VectorXd y;
  Eigen::VectorXd gamma;
  ShiftForm form = ShiftForm::InverseProbability;
};

WeightedGroup weighted_group(const Dataset& dataset, const WeightFit& fit);

struct ExtremaResult {
  double min_est = 0.0;
  double max_est = 0.0;
  // Per-unit odds ratios r_i in [1/lambda, lambda] attaining the extrema. For
  // the Odds form r_i = gamma_i / shifted gamma_i.
  Eigen::VectorXd argmin_r;
  Eigen::VectorXd argmax_r;
  std::size_t iterations = 0;
  // The weight total changes sign inside the box: both extrema are infinite.
  bool unbounded = false;
  // Dinkelbach hit its iteration cap; the point estimate is returned.
  bool no_convergence = false;
};

/// Shifted weights for log odds-ratio values h (one per group unit).
Eigen::VectorXd shift_weights(const Eigen::Ref<const Eigen::VectorXd>& gamma,
                              const Eigen::Ref<const Eigen::VectorXd>& h_values,
                              const ShiftSpec& spec);

/// Hajek mean of the group outcomes under shifted weights.
double shifted_estimate(const WeightedGroup& group, const Eigen::Ref<const Eigen::VectorXd>& h_values,
                        const ShiftSpec& spec);

/// Exact minimum and maximum of the shifted Hajek mean over all per-unit odds
/// ratios in [1/lambda, lambda], by Dinkelbach iteration on the linear-fractional
/// program. Each step picks the box vertex maximizing numerator - t * denominator.
ExtremaResult extrema(const WeightedGroup& group, double lambda_sens);

/// [L_mu1 - U_mu0, U_mu1 - L_mu0].
Interval combine_ate(const Interval& mu1, const Interval& mu0);

/// Weight fits required by an estimand: one group, or both for ate
/// (primary = treated_to_all, secondary = control_to_all).
struct EstimandFits {
  WeightFit primary;
  std::optional<WeightFit> secondary;
};

EstimandFits fit_estimand(const Dataset& dataset, BalanceSpec spec, Estimand estimand);

/// Everything the extrema need for one estimand on one sample.
struct EstimandProblem {
  Estimand estimand = Estimand::MeanTreated;
  WeightedGroup primary;
  std::optional<WeightedGroup> secondary;
  double treated_mean = 0.0;  // att only
};

EstimandProblem make_problem(const Dataset& dataset, const EstimandFits& fits, Estimand estimand);

/// Hajek point estimate of the estimand.
double point_value(const EstimandProblem& problem);

/// Extrema of the group means: the primary group and, for ate, the control group.
struct GroupRanges {
  Interval primary;
  std::optional<Interval> secondary;
  bool unbounded = false;
};

GroupRanges group_ranges(const EstimandProblem& problem, double lambda_sens);

/// Range of the estimand's point estimate over the sensitivity model.
Interval estimate_range(const EstimandProblem& problem, double lambda_sens);

nlohmann::json to_json(const ExtremaResult& result);

}  // namespace balsens
