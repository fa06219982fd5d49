#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "balsens/error.hpp"

namespace balsens {

/// Observational data: outcome, binary treatment, covariates.
///
/// `n1` and `n0` are derived by validate(); a Dataset built by hand has them
/// at zero until it has been validated.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::VectorXd z;  // 0.0 / 1.0
  Eigen::MatrixXd x;  // n x d
  std::vector<std::string> names;
  std::size_t n1 = 0;
  std::size_t n0 = 0;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  bool treated(std::size_t i) const { return z[static_cast<Eigen::Index>(i)] != 0.0; }
};

enum class Estimand {
  MeanTreated,           // mu1 = E[Y(1)]
  MeanControl,           // mu0 = E[Y(0)]
  MeanControlOfTreated,  // mu01 = E[Y(0) | Z = 1]
  Ate,                   // mu1 - mu0
  Att,                   // mu11 - mu01
};

Estimand parse_estimand(std::string_view text);
std::string_view to_string(Estimand estimand) noexcept;

/// Which units are reweighted and which sample's covariate means they target.
enum class TargetGroup {
  TreatedToAll,
  ControlToAll,
  ControlToTreated,
};

std::string_view to_string(TargetGroup group) noexcept;

/// Group used by single-group estimands. Ate has two groups and throws here.
TargetGroup target_group_for(Estimand estimand);

bool group_is_treated(TargetGroup group) noexcept;

struct SensConfig {
  double lambda_sens = 1.0;
  double alpha = 0.05;
  std::size_t b_reps = 1000;
  std::uint64_t seed = 1;
  double iota = 0.0;

  void check() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return lo <= v && v <= hi; }
  bool contains(const Interval& other) const { return lo <= other.lo && other.hi <= hi; }
  double width() const { return hi - lo; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct ScalingRecord {
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<bool> constant;
};

struct Standardized {
  Dataset data;
  ScalingRecord scaling;
};

/// Checks schema invariants and fills the derived group counts.
Dataset validate(Dataset dataset);

/// Centers and scales every covariate column to mean 0 and sd 1 over the full
/// sample (sd with denominator n - 1). Constant columns become 0 and are
/// flagged. Outcomes are left in their own units.
Standardized standardize(const Dataset& dataset);

/// (p1 / (1 - p1)) / (p2 / (1 - p2)).
double odds_ratio(double p1, double p2);

/// Row indices of the treated (or control) units, in dataset order.
std::vector<std::size_t> group_rows(const Dataset& dataset, bool treated);

/// New dataset made of the given rows (duplicates allowed). Not validated.
Dataset select_rows(const Dataset& dataset, std::span<const std::size_t> rows);

/// CSV ingestion: header row, required columns `y` and `z`, every other
/// column is a numeric covariate.
Dataset read_csv(std::istream& in);
Dataset read_csv_file(const std::string& path);

}  // namespace balsens
