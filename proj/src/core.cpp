#include "balsens/core.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "balsens/text_io.hpp"

namespace balsens {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::SchemaError: return "SCHEMA_ERROR";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    case ErrorCode::EmptyGroup: return "EMPTY_GROUP";
    case ErrorCode::NonFinite: return "NON_FINITE";
    case ErrorCode::NonBinaryTreatment: return "NON_BINARY_TREATMENT";
    case ErrorCode::Domain: return "DOMAIN";
    case ErrorCode::HOutOfRange: return "H_OUT_OF_RANGE";
    case ErrorCode::EmptyInput: return "EMPTY_INPUT";
    case ErrorCode::OddN: return "ODD_N";
    case ErrorCode::NoBenchmarks: return "NO_BENCHMARKS";
    case ErrorCode::NoConvergence: return "NO_CONVERGENCE";
    case ErrorCode::Infeasible: return "INFEASIBLE";
    case ErrorCode::ZeroWeightSum: return "ZERO_WEIGHT_SUM";
    case ErrorCode::DegenerateResampling: return "DEGENERATE_RESAMPLING";
    case ErrorCode::RankDeficient: return "RANK_DEFICIENT";
    case ErrorCode::TooManyDropped: return "TOO_MANY_DROPPED";
    case ErrorCode::NotBracketed: return "NOT_BRACKETED";
  }
  return "UNKNOWN";
}

Estimand parse_estimand(std::string_view text) {
  if (text == "mu1") return Estimand::MeanTreated;
  if (text == "mu0") return Estimand::MeanControl;
  if (text == "mu01") return Estimand::MeanControlOfTreated;
  if (text == "ate") return Estimand::Ate;
  if (text == "att") return Estimand::Att;
  throw Error(ErrorCode::ConfigError, "unknown estimand '" + std::string(text) + "'");
}

std::string_view to_string(Estimand estimand) noexcept {
  switch (estimand) {
    case Estimand::MeanTreated: return "mu1";
    case Estimand::MeanControl: return "mu0";
    case Estimand::MeanControlOfTreated: return "mu01";
    case Estimand::Ate: return "ate";
    case Estimand::Att: return "att";
  }
  return "?";
}

std::string_view to_string(TargetGroup group) noexcept {
  switch (group) {
    case TargetGroup::TreatedToAll: return "treated_to_all";
    case TargetGroup::ControlToAll: return "control_to_all";
    case TargetGroup::ControlToTreated: return "control_to_treated";
  }
  return "?";
}

TargetGroup target_group_for(Estimand estimand) {
  switch (estimand) {
    case Estimand::MeanTreated: return TargetGroup::TreatedToAll;
    case Estimand::MeanControl: return TargetGroup::ControlToAll;
    case Estimand::MeanControlOfTreated:
    case Estimand::Att: return TargetGroup::ControlToTreated;
    case Estimand::Ate: break;
  }
  throw Error(ErrorCode::ConfigError, "ate uses two weighting groups");
}

bool group_is_treated(TargetGroup group) noexcept {
  return group == TargetGroup::TreatedToAll;
}

void SensConfig::check() const {
  if (!(lambda_sens >= 1.0) || !std::isfinite(lambda_sens))
    throw Error(ErrorCode::ConfigError, "lambda must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error(ErrorCode::ConfigError, "alpha must lie in (0, 1)");
  if (b_reps < 2) throw Error(ErrorCode::ConfigError, "b_reps must be >= 2");
  if (!(iota >= 0.0)) throw Error(ErrorCode::ConfigError, "iota must be >= 0");
}

Dataset validate(Dataset ds) {
  const auto n = ds.y.size();
  if (ds.z.size() != n || ds.x.rows() != n)
    throw Error(ErrorCode::SchemaError, "y, z and x must have the same number of rows");
  if (ds.names.size() != static_cast<std::size_t>(ds.x.cols()))
    throw Error(ErrorCode::SchemaError, "one name per covariate column is required");
  std::set<std::string> seen(ds.names.begin(), ds.names.end());
  if (seen.size() != ds.names.size())
    throw Error(ErrorCode::SchemaError, "covariate names must be distinct");

  std::size_t n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double zi = ds.z[i];
    if (zi == 1.0) {
      ++n1;
    } else if (zi != 0.0) {
      throw Error(ErrorCode::NonBinaryTreatment,
                  "treatment must be 0 or 1 (row " + std::to_string(i) + ")");
    }
  }
  if (!ds.y.allFinite()) throw Error(ErrorCode::NonFinite, "outcome contains non-finite values");
  if (!ds.x.allFinite()) throw Error(ErrorCode::NonFinite, "covariates contain non-finite values");
  if (n1 == 0 || n1 == static_cast<std::size_t>(n))
    throw Error(ErrorCode::EmptyGroup, "both treated and control groups must be nonempty");
  ds.n1 = n1;
  ds.n0 = static_cast<std::size_t>(n) - n1;
  return ds;
}

Standardized standardize(const Dataset& ds) {
  Standardized out{ds, {}};
  const auto n = ds.x.rows();
  const auto d = ds.x.cols();
  out.scaling.mean.resize(static_cast<std::size_t>(d));
  out.scaling.sd.resize(static_cast<std::size_t>(d));
  out.scaling.constant.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto col = ds.x.col(j);
    const double mean = col.mean();
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ss += (col[i] - mean) * (col[i] - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    const auto k = static_cast<std::size_t>(j);
    out.scaling.mean[k] = mean;
    out.scaling.sd[k] = sd;
    // Columns whose spread is pure rounding noise count as constant.
    const bool constant = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
    out.scaling.constant[k] = constant;
    if (constant) {
      out.data.x.col(j).setZero();
    } else {
      out.data.x.col(j) = (col.array() - mean) / sd;
    }
  }
  return out;
}

double odds_ratio(double p1, double p2) {
  if (!(p1 > 0.0 && p1 < 1.0) || !(p2 > 0.0 && p2 < 1.0))
    throw Error(ErrorCode::Domain, "odds_ratio arguments must lie in (0, 1)");
  return (p1 / (1.0 - p1)) / (p2 / (1.0 - p2));
}

std::vector<std::size_t> group_rows(const Dataset& ds, bool treated) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.treated(i) == treated) rows.push_back(i);
  return rows;
}

Dataset select_rows(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.y.resize(m);
  out.z.resize(m);
  out.x.resize(m, ds.x.cols());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    out.y[k] = ds.y[i];
    out.z[k] = ds.z[i];
    out.x.row(k) = ds.x.row(i);
  }
  out.names = ds.names;
  for (Eigen::Index k = 0; k < m; ++k)
    if (out.z[k] != 0.0) ++out.n1;
  out.n0 = rows.size() - out.n1;
  return out;
}

Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::SchemaError, "empty CSV input");
  const auto header = split_csv_line(line);
  int y_col = -1;
  int z_col = -1;
  std::vector<int> x_cols;
  Dataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name{trim(header[c])};
    if (name == "y") {
      y_col = static_cast<int>(c);
    } else if (name == "z") {
      z_col = static_cast<int>(c);
    } else {
      x_cols.push_back(static_cast<int>(c));
      ds.names.push_back(name);
    }
  }
  if (y_col < 0) throw Error(ErrorCode::SchemaError, "missing required column 'y'");
  if (z_col < 0) throw Error(ErrorCode::SchemaError, "missing required column 'z'");

  std::vector<double> ys;
  std::vector<double> zs;
  std::vector<double> xs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": expected " +
                                              std::to_string(header.size()) + " fields");
    auto num = [&](int c) {
      double v = 0.0;
      if (!parse_double(fields[static_cast<std::size_t>(c)], v))
        throw Error(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": column '" +
                                                header[static_cast<std::size_t>(c)] +
                                                "' is not numeric");
      return v;
    };
    ys.push_back(num(y_col));
    zs.push_back(num(z_col));
    for (int c : x_cols) xs.push_back(num(c));
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto d = static_cast<Eigen::Index>(x_cols.size());
  ds.y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  ds.z = Eigen::Map<Eigen::VectorXd>(zs.data(), n);
  ds.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), n, d);
  return validate(std::move(ds));
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::SchemaError, "cannot open '" + path + "'");
  return read_csv(in);
}

}  // namespace balsens
