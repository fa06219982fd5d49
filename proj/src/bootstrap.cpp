#include "balsens/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <string>

#include "balsens/parallel.hpp"
#include "balsens/text_io.hpp"

namespace balsens {

namespace {
constexpr std::uint64_t kBootstrapStream = 0xB0075;
}

void BootstrapPlan::check() const {
  if (b_reps < 2) throw Error(ErrorCode::ConfigError, "b_reps must be >= 2");
  if (!(max_drop_fraction >= 0.0 && max_drop_fraction < 1.0))
    throw Error(ErrorCode::ConfigError, "max_drop_fraction must lie in [0, 1)");
}

BootstrapPlan plan_from(const SensConfig& sens, std::size_t workers) {
  BootstrapPlan plan;
  plan.b_reps = sens.b_reps;
  plan.seed = sens.seed;
  plan.workers = workers;
  return plan;
}

ResampledRows resample_indices(const Eigen::VectorXd& z, Engine& rng, std::size_t max_redraws) {
  const auto n = static_cast<std::size_t>(z.size());
  if (n == 0) throw Error(ErrorCode::EmptyInput, "cannot resample an empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  ResampledRows out;
  out.rows.resize(n);
  for (std::size_t attempt = 0;; ++attempt) {
    std::size_t treated = 0;
    for (auto& r : out.rows) {
      r = pick(rng);
      if (z[static_cast<Eigen::Index>(r)] != 0.0) ++treated;
    }
    if (treated > 0 && treated < n) return out;
    if (attempt >= max_redraws)
      throw Error(ErrorCode::DegenerateResampling,
                  "resample missing a treatment group after " + std::to_string(attempt) + " redraws");
    ++out.redraws;
  }
}

Dataset resample(const Dataset& ds, Engine& rng, std::size_t max_redraws, std::size_t* redraws) {
  const ResampledRows rr = resample_indices(ds.z, rng, max_redraws);
  if (redraws) *redraws = rr.redraws;
  return select_rows(ds, rr.rows);
}

double nearest_rank_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "quantile of an empty sample");
  const auto b = static_cast<long double>(sorted.size());
  // The small offset keeps exact products such as 0.975 * 1000 from rounding up.
  auto rank = static_cast<long long>(std::ceil(static_cast<long double>(p) * b - 1e-9L));
  rank = std::clamp<long long>(rank, 1, static_cast<long long>(sorted.size()));
  return sorted[static_cast<std::size_t>(rank - 1)];
}

Interval percentile_ci(std::span<const double> values, double alpha) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile interval of an empty sample");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::ConfigError, "alpha must lie in (0, 1)");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return {nearest_rank_quantile(sorted, alpha / 2.0), nearest_rank_quantile(sorted, 1.0 - alpha / 2.0)};
}

namespace {

// Lower end from the minima, upper end from the maxima.
Interval minimax_ci(std::vector<double> mins, std::vector<double> maxs, double alpha) {
  std::sort(mins.begin(), mins.end());
  std::sort(maxs.begin(), maxs.end());
  return {nearest_rank_quantile(mins, alpha / 2.0), nearest_rank_quantile(maxs, 1.0 - alpha / 2.0)};
}

bool is_solver_failure(ErrorCode code) {
  return code == ErrorCode::NoConvergence || code == ErrorCode::Infeasible ||
         code == ErrorCode::ZeroWeightSum || code == ErrorCode::EmptyGroup;
}

}  // namespace

BootstrapEnsemble BootstrapEnsemble::build(const Dataset& ds, const BalanceSpec& spec, Estimand estimand,
                                           const BootstrapPlan& plan) {
  plan.check();
  BootstrapEnsemble ens;
  ens.b_reps_ = plan.b_reps;
  ens.original_ = make_problem(ds, fit_estimand(ds, spec, estimand), estimand);

  std::vector<std::optional<EstimandProblem>> slots(plan.b_reps);
  std::vector<std::size_t> redraws(plan.b_reps, 0);
  parallel_for(plan.b_reps, plan.workers, [&](std::size_t b) {
    Engine rng = make_engine(plan.seed, kBootstrapStream, b);
    const ResampledRows rr = resample_indices(ds.z, rng, plan.max_redraws);
    redraws[b] = rr.redraws;
    const Dataset boot = select_rows(ds, rr.rows);
    try {
      slots[b] = make_problem(boot, fit_estimand(boot, spec, estimand), estimand);
    } catch (const Error& e) {
      if (!is_solver_failure(e.code())) throw;
    }
  });

  for (std::size_t b = 0; b < plan.b_reps; ++b) {
    ens.redraws_ += redraws[b];
    if (slots[b]) {
      ens.replicates_.push_back(std::move(*slots[b]));
    } else {
      ++ens.dropped_;
    }
  }
  const double frac = static_cast<double>(ens.dropped_) / static_cast<double>(plan.b_reps);
  if (frac > plan.max_drop_fraction || ens.replicates_.empty())
    throw Error(ErrorCode::TooManyDropped, std::to_string(ens.dropped_) + " of " +
                                               std::to_string(plan.b_reps) +
                                               " bootstrap replicates failed to solve");
  return ens;
}

SensitivityResult BootstrapEnsemble::evaluate(double lambda, double alpha) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::ConfigError, "alpha must lie in (0, 1)");
  SensitivityResult res;
  res.lambda_sens = lambda;
  res.b_reps = b_reps_;
  res.b_used = replicates_.size();
  res.dropped = dropped_;
  res.redraws = redraws_;
  res.estimate_range = estimate_range(original_, lambda);

  const std::size_t b = replicates_.size();
  if (original_.estimand == Estimand::Ate) {
    std::vector<double> min1(b), max1(b), min0(b), max0(b);
    for (std::size_t k = 0; k < b; ++k) {
      const GroupRanges r = group_ranges(replicates_[k], lambda);
      min1[k] = r.primary.lo;
      max1[k] = r.primary.hi;
      min0[k] = r.secondary->lo;
      max0[k] = r.secondary->hi;
    }
    res.ci = combine_ate(minimax_ci(std::move(min1), std::move(max1), alpha / 2.0),
                         minimax_ci(std::move(min0), std::move(max0), alpha / 2.0));
  } else {
    std::vector<double> mins(b), maxs(b);
    for (std::size_t k = 0; k < b; ++k) {
      const Interval r = estimate_range(replicates_[k], lambda);
      mins[k] = r.lo;
      maxs[k] = r.hi;
    }
    res.ci = minimax_ci(std::move(mins), std::move(maxs), alpha);
  }
  return res;
}

SensitivityResult sensitivity_interval(const Dataset& ds, const BalanceSpec& spec, const SensConfig& sens,
                                       const BootstrapPlan& plan, Estimand estimand) {
  sens.check();
  return BootstrapEnsemble::build(ds, spec, estimand, plan).evaluate(sens.lambda_sens, sens.alpha);
}

std::vector<double> lambda_targets(double iota) {
  if (iota > 0.0) return {-iota, iota};
  return {0.0};
}

LambdaStarResult lambda_star(const BootstrapEnsemble& ens, double alpha, std::span<const double> targets,
                             const LambdaSearch& search) {
  if (targets.empty()) throw Error(ErrorCode::ConfigError, "lambda search needs a target");
  if (!(search.lambda_max > 1.0)) throw Error(ErrorCode::ConfigError, "lambda_max must exceed 1");
  LambdaStarResult out;
  out.targets.assign(targets.begin(), targets.end());
  auto covers = [&](const SensitivityResult& r) {
    return std::any_of(targets.begin(), targets.end(), [&](double t) { return r.ci.contains(t); });
  };

  SensitivityResult at_one = ens.evaluate(1.0, alpha);
  out.evaluations = 1;
  if (covers(at_one)) {
    out.lambda_star = 1.0;
    out.not_significant = true;
    out.at_star = at_one;
    return out;
  }
  SensitivityResult at_hi = ens.evaluate(search.lambda_max, alpha);
  ++out.evaluations;
  if (!covers(at_hi))
    throw Error(ErrorCode::NotBracketed, "interval still excludes the target at lambda_max = " +
                                             format_double(search.lambda_max));
  double lo = 1.0;
  double hi = search.lambda_max;
  while (hi - lo > search.abs_tol) {
    const double mid = 0.5 * (lo + hi);
    SensitivityResult r = ens.evaluate(mid, alpha);
    ++out.evaluations;
    if (covers(r)) {
      hi = mid;
      at_hi = std::move(r);
    } else {
      lo = mid;
    }
  }
  out.lambda_star = hi;
  out.at_star = at_hi;
  return out;
}

LambdaStarResult lambda_star(const Dataset& ds, const BalanceSpec& spec, const SensConfig& sens,
                             const BootstrapPlan& plan, Estimand estimand, const LambdaSearch& search) {
  sens.check();
  const auto ens = BootstrapEnsemble::build(ds, spec, estimand, plan);
  const auto targets = lambda_targets(sens.iota);
  return lambda_star(ens, sens.alpha, targets, search);
}

nlohmann::json to_json(const SensitivityResult& r) {
  nlohmann::json j;
  j["lambda"] = r.lambda_sens;
  j["estimate_range"] = {r.estimate_range.lo, r.estimate_range.hi};
  j["ci"] = {r.ci.lo, r.ci.hi};
  j["b_reps"] = r.b_reps;
  j["b_used"] = r.b_used;
  j["dropped"] = r.dropped;
  j["redraws"] = r.redraws;
  return j;
}

nlohmann::json to_json(const LambdaStarResult& r) {
  nlohmann::json j;
  j["lambda_star"] = r.lambda_star;
  j["not_significant"] = r.not_significant;
  j["targets"] = r.targets;
  j["at_star"] = to_json(r.at_star);
  j["evaluations"] = r.evaluations;
  j["flags"] = nlohmann::json::array();
  if (r.not_significant) j["flags"].push_back("NOT_SIGNIFICANT");
  return j;
}

void write_intervals_csv(std::ostream& out, std::span<const SensitivityResult> results) {
  out << "lambda,est_lo,est_hi,ci_lo,ci_hi\n";
  for (const auto& r : results) {
    out << format_double(r.lambda_sens) << ',' << format_double(r.estimate_range.lo) << ','
        << format_double(r.estimate_range.hi) << ',' << format_double(r.ci.lo) << ','
        << format_double(r.ci.hi) << '\n';
  }
}

void write_intervals_long_csv(std::ostream& out, std::span<const SensitivityResult> results) {
  out << "lambda,bound_type,value\n";
  for (const auto& r : results) {
    const auto l = format_double(r.lambda_sens);
    out << l << ",est_lo," << format_double(r.estimate_range.lo) << '\n';
    out << l << ",est_hi," << format_double(r.estimate_range.hi) << '\n';
    out << l << ",ci_lo," << format_double(r.ci.lo) << '\n';
    out << l << ",ci_hi," << format_double(r.ci.hi) << '\n';
  }
}

std::vector<IntervalRow> read_intervals_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "lambda,est_lo,est_hi,ci_lo,ci_hi")
    throw Error(ErrorCode::SchemaError, "unexpected intervals.csv header");
  std::vector<IntervalRow> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    double v[5];
    if (f.size() != 5) throw Error(ErrorCode::SchemaError, "intervals.csv rows need 5 fields");
    for (int k = 0; k < 5; ++k)
      if (!parse_double(f[static_cast<std::size_t>(k)], v[k]))
        throw Error(ErrorCode::SchemaError, "intervals.csv: bad number '" + f[static_cast<std::size_t>(k)] + "'");
    rows.push_back({v[0], {v[1], v[2]}, {v[3], v[4]}});
  }
  return rows;
}

}  // namespace balsens
