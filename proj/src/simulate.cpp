#include "balsens/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>

#include "balsens/parallel.hpp"
#include "balsens/sensitivity.hpp"
#include "balsens/text_io.hpp"

namespace balsens {

namespace {
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kBootStream = 2;
constexpr std::uint64_t kSplitStream = 3;
}  // namespace

void DGPSpec::check() const {
  if (n < 10) throw Error(ErrorCode::ConfigError, "simulated sample size must be >= 10");
  if (!(p_min > 0.0 && p_min < p_max && p_max < 1.0))
    throw Error(ErrorCode::ConfigError, "probability clamp must satisfy 0 < p_min < p_max < 1");
  if (p_noise_sd < 0.0 || y_noise_sd < 0.0) throw Error(ErrorCode::ConfigError, "noise sd must be >= 0");
}

SimulatedData generate(const DGPSpec& spec, Engine& rng) {
  spec.check();
  const auto n = static_cast<Eigen::Index>(spec.n);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SimulatedData out;
  Dataset& ds = out.data;
  ds.x.resize(n, 2);
  ds.y.resize(n);
  ds.z.resize(n);
  ds.names = {"x1", "x2"};
  out.y0.resize(n);
  out.y1.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x1 = std_normal(rng);
    const double x2 = std_normal(rng);
    const double eps = spec.p_noise_sd * std_normal(rng);
    const double p = std::clamp(spec.p_intercept + spec.p_slope1 * x1 + spec.p_slope2 * x2 + eps, spec.p_min,
                                spec.p_max);
    const bool z = unif(rng) < p;
    const double y0 = spec.y_slope1 * x1 + spec.y_slope2 * x2 + spec.y_noise_sd * std_normal(rng);
    ds.x(i, 0) = x1;
    ds.x(i, 1) = x2;
    ds.z[i] = z ? 1.0 : 0.0;
    out.y0[i] = y0;
    out.y1[i] = y0 + spec.effect;
    ds.y[i] = z ? out.y1[i] : y0;
  }
  ds = validate(std::move(ds));
  return out;
}

double true_value(const DGPSpec& spec, Estimand estimand) {
  switch (estimand) {
    case Estimand::MeanControl: return kTrueMu0;
    case Estimand::MeanTreated:
    case Estimand::Ate:
    case Estimand::Att: return kTrueMu0 + spec.effect;
    case Estimand::MeanControlOfTreated: break;
  }
  throw Error(ErrorCode::ConfigError, "mu01 has no closed-form truth under the simulation design");
}

namespace {

BalanceSpec balance_spec_for(const SimSettings& s, Estimand estimand) {
  BalanceSpec spec;
  spec.method = s.method;
  spec.tol = s.tol;
  if (estimand != Estimand::Ate) spec.target_group = target_group_for(estimand);
  return spec;
}

}  // namespace

CoverageReport coverage_experiment(const DGPSpec& dgp, std::size_t n_sims, const BootstrapPlan& plan,
                                   double alpha, const SimSettings& settings) {
  dgp.check();
  plan.check();
  if (n_sims == 0) throw Error(ErrorCode::ConfigError, "n_sims must be >= 1");
  if (settings.lambdas.empty()) throw Error(ErrorCode::ConfigError, "at least one lambda is required");
  for (double l : settings.lambdas)
    if (!(l >= 1.0)) throw Error(ErrorCode::Domain, "lambda must be >= 1");

  CoverageReport rep;
  rep.reps = n_sims;
  rep.truth = true_value(dgp, settings.estimand);
  rep.lambdas = settings.lambdas;
  rep.runs.resize(n_sims);
  const BalanceSpec spec = balance_spec_for(settings, settings.estimand);

  parallel_for(n_sims, plan.workers, [&](std::size_t s) {
    Engine rng = make_engine(dgp.seed, kDataStream, s);
    const SimulatedData sim = generate(dgp, rng);
    const Dataset ds = standardize(sim.data).data;
    BootstrapPlan inner = plan;
    inner.workers = 1;
    inner.seed = derive_seed(dgp.seed, kBootStream, s);
    const auto ens = BootstrapEnsemble::build(ds, spec, settings.estimand, inner);
    SimRun run;
    run.sim_id = s;
    run.estimate = point_value(ens.original());
    run.dropped = ens.dropped();
    for (double l : settings.lambdas) {
      const Interval ci = ens.evaluate(l, alpha).ci;
      run.ci.push_back(ci);
      run.covered.push_back(ci.contains(rep.truth));
    }
    rep.runs[s] = std::move(run);
  });

  const std::size_t k = settings.lambdas.size();
  rep.coverage.assign(k, 0.0);
  rep.mean_width.assign(k, 0.0);
  for (const auto& run : rep.runs) {
    rep.dropped += run.dropped;
    for (std::size_t j = 0; j < k; ++j) {
      rep.coverage[j] += run.covered[j] ? 1.0 : 0.0;
      rep.mean_width[j] += run.ci[j].width();
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    rep.coverage[j] /= static_cast<double>(n_sims);
    rep.mean_width[j] /= static_cast<double>(n_sims);
  }
  return rep;
}

DistributionSummary summarize(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::EmptyInput, "cannot summarize an empty sample");
  DistributionSummary s;
  const double n = static_cast<double>(v.size());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::sort(v.begin(), v.end());
  for (int q = 1; q <= 9; ++q) s.deciles.push_back(nearest_rank_quantile(v, q / 10.0));
  return s;
}

namespace {

bool is_solver_failure(ErrorCode code) {
  return code == ErrorCode::NoConvergence || code == ErrorCode::Infeasible ||
         code == ErrorCode::ZeroWeightSum || code == ErrorCode::EmptyGroup;
}

struct CrossEstimate {
  double value = 0.0;
  std::size_t count = 0;
};

// Weight function fitted on `train`, applied to the reweighted group of `eval`.
CrossEstimate cross_fit(const Dataset& train, const Dataset& eval, const BalanceSpec& spec) {
  const WeightFit fit = fit_weights(train, spec);
  const bool treated = group_is_treated(spec.target_group);
  double num = 0.0;
  double den = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (eval.treated(i) != treated) continue;
    const double w = weight_at(fit, eval.x.row(static_cast<Eigen::Index>(i)));
    num += w * eval.y[static_cast<Eigen::Index>(i)];
    den += w;
    ++count;
  }
  if (!(den > 0.0)) throw Error(ErrorCode::ZeroWeightSum, "cross-fitted weights sum to zero");
  return {num / den, count};
}

}  // namespace

SplitReport split_compare(const DGPSpec& dgp, const BootstrapPlan& plan, const SimSettings& settings) {
  dgp.check();
  plan.check();
  if (dgp.n % 2 != 0) throw Error(ErrorCode::OddN, "sample splitting needs an even n");
  if (settings.estimand != Estimand::MeanControl && settings.estimand != Estimand::MeanTreated)
    throw Error(ErrorCode::ConfigError, "split comparison supports mu0 and mu1");

  Engine data_rng = make_engine(dgp.seed, kDataStream, 0);
  const Dataset ds = standardize(generate(dgp, data_rng).data).data;
  const BalanceSpec spec = balance_spec_for(settings, settings.estimand);

  const std::size_t half = dgp.n / 2;
  std::vector<std::size_t> first(half), second(half);
  std::iota(first.begin(), first.end(), std::size_t{0});
  std::iota(second.begin(), second.end(), half);
  const Dataset part_a = validate(select_rows(ds, first));
  const Dataset part_b = validate(select_rows(ds, second));

  std::vector<std::optional<double>> full(plan.b_reps), split(plan.b_reps);
  parallel_for(plan.b_reps, plan.workers, [&](std::size_t b) {
    Engine rng = make_engine(plan.seed, kBootStream, b);
    const Dataset boot = validate(resample(ds, rng, plan.max_redraws));
    try {
      const WeightFit fit = fit_weights(boot, spec);
      full[b] = point_estimate(boot, fit, settings.estimand).hajek;
    } catch (const Error& e) {
      if (!is_solver_failure(e.code())) throw;
    }

    Engine rng_a = make_engine(plan.seed, kSplitStream, 2 * b);
    Engine rng_b = make_engine(plan.seed, kSplitStream, 2 * b + 1);
    const Dataset boot_a = validate(resample(part_a, rng_a, plan.max_redraws));
    const Dataset boot_b = validate(resample(part_b, rng_b, plan.max_redraws));
    try {
      const CrossEstimate on_b = cross_fit(boot_a, boot_b, spec);
      const CrossEstimate on_a = cross_fit(boot_b, boot_a, spec);
      const double wa = static_cast<double>(on_a.count);
      const double wb = static_cast<double>(on_b.count);
      split[b] = (wa * on_a.value + wb * on_b.value) / (wa + wb);
    } catch (const Error& e) {
      if (!is_solver_failure(e.code())) throw;
    }
  });

  SplitReport rep;
  rep.b_reps = plan.b_reps;
  for (std::size_t b = 0; b < plan.b_reps; ++b) {
    if (full[b]) rep.full.push_back(*full[b]); else ++rep.dropped_full;
    if (split[b]) rep.split.push_back(*split[b]); else ++rep.dropped_split;
  }
  const double limit = plan.max_drop_fraction * static_cast<double>(plan.b_reps);
  if (static_cast<double>(rep.dropped_full) > limit || static_cast<double>(rep.dropped_split) > limit ||
      rep.full.empty() || rep.split.empty())
    throw Error(ErrorCode::TooManyDropped, "too many bootstrap replicates failed in the split comparison");
  rep.full_summary = summarize(rep.full);
  rep.split_summary = summarize(rep.split);
  return rep;
}

void write_coverage_csv(std::ostream& out, const CoverageReport& rep) {
  out << "sim_id,lambda,estimate,ci_lo,ci_hi,covered\n";
  for (const auto& run : rep.runs) {
    for (std::size_t j = 0; j < rep.lambdas.size(); ++j) {
      out << run.sim_id << ',' << format_double(rep.lambdas[j]) << ',' << format_double(run.estimate) << ','
          << format_double(run.ci[j].lo) << ',' << format_double(run.ci[j].hi) << ','
          << (run.covered[j] ? 1 : 0) << '\n';
    }
  }
}

void write_split_csv(std::ostream& out, const SplitReport& rep) {
  out << "distribution,replicate,estimate\n";
  for (std::size_t b = 0; b < rep.full.size(); ++b) out << "full," << b << ',' << format_double(rep.full[b]) << '\n';
  for (std::size_t b = 0; b < rep.split.size(); ++b)
    out << "split," << b << ',' << format_double(rep.split[b]) << '\n';
}

namespace {

nlohmann::json to_json(const DistributionSummary& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"deciles", s.deciles}};
}

}  // namespace

nlohmann::json to_json(const CoverageReport& rep) {
  nlohmann::json j;
  j["reps"] = rep.reps;
  j["truth"] = rep.truth;
  j["dropped"] = rep.dropped;
  j["by_lambda"] = nlohmann::json::array();
  for (std::size_t k = 0; k < rep.lambdas.size(); ++k) {
    j["by_lambda"].push_back(
        {{"lambda", rep.lambdas[k]}, {"coverage", rep.coverage[k]}, {"mean_width", rep.mean_width[k]}});
  }
  return j;
}

nlohmann::json to_json(const SplitReport& rep) {
  nlohmann::json j;
  j["b_reps"] = rep.b_reps;
  j["dropped_full"] = rep.dropped_full;
  j["dropped_split"] = rep.dropped_split;
  j["full"] = to_json(rep.full_summary);
  j["split"] = to_json(rep.split_summary);
  return j;
}

}  // namespace balsens
