#include "balsens/sensitivity.hpp"

#include <cmath>
#include <limits>

namespace balsens {

ShiftForm shift_form_for(TargetGroup group) noexcept {
  return group == TargetGroup::ControlToTreated ? ShiftForm::Odds : ShiftForm::InverseProbability;
}

ShiftForm shift_form_for(Estimand estimand) { return shift_form_for(target_group_for(estimand)); }

WeightedGroup weighted_group(const Dataset& ds, const WeightFit& fit) {
  WeightedGroup g;
  g.y.resize(static_cast<Eigen::Index>(fit.rows.size()));
  for (std::size_t k = 0; k < fit.rows.size(); ++k)
    g.y[static_cast<Eigen::Index>(k)] = ds.y[static_cast<Eigen::Index>(fit.rows[k])];
  g.gamma = fit.gamma;
  g.form = shift_form_for(fit.target_group);
  return g;
}

namespace {

void check_lambda(double lambda) {
  if (!(lambda >= 1.0) || !std::isfinite(lambda))
    throw Error(ErrorCode::Domain, "sensitivity parameter lambda must be finite and >= 1");
}

// Weight of unit i is a_i + b_i * rho_i with rho_i in [1/lambda, lambda].
struct Affine {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
};

Affine affine_weights(const WeightedGroup& g) {
  Affine aff;
  if (g.form == ShiftForm::InverseProbability) {
    aff.a = Eigen::VectorXd::Ones(g.gamma.size());
    aff.b = g.gamma.array() - 1.0;
  } else {
    aff.a = Eigen::VectorXd::Zero(g.gamma.size());
    aff.b = g.gamma;
  }
  return aff;
}

struct VertexSolve {
  double value = 0.0;
  Eigen::VectorXd rho;
  std::size_t iterations = 0;
  bool converged = true;
};

// Dinkelbach iteration. `sign` is -1 when every admissible weight total is
// negative, so that sign * denominator is positive on the whole box.
VertexSolve dinkelbach(const WeightedGroup& g, const Affine& aff, double lambda, double sign,
                       bool maximize) {
  const double lo = 1.0 / lambda;
  const double hi = lambda;
  const auto m = g.y.size();
  const std::size_t max_iter = 1000;

  VertexSolve out;
  out.rho.resize(m);
  // Start from the unshifted weights.
  const Eigen::VectorXd w0 = aff.a + aff.b;
  double t = w0.dot(g.y) / w0.sum();
  Eigen::VectorXd prev_rho = Eigen::VectorXd::Zero(m);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    out.iterations = it;
    double num = 0.0;
    double den = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double c = sign * aff.b[i] * (g.y[i] - t);
      const bool take_hi = maximize ? c > 0.0 : c < 0.0;
      const double rho = take_hi ? hi : lo;
      out.rho[i] = rho;
      const double w = aff.a[i] + aff.b[i] * rho;
      num += w * g.y[i];
      den += w;
    }
    const double gap = sign * (num - t * den);  // >= 0 for max, <= 0 for min
    const double value = num / den;
    const bool stalled = out.rho == prev_rho;
    if (std::abs(gap) <= 1e-10 * std::abs(den) || stalled) {
      out.value = value;
      return out;
    }
    prev_rho = out.rho;
    t = value;
  }
  out.converged = false;
  out.value = t;
  return out;
}

Eigen::VectorXd to_odds_ratio(const Eigen::VectorXd& rho, ShiftForm form) {
  return form == ShiftForm::InverseProbability ? rho : Eigen::VectorXd(rho.cwiseInverse());
}

}  // namespace

Eigen::VectorXd shift_weights(const Eigen::Ref<const Eigen::VectorXd>& gamma,
                              const Eigen::Ref<const Eigen::VectorXd>& h_values,
                              const ShiftSpec& spec) {
  check_lambda(spec.lambda_sens);
  if (gamma.size() != h_values.size())
    throw Error(ErrorCode::ConfigError, "one shift value per weight is required");
  const double bound = std::log(spec.lambda_sens) + 1e-12;
  for (Eigen::Index i = 0; i < h_values.size(); ++i)
    if (!(std::abs(h_values[i]) <= bound))
      throw Error(ErrorCode::HOutOfRange, "|h| exceeds log(lambda) at unit " + std::to_string(i));
  const Eigen::ArrayXd e = h_values.array().exp();
  if (shift_form_for(spec.estimand) == ShiftForm::InverseProbability)
    return (1.0 + (gamma.array() - 1.0) * e).matrix();
  return (gamma.array() / e).matrix();
}

double shifted_estimate(const WeightedGroup& group, const Eigen::Ref<const Eigen::VectorXd>& h_values,
                        const ShiftSpec& spec) {
  if (shift_form_for(spec.estimand) != group.form)
    throw Error(ErrorCode::ConfigError, "estimand does not match the group's shift form");
  const Eigen::VectorXd w = shift_weights(group.gamma, h_values, spec);
  return hajek_mean(w, group.y);
}

ExtremaResult extrema(const WeightedGroup& g, double lambda) {
  check_lambda(lambda);
  const auto m = g.y.size();
  if (m == 0) throw Error(ErrorCode::EmptyGroup, "extrema of an empty group");
  if (g.gamma.size() != m) throw Error(ErrorCode::ConfigError, "weights and outcomes differ in length");

  ExtremaResult res;
  if (lambda == 1.0) {
    const double v = hajek_mean(g.gamma, g.y);
    res.min_est = v;
    res.max_est = v;
    res.argmin_r = Eigen::VectorXd::Ones(m);
    res.argmax_r = Eigen::VectorXd::Ones(m);
    return res;
  }

  const Affine aff = affine_weights(g);
  const double lo = 1.0 / lambda;
  double den_min = 0.0;
  double den_max = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double w_lo = aff.a[i] + aff.b[i] * lo;
    const double w_hi = aff.a[i] + aff.b[i] * lambda;
    den_min += std::min(w_lo, w_hi);
    den_max += std::max(w_lo, w_hi);
  }
  double sign = 1.0;
  if (!(den_min > 0.0)) {
    if (den_max < 0.0) {
      sign = -1.0;
    } else {
      const double inf = std::numeric_limits<double>::infinity();
      res.min_est = -inf;
      res.max_est = inf;
      res.argmin_r = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::quiet_NaN());
      res.argmax_r = res.argmin_r;
      res.unbounded = true;
      return res;
    }
  }

  const VertexSolve mx = dinkelbach(g, aff, lambda, sign, true);
  const VertexSolve mn = dinkelbach(g, aff, lambda, sign, false);
  res.iterations = mx.iterations + mn.iterations;
  if (!mx.converged || !mn.converged) {
    const double v = hajek_mean(g.gamma, g.y);
    res.min_est = v;
    res.max_est = v;
    res.argmin_r = Eigen::VectorXd::Ones(m);
    res.argmax_r = Eigen::VectorXd::Ones(m);
    res.no_convergence = true;
    return res;
  }
  res.max_est = mx.value;
  res.min_est = mn.value;
  res.argmax_r = to_odds_ratio(mx.rho, g.form);
  res.argmin_r = to_odds_ratio(mn.rho, g.form);
  return res;
}

Interval combine_ate(const Interval& mu1, const Interval& mu0) {
  return {mu1.lo - mu0.hi, mu1.hi - mu0.lo};
}

EstimandFits fit_estimand(const Dataset& ds, BalanceSpec spec, Estimand estimand) {
  if (estimand == Estimand::Ate) {
    spec.target_group = TargetGroup::TreatedToAll;
    EstimandFits fits{fit_weights(ds, spec), std::nullopt};
    spec.target_group = TargetGroup::ControlToAll;
    fits.secondary = fit_weights(ds, spec);
    return fits;
  }
  spec.target_group = target_group_for(estimand);
  return {fit_weights(ds, spec), std::nullopt};
}

EstimandProblem make_problem(const Dataset& ds, const EstimandFits& fits, Estimand estimand) {
  EstimandProblem prob;
  prob.estimand = estimand;
  prob.primary = weighted_group(ds, fits.primary);
  if (estimand == Estimand::Ate) {
    if (!fits.secondary) throw Error(ErrorCode::ConfigError, "ate needs a control fit");
    prob.secondary = weighted_group(ds, *fits.secondary);
  } else if (fits.primary.target_group != target_group_for(estimand)) {
    throw Error(ErrorCode::ConfigError, "weight fit does not match the estimand");
  }
  if (estimand == Estimand::Att) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.treated(i)) {
        total += ds.y[static_cast<Eigen::Index>(i)];
        ++count;
      }
    }
    if (count == 0) throw Error(ErrorCode::EmptyGroup, "no treated units");
    prob.treated_mean = total / static_cast<double>(count);
  }
  return prob;
}

double point_value(const EstimandProblem& prob) {
  const double primary = hajek_mean(prob.primary.gamma, prob.primary.y);
  switch (prob.estimand) {
    case Estimand::Att: return prob.treated_mean - primary;
    case Estimand::Ate: return primary - hajek_mean(prob.secondary->gamma, prob.secondary->y);
    default: return primary;
  }
}

GroupRanges group_ranges(const EstimandProblem& prob, double lambda) {
  GroupRanges out;
  const auto a = extrema(prob.primary, lambda);
  out.primary = {a.min_est, a.max_est};
  out.unbounded = a.unbounded;
  if (prob.secondary) {
    const auto b = extrema(*prob.secondary, lambda);
    out.secondary = Interval{b.min_est, b.max_est};
    out.unbounded = out.unbounded || b.unbounded;
  }
  return out;
}

Interval estimate_range(const EstimandProblem& prob, double lambda) {
  const GroupRanges r = group_ranges(prob, lambda);
  switch (prob.estimand) {
    case Estimand::Att: return {prob.treated_mean - r.primary.hi, prob.treated_mean - r.primary.lo};
    case Estimand::Ate: return combine_ate(r.primary, *r.secondary);
    default: return r.primary;
  }
}

nlohmann::json to_json(const ExtremaResult& r) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["min_est"] = r.min_est;
  j["max_est"] = r.max_est;
  j["argmin_r"] = vec(r.argmin_r);
  j["argmax_r"] = vec(r.argmax_r);
  j["iterations"] = r.iterations;
  j["unbounded"] = r.unbounded;
  j["no_convergence"] = r.no_convergence;
  return j;
}

}  // namespace balsens
