#include "balsens/balancer.hpp"
#include "balsens/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace balsens {

BalanceMethod parse_method(std::string_view text) {
  if (text == "sbw") return BalanceMethod::SbwDual;
  if (text == "entropy") return BalanceMethod::Entropy;
  throw Error(ErrorCode::ConfigError, "unknown balance method '" + std::string(text) + "'");
}

std::string_view to_string(BalanceMethod method) noexcept {
  return method == BalanceMethod::SbwDual ? "SBW_DUAL" : "ENTROPY";
}

namespace {

// Feature matrix of the reweighted group and target means of the features.
struct Problem {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> features;
  Eigen::MatrixXd phi;     // |G| x p, intercept column first
  Eigen::VectorXd target;  // p
  double n_target = 0.0;
};

Problem build_problem(const Dataset& ds, const BalanceSpec& spec) {
  Problem prob;
  const bool treated_group = group_is_treated(spec.target_group);
  prob.rows = group_rows(ds, treated_group);
  if (prob.rows.empty()) throw Error(ErrorCode::EmptyGroup, "reweighted group is empty");

  std::vector<std::size_t> target_rows;
  if (spec.target_group == TargetGroup::ControlToTreated) {
    target_rows = group_rows(ds, true);
  } else {
    target_rows.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) target_rows[i] = i;
  }
  if (target_rows.empty()) throw Error(ErrorCode::EmptyGroup, "target sample is empty");

  std::vector<std::size_t> candidates;
  if (spec.columns) {
    candidates = *spec.columns;
  } else {
    for (std::size_t j = 0; j < ds.dim(); ++j) candidates.push_back(j);
  }
  for (auto j : candidates) {
    if (j >= ds.dim()) throw Error(ErrorCode::ConfigError, "balance column out of range");
    const auto col = ds.x.col(static_cast<Eigen::Index>(j));
    if (col.size() > 0 && col.maxCoeff() - col.minCoeff() > 0.0) prob.features.push_back(j);
  }

  const auto m = static_cast<Eigen::Index>(prob.rows.size());
  const auto p = static_cast<Eigen::Index>(prob.features.size()) + 1;
  prob.phi.resize(m, p);
  prob.phi.col(0).setOnes();
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(prob.rows[static_cast<std::size_t>(k)]);
    for (Eigen::Index j = 1; j < p; ++j)
      prob.phi(k, j) = ds.x(i, static_cast<Eigen::Index>(prob.features[static_cast<std::size_t>(j - 1)]));
  }
  prob.target = Eigen::VectorXd::Zero(p);
  prob.target[0] = 1.0;
  for (auto i : target_rows)
    for (Eigen::Index j = 1; j < p; ++j)
      prob.target[j] +=
          ds.x(static_cast<Eigen::Index>(i),
               static_cast<Eigen::Index>(prob.features[static_cast<std::size_t>(j - 1)]));
  prob.target.tail(p - 1) /= static_cast<double>(target_rows.size());
  prob.n_target = static_cast<double>(target_rows.size());
  return prob;
}

WeightFit make_fit(const Problem& prob, const BalanceSpec& spec) {
  WeightFit fit;
  fit.method = spec.method;
  fit.target_group = spec.target_group;
  fit.rows = prob.rows;
  fit.features = prob.features;
  fit.target_size = static_cast<std::size_t>(prob.n_target);
  return fit;
}

// Smooth part of the SBW dual and its gradient.
class SbwDual {
 public:
  SbwDual(const Problem& prob, double tol) : prob_(prob), tol_(tol) {}

  double smooth(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd pos = (prob_.phi * beta).cwiseMax(0.0);
    return 0.5 * pos.squaredNorm() / prob_.n_target - prob_.target.dot(beta);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd pos = (prob_.phi * beta).cwiseMax(0.0);
    return prob_.phi.transpose() * pos / prob_.n_target - prob_.target;
  }

  double penalty(const Eigen::VectorXd& beta) const {
    return tol_ * beta.tail(beta.size() - 1).lpNorm<1>();
  }

  double objective(const Eigen::VectorXd& beta) const { return smooth(beta) + penalty(beta); }

  // Soft-thresholding on every coordinate except the intercept.
  Eigen::VectorXd prox(const Eigen::VectorXd& v, double step) const {
    Eigen::VectorXd out = v;
    const double thr = step * tol_;
    for (Eigen::Index j = 1; j < v.size(); ++j) {
      const double a = std::abs(v[j]) - thr;
      out[j] = a > 0.0 ? std::copysign(a, v[j]) : 0.0;
    }
    return out;
  }

  // Infinity norm of the minimum-norm element of the subdifferential.
  double stationarity(const Eigen::VectorXd& beta, const Eigen::VectorXd& grad) const {
    double worst = std::abs(grad[0]);
    for (Eigen::Index j = 1; j < beta.size(); ++j) {
      double s;
      if (beta[j] != 0.0) {
        s = std::abs(grad[j] + std::copysign(tol_, beta[j]));
      } else {
        s = std::max(std::abs(grad[j]) - tol_, 0.0);
      }
      worst = std::max(worst, s);
    }
    return worst;
  }

  // Newton step on the current active pattern: positive-weight units and
  // nonzero coefficients with their signs held fixed. Exact when the pattern
  // is the optimal one.
  std::optional<Eigen::VectorXd> refine(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd eta = prob_.phi * beta;
    std::vector<Eigen::Index> support{0};
    for (Eigen::Index j = 1; j < beta.size(); ++j)
      if (beta[j] != 0.0) support.push_back(j);
    const auto s = static_cast<Eigen::Index>(support.size());
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(s, s);
    Eigen::VectorXd row(s);
    std::size_t positive = 0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      if (eta[i] <= 0.0) continue;
      ++positive;
      for (Eigen::Index a = 0; a < s; ++a) row[a] = prob_.phi(i, support[static_cast<std::size_t>(a)]);
      h.selfadjointView<Eigen::Lower>().rankUpdate(row);
    }
    if (positive == 0) return std::nullopt;
    h = h.selfadjointView<Eigen::Lower>();
    h /= prob_.n_target;
    Eigen::VectorXd rhs(s);
    for (Eigen::Index a = 0; a < s; ++a) {
      const auto j = support[static_cast<std::size_t>(a)];
      rhs[a] = prob_.target[j] - (j == 0 ? 0.0 : std::copysign(tol_, beta[j]));
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
    const double dmax = ldlt.vectorD().maxCoeff();
    const double dmin = ldlt.vectorD().minCoeff();
    if (!(dmin > 1e-13 * dmax)) return std::nullopt;
    const Eigen::VectorXd sol = ldlt.solve(rhs);
    if (!sol.allFinite()) return std::nullopt;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(beta.size());
    for (Eigen::Index a = 0; a < s; ++a) out[support[static_cast<std::size_t>(a)]] = sol[a];
    return out;
  }

 private:
  const Problem& prob_;
  double tol_;
};

double log_sum_exp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

void finish_imbalance(const Problem& prob, WeightFit& fit) {
  const double total = fit.gamma.sum();
  if (total > 0.0) {
    fit.imbalance = prob.phi.transpose() * fit.gamma / prob.n_target - prob.target;
  } else {
    fit.imbalance = -prob.target;
  }
}

}  // namespace

WeightFit solve_sbw_dual(const Dataset& ds, const BalanceSpec& spec) {
  if (!(spec.tol >= 0.0)) throw Error(ErrorCode::ConfigError, "tol must be >= 0");
  const Problem prob = build_problem(ds, spec);
  const SbwDual dual(prob, spec.tol);
  const auto p = prob.phi.cols();

  // Lipschitz constant of the gradient: largest eigenvalue of phi'phi / N.
  const Eigen::MatrixXd gram = prob.phi.transpose() * prob.phi / prob.n_target;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  double lip = std::max(eig.eigenvalues().maxCoeff(), 1e-12);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd y = beta;
  double t = 1.0;
  double stat = std::numeric_limits<double>::infinity();
  std::size_t iter = 0;
  bool converged = false;

  auto try_refine = [&]() {
    auto cand = dual.refine(beta);
    if (!cand) return false;
    const Eigen::VectorXd g = dual.gradient(*cand);
    const double s = dual.stationarity(*cand, g);
    if (s <= spec.stationarity_tol || dual.objective(*cand) < dual.objective(beta)) {
      beta = *cand;
      y = beta;
      t = 1.0;
      stat = s;
      return s <= spec.stationarity_tol;
    }
    return false;
  };

  while (iter < spec.max_iterations) {
    ++iter;
    const Eigen::VectorXd gy = dual.gradient(y);
    const double fy = dual.smooth(y);
    Eigen::VectorXd next;
    for (int bt = 0; bt < 60; ++bt) {
      next = dual.prox(y - gy / lip, 1.0 / lip);
      const Eigen::VectorXd diff = next - y;
      if (dual.smooth(next) <= fy + gy.dot(diff) + 0.5 * lip * diff.squaredNorm() + 1e-15 * std::abs(fy))
        break;
      lip *= 2.0;
    }
    // Gradient-based restart keeps the momentum from overshooting.
    if ((y - next).dot(next - beta) > 0.0) {
      t = 1.0;
      y = next;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = next + ((t - 1.0) / t_next) * (next - beta);
      t = t_next;
    }
    beta = next;

    if (iter % 5 == 0 || iter == 1) {
      stat = dual.stationarity(beta, dual.gradient(beta));
      if (stat <= spec.stationarity_tol) {
        converged = true;
        break;
      }
    }
    if (iter % 20 == 0 && try_refine()) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    stat = dual.stationarity(beta, dual.gradient(beta));
    converged = stat <= spec.stationarity_tol || try_refine();
  }

  WeightFit fit = make_fit(prob, spec);
  fit.beta = beta;
  fit.gamma = (prob.phi * beta).cwiseMax(0.0);
  fit.objective = dual.objective(beta);
  fit.stationarity = stat;
  fit.iterations = iter;
  finish_imbalance(prob, fit);
  if (beta.lpNorm<Eigen::Infinity>() > spec.beta_cap) {
    fit.warnings.push_back("dual coefficients exceed cap; balance constraints may be near-infeasible");
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "sbw dual did not converge after " << iter
        << " iterations (subgradient norm " << stat << ")";
    throw Error(ErrorCode::NoConvergence, msg.str());
  }
  return fit;
}

WeightFit solve_entropy(const Dataset& ds, const BalanceSpec& spec) {
  const Problem prob = build_problem(ds, spec);
  const auto m = prob.phi.rows();
  const auto p = prob.phi.cols();

  // Covariate features centered at the target; constant-in-group features
  // that already sit at the target carry no constraint.
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 1; j < p; ++j) {
    const auto col = prob.phi.col(j);
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    const double tgt = prob.target[j];
    const double scale = std::max({1.0, std::abs(lo), std::abs(hi)});
    const std::string& name = ds.names[prob.features[static_cast<std::size_t>(j - 1)]];
    if (hi - lo <= 1e-14 * scale) {
      if (std::abs(tgt - lo) <= 1e-12 * scale) continue;
      throw Error(ErrorCode::Infeasible, "entropy balancing: feature '" + name +
                                             "' is constant in the group but not at the target");
    }
    if (!(tgt > lo && tgt < hi))
      throw Error(ErrorCode::Infeasible, "entropy balancing: target mean of '" + name +
                                             "' lies outside the group's range");
    active.push_back(j);
  }
  const auto k = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd xc(m, k);
  for (Eigen::Index a = 0; a < k; ++a)
    xc.col(a) = prob.phi.col(active[static_cast<std::size_t>(a)]).array() -
                prob.target[active[static_cast<std::size_t>(a)]];

  auto dual_value = [&](const Eigen::VectorXd& theta) { return log_sum_exp(xc * theta); };
  auto gradient_norm = [&](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd s = xc * theta;
    Eigen::VectorXd w = (s.array() - s.maxCoeff()).exp();
    w /= w.sum();
    return (xc.transpose() * w).lpNorm<Eigen::Infinity>();
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd prob_w(m);
  const double grad_tol = std::min(1e-11, spec.stationarity_tol);
  const std::size_t max_newton = 500;
  std::size_t iter = 0;
  double stat = 0.0;
  bool converged = false;
  int stalled = 0;
  for (;;) {
    const Eigen::VectorXd s = xc * theta;
    prob_w = (s.array() - s.maxCoeff()).exp();
    prob_w /= prob_w.sum();
    grad = xc.transpose() * prob_w;
    const double prev_stat = stat;
    stat = k > 0 ? grad.lpNorm<Eigen::Infinity>() : 0.0;
    // Stop at the strict tolerance, or once Newton steps stop paying off
    // within the requested one (rounding floor on resampled duplicates).
    stalled = iter > 0 && stat > 0.5 * prev_stat ? stalled + 1 : 0;
    if (stat <= grad_tol || (stalled >= 2 && stat <= spec.stationarity_tol)) {
      converged = true;
      break;
    }
    if (iter >= max_newton || theta.lpNorm<Eigen::Infinity>() > 1e6) break;
    ++iter;
    Eigen::MatrixXd hess = xc.transpose() * prob_w.asDiagonal() * xc - grad * grad.transpose();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    Eigen::VectorXd step = ldlt.solve(-grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(grad) >= 0.0) {
      const double ridge = 1e-10 * std::max(1.0, hess.diagonal().maxCoeff());
      hess.diagonal().array() += ridge;
      step = hess.ldlt().solve(-grad);
      if (!step.allFinite() || step.dot(grad) >= 0.0) step = -grad;
    }
    const double f0 = dual_value(theta);
    double alpha = 1.0;
    const double slope = grad.dot(step);
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = theta + alpha * step;
      // Near the optimum the dual value is flat to rounding; a smaller
      // gradient is then the better acceptance test.
      if (dual_value(cand) <= f0 + 1e-4 * alpha * slope || gradient_norm(cand) < 0.5 * stat) {
        theta = cand;
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) {
      // At machine precision already if the full step changes nothing.
      if (stat <= spec.stationarity_tol) converged = true;
      break;
    }
  }
  if (!converged) {
    Eigen::Index worst = 0;
    if (k > 0) grad.cwiseAbs().maxCoeff(&worst);
    const std::string name =
        k > 0 ? ds.names[prob.features[static_cast<std::size_t>(active[static_cast<std::size_t>(worst)] - 1)]]
              : std::string("intercept");
    throw Error(ErrorCode::Infeasible, "entropy balancing diverged after " + std::to_string(iter) +
                                           " Newton steps (gradient " + format_double(stat) + "); worst feature '" + name + "'");
  }

  WeightFit fit = make_fit(prob, spec);
  fit.gamma = prob.n_target * prob_w;
  fit.beta = Eigen::VectorXd::Zero(p);
  const double lse = dual_value(theta);
  double shift = std::log(prob.n_target) - lse;
  for (Eigen::Index a = 0; a < k; ++a) {
    const auto j = active[static_cast<std::size_t>(a)];
    fit.beta[j] = theta[a];
    shift -= theta[a] * prob.target[j];
  }
  fit.beta[0] = shift;
  fit.objective = lse;
  fit.stationarity = stat;
  fit.iterations = iter;
  finish_imbalance(prob, fit);
  return fit;
}

WeightFit fit_weights(const Dataset& ds, const BalanceSpec& spec) {
  return spec.method == BalanceMethod::SbwDual ? solve_sbw_dual(ds, spec) : solve_entropy(ds, spec);
}

double weight_at(const WeightFit& fit, const Eigen::Ref<const Eigen::RowVectorXd>& x_row) {
  double eta = fit.beta[0];
  for (std::size_t j = 0; j < fit.features.size(); ++j)
    eta += fit.beta[static_cast<Eigen::Index>(j + 1)] * x_row[static_cast<Eigen::Index>(fit.features[j])];
  return fit.method == BalanceMethod::SbwDual ? std::max(eta, 0.0) : std::exp(eta);
}

double hajek_mean(const Eigen::Ref<const Eigen::VectorXd>& weights,
                  const Eigen::Ref<const Eigen::VectorXd>& values) {
  const double total = weights.sum();
  if (total == 0.0) throw Error(ErrorCode::ZeroWeightSum, "weights sum to zero");
  return weights.dot(values) / total;
}

namespace {

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(rows[k])];
  return out;
}

PointEstimate group_estimate(const Dataset& ds, const WeightFit& fit) {
  const Eigen::VectorXd y = gather(ds.y, fit.rows);
  PointEstimate est;
  est.hajek = hajek_mean(fit.gamma, y);
  est.raw = fit.gamma.dot(y) / static_cast<double>(fit.rows.size());
  return est;
}

}  // namespace

PointEstimate point_estimate(const Dataset& ds, const WeightFit& fit, Estimand estimand) {
  if (estimand == Estimand::Ate)
    throw Error(ErrorCode::ConfigError, "ate needs a treated and a control fit");
  if (fit.target_group != target_group_for(estimand))
    throw Error(ErrorCode::ConfigError, "weight fit does not match the estimand's target group");
  PointEstimate est = group_estimate(ds, fit);
  if (estimand == Estimand::Att) {
    const auto treated = group_rows(ds, true);
    const double mean_treated = gather(ds.y, treated).mean();
    est.hajek = mean_treated - est.hajek;
    est.raw = mean_treated - est.raw;
  }
  return est;
}

PointEstimate point_estimate_ate(const Dataset& ds, const WeightFit& treated_fit,
                                 const WeightFit& control_fit) {
  if (treated_fit.target_group != TargetGroup::TreatedToAll ||
      control_fit.target_group != TargetGroup::ControlToAll)
    throw Error(ErrorCode::ConfigError, "ate needs treated_to_all and control_to_all fits");
  const auto a = group_estimate(ds, treated_fit);
  const auto b = group_estimate(ds, control_fit);
  return {a.hajek - b.hajek, a.raw - b.raw};
}

nlohmann::json to_json(const WeightFit& fit) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["method"] = to_string(fit.method);
  j["target_group"] = to_string(fit.target_group);
  j["rows"] = fit.rows;
  j["weights"] = vec(fit.gamma);
  j["beta"] = vec(fit.beta);
  j["imbalance"] = vec(fit.imbalance);
  j["objective"] = fit.objective;
  j["stationarity"] = fit.stationarity;
  j["iterations"] = fit.iterations;
  j["features"] = fit.features;
  j["warnings"] = fit.warnings;
  return j;
}

}  // namespace balsens
