#include "balsens/amplification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "balsens/text_io.hpp"

namespace balsens {

namespace {

struct Tilt {
  double mean = 0.0;      // tilted mean of u
  double variance = 0.0;  // tilted variance of u
};

// Tilted moments of u under weights gamma * exp(s * u).
Tilt tilted(const Eigen::VectorXd& log_gamma, const Eigen::VectorXd& u, double s) {
  const Eigen::VectorXd e = log_gamma + s * u;
  const double mx = e.maxCoeff();
  const Eigen::ArrayXd w = (e.array() - mx).exp();
  const double total = w.sum();
  Tilt t;
  t.mean = (w * u.array()).sum() / total;
  t.variance = (w * (u.array() - t.mean).square()).sum() / total;
  return t;
}

}  // namespace

OracleFit oracle_weights(const Eigen::Ref<const Eigen::VectorXd>& gamma_hat,
                         const Eigen::Ref<const Eigen::VectorXd>& y, double target) {
  if (gamma_hat.size() != y.size() || y.size() == 0)
    throw Error(ErrorCode::ConfigError, "oracle weights need one outcome per weight");
  if ((gamma_hat.array() < 0.0).any()) throw Error(ErrorCode::Domain, "weights must be nonnegative");
  OracleFit out;
  out.target = target;

  // Only positively weighted units can carry mass after tilting.
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (gamma_hat[i] > 0.0) support.push_back(i);
  if (support.empty()) throw Error(ErrorCode::ZeroWeightSum, "weights sum to zero");

  const auto m = static_cast<Eigen::Index>(support.size());
  Eigen::VectorXd u(m);
  Eigen::VectorXd log_gamma(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    u[k] = y[support[static_cast<std::size_t>(k)]] - target;
    log_gamma[k] = std::log(gamma_hat[support[static_cast<std::size_t>(k)]]);
  }
  const double scale = std::max(u.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const Eigen::VectorXd us = u / scale;
  const double tol = 1e-12;

  double s = 0.0;  // tilt in scaled units
  double f0 = tilted(log_gamma, us, 0.0).mean;
  if (std::abs(f0) > tol) {
    if (!(us.minCoeff() < 0.0 && us.maxCoeff() > 0.0))
      throw Error(ErrorCode::Infeasible, "oracle target lies outside the range of the group outcomes");
    // Bracket the root of the increasing tilted mean, then safeguarded Newton.
    double lo = 0.0;
    double hi = 0.0;
    double step = 1.0;
    if (f0 < 0.0) {
      hi = step;
      while (tilted(log_gamma, us, hi).mean < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e8) throw Error(ErrorCode::Infeasible, "oracle tilt diverged");
      }
    } else {
      lo = -step;
      while (tilted(log_gamma, us, lo).mean > 0.0) {
        hi = lo;
        lo *= 2.0;
        if (lo < -1e8) throw Error(ErrorCode::Infeasible, "oracle tilt diverged");
      }
    }
    s = 0.5 * (lo + hi);
    bool done = false;
    for (int it = 0; it < 500; ++it) {
      const Tilt t = tilted(log_gamma, us, s);
      if (std::abs(t.mean) <= tol) {
        done = true;
        break;
      }
      if (t.mean < 0.0) lo = s; else hi = s;
      double next = t.variance > 0.0 ? s - t.mean / t.variance : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (next == s) {
        done = true;
        break;
      }
      s = next;
    }
    if (!done) throw Error(ErrorCode::NoConvergence, "oracle tilt root-finding did not converge");
  }

  out.tilt = s / scale;
  const Eigen::VectorXd e = log_gamma + s * us;
  const double mx = e.maxCoeff();
  Eigen::VectorXd w = (e.array() - mx).exp();
  w *= gamma_hat.sum() / w.sum();
  out.oracle_gamma = Eigen::VectorXd::Zero(y.size());
  for (Eigen::Index k = 0; k < m; ++k) out.oracle_gamma[support[static_cast<std::size_t>(k)]] = w[k];
  out.achieved_target = hajek_mean(out.oracle_gamma, y);
  double kl = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = support[static_cast<std::size_t>(k)];
    kl += out.oracle_gamma[i] * std::log(out.oracle_gamma[i] / gamma_hat[i]);
  }
  out.kl = kl;
  return out;
}

OracleFit oracle_weights(const Dataset& ds, const Eigen::VectorXd& potential, const WeightFit& fit,
                         Estimand estimand) {
  if (potential.size() != static_cast<Eigen::Index>(ds.size()))
    throw Error(ErrorCode::ConfigError, "one potential outcome per row is required");
  const TargetGroup group = target_group_for(estimand);
  if (fit.target_group != group)
    throw Error(ErrorCode::ConfigError, "weight fit does not match the estimand");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (group == TargetGroup::ControlToTreated && !ds.treated(i)) continue;
    total += potential[static_cast<Eigen::Index>(i)];
    ++count;
  }
  Eigen::VectorXd y(static_cast<Eigen::Index>(fit.rows.size()));
  for (std::size_t k = 0; k < fit.rows.size(); ++k)
    y[static_cast<Eigen::Index>(k)] = potential[static_cast<Eigen::Index>(fit.rows[k])];
  return oracle_weights(fit.gamma, y, total / static_cast<double>(count));
}

Interval error_bounds(const EstimandProblem& prob, double lambda) {
  if (prob.estimand == Estimand::Ate) {
    const double pe = point_value(prob);
    const Interval r = estimate_range(prob, lambda);
    return {r.lo - pe, r.hi - pe};
  }
  const double pe = hajek_mean(prob.primary.gamma, prob.primary.y);
  const ExtremaResult ex = extrema(prob.primary, lambda);
  return {ex.min_est - pe, ex.max_est - pe};
}

double error_magnitude(const Interval& b) { return std::max(std::abs(b.lo), std::abs(b.hi)); }

namespace {

std::vector<std::size_t> target_rows_of(const Dataset& ds, TargetGroup group) {
  if (group == TargetGroup::ControlToTreated) return group_rows(ds, true);
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

double mean_over(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  double s = 0.0;
  for (auto i : rows) s += v[static_cast<Eigen::Index>(i)];
  return s / static_cast<double>(rows.size());
}

double weighted_over(const Eigen::VectorXd& v, const WeightFit& fit) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < fit.rows.size(); ++k) {
    const double g = fit.gamma[static_cast<Eigen::Index>(k)];
    num += g * v[static_cast<Eigen::Index>(fit.rows[k])];
    den += g;
  }
  if (den == 0.0) throw Error(ErrorCode::ZeroWeightSum, "weights sum to zero");
  return num / den;
}

}  // namespace

double signed_imbalance(const Dataset& ds, const WeightFit& fit, const Eigen::VectorXd& values) {
  return mean_over(values, target_rows_of(ds, fit.target_group)) - weighted_over(values, fit);
}

Decomposition decompose(const Dataset& ds, const WeightFit& fit) {
  Decomposition out;
  const auto targets = target_rows_of(ds, fit.target_group);
  const auto n = static_cast<Eigen::Index>(ds.size());

  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < ds.dim(); ++j) {
    const auto c = ds.x.col(static_cast<Eigen::Index>(j));
    if (c.maxCoeff() - c.minCoeff() > 0.0) {
      cols.push_back(j);
    } else {
      out.warnings.push_back("covariate '" + ds.names[j] + "' is constant and has no benchmark");
    }
  }

  // Outcome regression within the reweighted group on all covariates jointly.
  // Columns constant inside the group cannot be estimated and get beta_hat 0.
  std::vector<std::size_t> reg_cols;
  for (auto j : cols) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto i : fit.rows) {
      const double v = ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi > lo) {
      reg_cols.push_back(j);
    } else {
      out.warnings.push_back("covariate '" + ds.names[j] + "' is constant in the reweighted group; beta_hat set to 0");
    }
  }
  const auto m = static_cast<Eigen::Index>(fit.rows.size());
  const auto p = static_cast<Eigen::Index>(reg_cols.size()) + 1;
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
  if (m < p)
    throw Error(ErrorCode::RankDeficient, "too few units in the reweighted group for the outcome regression");
  {
    Eigen::MatrixXd design(m, p);
    Eigen::VectorXd yg(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto i = static_cast<Eigen::Index>(fit.rows[static_cast<std::size_t>(k)]);
      design(k, 0) = 1.0;
      for (Eigen::Index a = 1; a < p; ++a)
        design(k, a) = ds.x(i, static_cast<Eigen::Index>(reg_cols[static_cast<std::size_t>(a - 1)]));
      yg[k] = ds.y[i];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
      throw Error(ErrorCode::RankDeficient, "covariate matrix of the outcome regression is singular");
    coef = qr.solve(yg);
  }

  out.u.resize(n, static_cast<Eigen::Index>(cols.size()));
  out.w.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto j = static_cast<Eigen::Index>(cols[c]);
    const Eigen::VectorXd a = ds.x.col(j);
    // Regression on an intercept and Z: fitted values are the two group means.
    double s1 = 0.0;
    double s0 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) (ds.z[i] != 0.0 ? s1 : s0) += a[i];
    const double m1 = s1 / static_cast<double>(ds.n1 ? ds.n1 : 1);
    const double m0 = s0 / static_cast<double>(ds.n0 ? ds.n0 : 1);
    Eigen::VectorXd u(n);
    for (Eigen::Index i = 0; i < n; ++i) u[i] = ds.z[i] != 0.0 ? m1 : m0;
    const Eigen::VectorXd w = a - u;
    out.u.col(static_cast<Eigen::Index>(c)) = u;
    out.w.col(static_cast<Eigen::Index>(c)) = w;

    Benchmark b;
    b.name = ds.names[cols[c]];
    b.column = cols[c];
    const double target_mean = mean_over(a, targets);
    b.delta_pre_signed = target_mean - mean_over(a, fit.rows);
    b.delta_post_signed = target_mean - weighted_over(a, fit);
    b.delta_pre = std::abs(b.delta_pre_signed);
    b.delta_post = std::abs(b.delta_post_signed);
    b.w_imbalance = std::abs(signed_imbalance(ds, fit, w));
    const auto it = std::find(reg_cols.begin(), reg_cols.end(), cols[c]);
    if (it != reg_cols.end()) b.beta_hat = coef[static_cast<Eigen::Index>(it - reg_cols.begin()) + 1];
    out.benchmarks.push_back(std::move(b));
  }
  return out;
}

std::vector<ContourPoint> convex_hull(std::vector<ContourPoint> pts) {
  std::sort(pts.begin(), pts.end(), [](const ContourPoint& a, const ContourPoint& b) {
    return a.delta < b.delta || (a.delta == b.delta && a.beta < b.beta);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const ContourPoint& a, const ContourPoint& b) {
                          return a.delta == b.delta && a.beta == b.beta;
                        }),
            pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const ContourPoint& o, const ContourPoint& a, const ContourPoint& b) {
    return (a.delta - o.delta) * (b.beta - o.beta) - (a.beta - o.beta) * (b.delta - o.delta);
  };
  std::vector<ContourPoint> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = pts.rbegin() + 1; it != pts.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0.0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return hull;
}

double max_product(std::span<const ContourPoint> poly) {
  double best = -std::numeric_limits<double>::infinity();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    best = std::max(best, p.delta * p.beta);
    const double dx = q.delta - p.delta;
    const double dy = q.beta - p.beta;
    const double quad = dx * dy;
    if (quad < 0.0) {
      const double s = -(p.delta * dy + p.beta * dx) / (2.0 * quad);
      if (s > 0.0 && s < 1.0) best = std::max(best, (p.delta + s * dx) * (p.beta + s * dy));
    }
  }
  return best;
}

AmplificationResult contour(double error_bound, std::size_t grid, std::span<const Benchmark> benchmarks) {
  if (!(error_bound >= 0.0) || !std::isfinite(error_bound))
    throw Error(ErrorCode::Domain, "error bound must be finite and >= 0");
  if (grid < 2) throw Error(ErrorCode::ConfigError, "contour grid needs at least 2 points");
  AmplificationResult res;
  res.error_bound = error_bound;
  res.benchmarks.assign(benchmarks.begin(), benchmarks.end());

  double max_beta = 0.0;
  double max_post = 0.0;
  std::vector<ContourPoint> region{{0.0, 0.0}};
  for (const auto& b : benchmarks) {
    const double beta = std::abs(b.beta_hat);
    region.push_back({b.delta_post, beta});
    max_beta = std::max(max_beta, beta);
    max_post = std::max(max_post, b.delta_post);
  }
  region.push_back({0.0, max_beta});
  region.push_back({max_post, 0.0});
  res.hull = convex_hull(std::move(region));

  if (error_bound == 0.0) {
    res.no_confounding_needed = true;
    return res;
  }

  std::vector<double> anchors;
  for (const auto& b : benchmarks) {
    if (b.delta_pre > 0.0) anchors.push_back(b.delta_pre);
    if (b.delta_post > 0.0) anchors.push_back(b.delta_post);
  }
  if (max_beta > 0.0) anchors.push_back(error_bound / max_beta);
  if (anchors.empty()) anchors.push_back(std::sqrt(error_bound));
  const auto [lo_it, hi_it] = std::minmax_element(anchors.begin(), anchors.end());
  const double lo = *lo_it / 2.0;
  const double hi = *hi_it * 2.0;
  const double ratio = std::log(hi / lo);
  res.curve.reserve(grid);
  for (std::size_t k = 0; k < grid; ++k) {
    const double delta = lo * std::exp(ratio * static_cast<double>(k) / static_cast<double>(grid - 1));
    res.curve.push_back({delta, error_bound / delta});
  }
  return res;
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::Sensitive: return "SENSITIVE";
    case Verdict::Ambiguous: return "AMBIGUOUS";
    case Verdict::Robust: return "ROBUST";
  }
  return "?";
}

Verdict classify(const AmplificationResult& res) {
  if (res.curve.empty()) throw Error(ErrorCode::Domain, "classification needs a nonempty error curve");
  if (res.benchmarks.empty()) throw Error(ErrorCode::NoBenchmarks, "no covariate benchmarks available");
  if (max_product(res.hull) >= res.error_bound) return Verdict::Sensitive;
  double max_pre = 0.0;
  double max_beta = 0.0;
  for (const auto& b : res.benchmarks) {
    max_pre = std::max(max_pre, b.delta_pre);
    max_beta = std::max(max_beta, std::abs(b.beta_hat));
  }
  return max_pre * max_beta < res.error_bound ? Verdict::Robust : Verdict::Ambiguous;
}

void write_contour_csv(std::ostream& out, const AmplificationResult& res) {
  out << "delta,beta\n";
  for (const auto& p : res.curve) out << format_double(p.delta) << ',' << format_double(p.beta) << '\n';
}

void write_benchmarks_csv(std::ostream& out, std::span<const Benchmark> benchmarks) {
  out << "name,delta_pre,delta_post,beta_hat\n";
  for (const auto& b : benchmarks) {
    out << b.name << ',' << format_double(b.delta_pre) << ',' << format_double(b.delta_post) << ','
        << format_double(b.beta_hat) << '\n';
  }
}

void write_hull_csv(std::ostream& out, const AmplificationResult& res) {
  out << "delta,beta\n";
  for (const auto& p : res.hull) out << format_double(p.delta) << ',' << format_double(p.beta) << '\n';
}

nlohmann::json to_json(const OracleFit& fit) {
  nlohmann::json j;
  j["oracle_gamma"] = std::vector<double>(fit.oracle_gamma.data(), fit.oracle_gamma.data() + fit.oracle_gamma.size());
  j["tilt"] = fit.tilt;
  j["target"] = fit.target;
  j["achieved_target"] = fit.achieved_target;
  j["kl"] = fit.kl;
  return j;
}

}  // namespace balsens
