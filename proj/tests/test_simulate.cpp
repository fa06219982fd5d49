#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "balsens/simulate.hpp"

using namespace balsens;

TEST_CASE("generate is deterministic") {
  DGPSpec spec;
  spec.n = 500;
  Engine a = make_engine(3, 1, 0);
  Engine b = make_engine(3, 1, 0);
  const SimulatedData x = generate(spec, a);
  const SimulatedData y = generate(spec, b);
  CHECK(x.data.y == y.data.y);
  CHECK(x.data.x == y.data.x);
  CHECK(x.data.z == y.data.z);
  CHECK((x.y1 - x.y0).isApproxToConstant(0.2));
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    CHECK(x.data.y[k] == (x.data.treated(i) ? x.y1[k] : x.y0[k]));
  }
}

TEST_CASE("treated fraction is about one half") {
  DGPSpec spec;
  spec.n = 10000;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Engine rng = make_engine(s, 1, 0);
    const SimulatedData d = generate(spec, rng);
    const double frac = static_cast<double>(d.data.n1) / static_cast<double>(d.data.size());
    CHECK(std::abs(frac - 0.5) <= 0.02);
  }
}

TEST_CASE("outcome regression recovers the design coefficients") {
  DGPSpec spec;
  spec.n = 20000;
  Engine rng = make_engine(9, 1, 0);
  const SimulatedData d = generate(spec, rng);
  const auto n = static_cast<Eigen::Index>(spec.n);
  Eigen::MatrixXd a(n, 4);
  a.col(0).setOnes();
  a.col(1) = d.data.z;
  a.col(2) = d.data.x.col(0);
  a.col(3) = d.data.x.col(1);
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(d.data.y);
  const Eigen::VectorXd resid = d.data.y - a * coef;
  const double s2 = resid.squaredNorm() / static_cast<double>(n - 4);
  const Eigen::VectorXd se = (s2 * (a.transpose() * a).inverse().diagonal()).array().sqrt();
  CHECK(std::abs(coef[1] - 0.2) <= 3 * se[1]);
  CHECK(std::abs(coef[2] - 0.5) <= 3 * se[2]);
  CHECK(std::abs(coef[3] - 0.5) <= 3 * se[3]);
}

TEST_CASE("coverage experiment: small runs") {
  DGPSpec spec;
  spec.n = 200;
  BootstrapPlan plan;
  plan.b_reps = 50;
  plan.workers = 2;
  SimSettings settings;
  const CoverageReport one = coverage_experiment(spec, 1, plan, 0.05, settings);
  CHECK((one.coverage[0] == 0.0 || one.coverage[0] == 1.0));

  const CoverageReport rep = coverage_experiment(spec, 12, plan, 0.05, settings);
  REQUIRE(rep.lambdas.size() == 2);
  CHECK(rep.coverage[1] >= rep.coverage[0]);
  CHECK(rep.mean_width[1] >= rep.mean_width[0]);
  for (const auto& run : rep.runs) CHECK(run.ci[1].contains(run.ci[0]));

  plan.workers = 1;
  const CoverageReport again = coverage_experiment(spec, 12, plan, 0.05, settings);
  std::ostringstream a, b;
  write_coverage_csv(a, rep);
  write_coverage_csv(b, again);
  CHECK(a.str() == b.str());
}

TEST_CASE("split comparison smoke test") {
  DGPSpec spec;
  spec.n = 100;
  BootstrapPlan plan;
  plan.b_reps = 40;
  plan.max_drop_fraction = 0.2;
  const SplitReport r = split_compare(spec, plan, SimSettings{});
  CHECK(r.full.size() + r.dropped_full == 40);
  CHECK(r.split.size() + r.dropped_split == 40);
  CHECK(r.full_summary.deciles.size() == 9);
  CHECK(r.split_summary.sd > 0.0);

  spec.n = 101;
  try {
    split_compare(spec, plan, SimSettings{});
    FAIL("expected ODD_N");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::OddN);
  }
}

TEST_CASE("summaries") {
  const DistributionSummary s = summarize({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  CHECK(s.mean == 5.5);
  CHECK(s.deciles.front() == 1.0);
  CHECK(s.deciles.back() == 9.0);
  CHECK(std::abs(s.sd - std::sqrt(55.0 / 6.0)) < 1e-14);
}
