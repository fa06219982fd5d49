#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "balsens/sensitivity.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace balsens;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

WeightedGroup group(std::vector<double> y, std::vector<double> g, ShiftForm form) {
  WeightedGroup w;
  w.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  w.gamma = Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  w.form = form;
  return w;
}

bool close(double a, double b, double rel) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("shift weights") {
  const Eigen::VectorXd g = Eigen::Vector3d(3.0, 1.0, 0.5);
  const ShiftSpec spec{2.0, Estimand::MeanTreated};
  CHECK(shift_weights(g, Eigen::VectorXd::Zero(3), spec) == g);
  const Eigen::VectorXd h = Eigen::VectorXd::Constant(3, std::log(2.0));
  const Eigen::VectorXd w = shift_weights(g, h, spec);
  CHECK_THAT(w[0], WithinAbs(5.0, 1e-14));
  CHECK(w[1] == 1.0);
  const Eigen::VectorXd w2 = shift_weights(g, -h, spec);
  CHECK(w2[1] == 1.0);

  const ShiftSpec att{2.0, Estimand::Att};
  const Eigen::VectorXd wa = shift_weights(g, h, att);
  CHECK_THAT(wa[0], WithinAbs(1.5, 1e-14));

  const Eigen::VectorXd too_big = Eigen::VectorXd::Constant(3, std::log(2.0) + 1e-9);
  try {
    shift_weights(g, too_big, spec);
    FAIL("expected H_OUT_OF_RANGE");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::HOutOfRange);
  }
}

TEST_CASE("shifted estimate") {
  const WeightedGroup g = group({1.0, 2.0, 7.0}, {2.0, 1.5, 4.0}, ShiftForm::InverseProbability);
  const ShiftSpec spec{3.0, Estimand::MeanTreated};
  CHECK(shifted_estimate(g, Eigen::VectorXd::Zero(3), spec) == hajek_mean(g.gamma, g.y));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-std::log(3.0), std::log(3.0));
  for (int k = 0; k < 100; ++k) {
    const Eigen::VectorXd h = Eigen::Vector3d(u(rng), u(rng), u(rng));
    const Eigen::VectorXd w = shift_weights(g.gamma, h, spec);
    CHECK_THAT(shifted_estimate(g, h, spec), WithinRel(w.dot(g.y) / w.sum(), 1e-14));
  }
  const WeightedGroup single = group({4.2}, {3.0}, ShiftForm::InverseProbability);
  CHECK_THAT(shifted_estimate(single, Eigen::VectorXd::Constant(1, 0.5), spec), WithinAbs(4.2, 1e-14));
}

TEST_CASE("extrema: worked examples") {
  const auto mu1 = extrema(group({0.0, 1.0}, {2.0, 2.0}, ShiftForm::InverseProbability), 2.0);
  CHECK_THAT(mu1.min_est, WithinAbs(1.0 / 3.0, 1e-12));
  CHECK_THAT(mu1.max_est, WithinAbs(2.0 / 3.0, 1e-12));
  const auto patt = extrema(group({0.0, 1.0}, {1.0, 1.0}, ShiftForm::Odds), 2.0);
  CHECK_THAT(patt.min_est, WithinAbs(0.2, 1e-12));
  CHECK_THAT(patt.max_est, WithinAbs(0.8, 1e-12));
  for (double r : mu1.argmax_r) CHECK((std::abs(r - 2.0) < 1e-15 || std::abs(r - 0.5) < 1e-15));
}

TEST_CASE("extrema: lambda 1 collapses to the point estimate") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    const auto m = static_cast<std::size_t>(1 + k % 12);
    WeightedGroup g;
    g.y = gen::normal_vector(rng, m, 3.0);
    g.gamma = gen::uniform_vector(rng, m, 0.2, 5.0);
    g.form = k % 2 ? ShiftForm::Odds : ShiftForm::InverseProbability;
    const auto r = extrema(g, 1.0);
    const double pe = hajek_mean(g.gamma, g.y);
    CHECK_THAT(r.min_est, WithinAbs(pe, 1e-10));
    CHECK_THAT(r.max_est, WithinAbs(pe, 1e-10));
  }
}

TEST_CASE("extrema: matches vertex enumeration") {
  std::mt19937_64 rng(77);
  const double lambdas[] = {1.5, 2.0, 5.0};
  for (int k = 0; k < 300; ++k) {
    const auto m = static_cast<std::size_t>(1 + k % 10);
    WeightedGroup g;
    g.y = gen::normal_vector(rng, m, 2.0);
    g.gamma = gen::uniform_vector(rng, m, 0.2, 5.0);
    g.form = k % 3 == 0 ? ShiftForm::Odds : ShiftForm::InverseProbability;
    const double lambda = lambdas[k % 3];
    const auto ref = oracle::vertex_enumeration(g.y, g.gamma, lambda, g.form == ShiftForm::InverseProbability);
    const auto got = extrema(g, lambda);
    CHECK(got.unbounded == ref.unbounded);
    CHECK(close(got.min_est, ref.min, 1e-8));
    CHECK(close(got.max_est, ref.max, 1e-8));
    CHECK_FALSE(got.no_convergence);
  }
}

TEST_CASE("extrema: nested in lambda") {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 100; ++k) {
    WeightedGroup g;
    g.y = gen::normal_vector(rng, 15);
    g.gamma = gen::uniform_vector(rng, 15, 1.0, 4.0);
    double lo = hajek_mean(g.gamma, g.y);
    double hi = lo;
    for (double l : {1.0, 1.2, 1.5, 2.0, 3.0, 5.0}) {
      const auto r = extrema(g, l);
      CHECK(r.min_est <= lo);
      CHECK(r.max_est >= hi);
      lo = r.min_est;
      hi = r.max_est;
    }
  }
}

TEST_CASE("extrema: units with unit weight do not matter") {
  std::mt19937_64 rng(6);
  const ShiftSpec spec{2.5, Estimand::MeanTreated};
  for (int k = 0; k < 50; ++k) {
    WeightedGroup g;
    g.y = gen::normal_vector(rng, 8);
    g.gamma = gen::uniform_vector(rng, 8, 1.0, 4.0);
    g.gamma[3] = 1.0;
    const auto r = extrema(g, 2.5);
    Eigen::VectorXd h = r.argmax_r.array().log();
    h[3] = -h[3];
    CHECK_THAT(shifted_estimate(g, h, spec), WithinRel(r.max_est, 1e-12));
    const auto ref = oracle::vertex_enumeration(g.y, g.gamma, 2.5, true);
    CHECK(close(r.max_est, ref.max, 1e-10));
  }
}

TEST_CASE("extrema: affine equivariance") {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 100; ++k) {
    WeightedGroup g;
    g.y = gen::normal_vector(rng, 9);
    g.gamma = gen::uniform_vector(rng, 9, 1.0, 5.0);
    g.form = k % 2 ? ShiftForm::Odds : ShiftForm::InverseProbability;
    const double a = k % 4 < 2 ? 2.5 : -1.5;
    const double b = 3.0;
    WeightedGroup t = g;
    t.y = (a * g.y.array() + b).matrix();
    const auto r = extrema(g, 2.0);
    const auto s = extrema(t, 2.0);
    if (a > 0) {
      CHECK_THAT(s.min_est, WithinAbs(a * r.min_est + b, 1e-9));
      CHECK_THAT(s.max_est, WithinAbs(a * r.max_est + b, 1e-9));
    } else {
      CHECK_THAT(s.min_est, WithinAbs(a * r.max_est + b, 1e-9));
      CHECK_THAT(s.max_est, WithinAbs(a * r.min_est + b, 1e-9));
    }
  }
}

TEST_CASE("extrema: every optimal ratio is a box vertex") {
  std::mt19937_64 rng(10);
  for (int k = 0; k < 50; ++k) {
    WeightedGroup g;
    g.y = gen::normal_vector(rng, 10);
    g.gamma = gen::uniform_vector(rng, 10, 1.1, 4.0);
    const auto r = extrema(g, 3.0);
    for (double v : r.argmax_r) CHECK((std::abs(v - 3.0) < 1e-12 || std::abs(v - 1.0 / 3.0) < 1e-12));
    // Plugging the reported ratios back reproduces the extremum.
    Eigen::VectorXd h = r.argmax_r.array().log();
    CHECK_THAT(shifted_estimate(g, h, {3.0, Estimand::MeanTreated}), WithinRel(r.max_est, 1e-12));
  }
}

TEST_CASE("combine ate") {
  CHECK(combine_ate({1, 2}, {0, 0}) == Interval{1, 2});
  CHECK(combine_ate({1, 3}, {0, 1}) == Interval{0, 3});
  const Interval r = combine_ate({2, 4}, {0.5, 1.5});
  CHECK_THAT((r.lo + r.hi) / 2.0, WithinAbs(3.0 - 1.0, 1e-15));
}

TEST_CASE("estimand problems") {
  std::mt19937_64 rng(12);
  const Dataset ds = standardize(gen::dataset(rng, 120, 2)).data;
  BalanceSpec spec;
  for (const Estimand e : {Estimand::MeanTreated, Estimand::MeanControl, Estimand::Att, Estimand::Ate}) {
    const auto prob = make_problem(ds, fit_estimand(ds, spec, e), e);
    const Interval at_one = estimate_range(prob, 1.0);
    CHECK_THAT(at_one.lo, WithinAbs(point_value(prob), 1e-10));
    CHECK_THAT(at_one.hi, WithinAbs(point_value(prob), 1e-10));
    const Interval at_two = estimate_range(prob, 2.0);
    CHECK(at_two.contains(at_one));
  }
  // att range is the treated mean minus the control range
  const auto prob = make_problem(ds, fit_estimand(ds, spec, Estimand::Att), Estimand::Att);
  const auto ex = extrema(prob.primary, 2.0);
  const Interval r = estimate_range(prob, 2.0);
  CHECK_THAT(r.lo, WithinAbs(prob.treated_mean - ex.max_est, 1e-12));
  CHECK_THAT(r.hi, WithinAbs(prob.treated_mean - ex.min_est, 1e-12));
}
