#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "balsens/core.hpp"
#include "balsens/text_io.hpp"
#include "generators.hpp"

using namespace balsens;
using Catch::Matchers::WithinAbs;

namespace {

Dataset tiny(std::initializer_list<double> z) {
  Dataset ds;
  const auto n = static_cast<Eigen::Index>(z.size());
  ds.y = Eigen::VectorXd::LinSpaced(n, 1.0, static_cast<double>(n));
  ds.z.resize(n);
  Eigen::Index i = 0;
  for (double v : z) ds.z[i++] = v;
  ds.x = Eigen::MatrixXd::Zero(n, 1);
  ds.names = {"a"};
  return ds;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ConfigError;
}

}  // namespace

TEST_CASE("validate counts groups") {
  const Dataset ds = validate(tiny({1, 0, 1}));
  CHECK(ds.n1 == 2);
  CHECK(ds.n0 == 1);
}

TEST_CASE("validate rejects bad inputs") {
  CHECK(code_of([] { validate(tiny({1, 1, 1})); }) == ErrorCode::EmptyGroup);
  CHECK(code_of([] { validate(tiny({0, 0})); }) == ErrorCode::EmptyGroup);
  CHECK(code_of([] { validate(tiny({1, 0.5, 0})); }) == ErrorCode::NonBinaryTreatment);
  CHECK(code_of([] {
          Dataset ds = tiny({1, 0, 1});
          ds.y[1] = std::numeric_limits<double>::quiet_NaN();
          validate(ds);
        }) == ErrorCode::NonFinite);
  CHECK(code_of([] {
          Dataset ds = tiny({1, 0, 1});
          ds.x(2, 0) = std::numeric_limits<double>::infinity();
          validate(ds);
        }) == ErrorCode::NonFinite);
  CHECK(code_of([] {
          Dataset ds = tiny({1, 0});
          ds.x = Eigen::MatrixXd::Zero(2, 2);
          ds.names = {"a", "a"};
          validate(ds);
        }) == ErrorCode::SchemaError);
}

TEST_CASE("validate is idempotent") {
  std::mt19937_64 rng(5);
  const Dataset a = gen::dataset(rng, 40, 3);
  const Dataset b = validate(a);
  CHECK(a.n1 == b.n1);
  CHECK(a.n0 == b.n0);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
}

TEST_CASE("standardize uses the n - 1 convention") {
  Dataset ds = tiny({1, 0, 1});
  ds.x.col(0) << 1.0, 2.0, 3.0;
  const Standardized s = standardize(validate(ds));
  CHECK_THAT(s.data.x(0, 0), WithinAbs(-1.0, 1e-15));
  CHECK_THAT(s.data.x(1, 0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(s.data.x(2, 0), WithinAbs(1.0, 1e-15));
  CHECK(s.scaling.mean[0] == 2.0);
  CHECK(s.scaling.sd[0] == 1.0);
  CHECK_FALSE(s.scaling.constant[0]);
}

TEST_CASE("standardize zeroes and flags constant columns") {
  Dataset ds = tiny({1, 0, 1});
  ds.x.col(0).setConstant(5.0);
  const Standardized s = standardize(validate(ds));
  CHECK(s.data.x.col(0).isZero(0.0));
  CHECK(s.scaling.constant[0]);
  CHECK(s.data.y == ds.y);
}

TEST_CASE("standardize is idempotent") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Dataset ds = gen::dataset(rng, 30, 3);
    const Standardized once = standardize(ds);
    const Standardized twice = standardize(once.data);
    CHECK((once.data.x - twice.data.x).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("odds ratio") {
  CHECK(odds_ratio(0.5, 0.5) == 1.0);
  CHECK_THAT(odds_ratio(2.0 / 3.0, 0.5), WithinAbs(2.0, 1e-15));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
  for (int k = 0; k < 1000; ++k) {
    const double p = u(rng);
    const double q = u(rng);
    CHECK_THAT(odds_ratio(p, p), WithinAbs(1.0, 1e-12));
    CHECK_THAT(odds_ratio(p, q) * odds_ratio(q, p), WithinAbs(1.0, 1e-12));
  }
  CHECK(code_of([] { odds_ratio(0.0, 0.5); }) == ErrorCode::Domain);
  CHECK(code_of([] { odds_ratio(0.5, 1.0); }) == ErrorCode::Domain);
}

TEST_CASE("estimand names round-trip") {
  for (const char* s : {"mu1", "mu0", "mu01", "ate", "att"}) CHECK(to_string(parse_estimand(s)) == s);
  CHECK(code_of([] { parse_estimand("foo"); }) == ErrorCode::ConfigError);
  CHECK(target_group_for(Estimand::MeanTreated) == TargetGroup::TreatedToAll);
  CHECK(target_group_for(Estimand::MeanControl) == TargetGroup::ControlToAll);
  CHECK(target_group_for(Estimand::Att) == TargetGroup::ControlToTreated);
  CHECK(target_group_for(Estimand::MeanControlOfTreated) == TargetGroup::ControlToTreated);
}

TEST_CASE("sens config invariants") {
  SensConfig ok;
  CHECK_NOTHROW(ok.check());
  SensConfig bad = ok;
  bad.lambda_sens = 0.9;
  CHECK_THROWS_AS(bad.check(), Error);
  bad = ok;
  bad.alpha = 1.0;
  CHECK_THROWS_AS(bad.check(), Error);
  bad = ok;
  bad.b_reps = 0;
  CHECK_THROWS_AS(bad.check(), Error);
}

TEST_CASE("csv ingestion") {
  std::istringstream in("x1,y,z,\"x 2\"\n1,2.5,1,3\n4,5,0,6\n7,8,1,-1e3\n");
  const Dataset ds = read_csv(in);
  REQUIRE(ds.size() == 3);
  REQUIRE(ds.dim() == 2);
  CHECK(ds.names[0] == "x1");
  CHECK(ds.names[1] == "x 2");
  CHECK(ds.y[0] == 2.5);
  CHECK(ds.x(2, 1) == -1000.0);
  CHECK(ds.n1 == 2);

  std::istringstream no_z("y,x\n1,2\n");
  CHECK(code_of([&] { read_csv(no_z); }) == ErrorCode::SchemaError);
  std::istringstream ragged("y,z,x\n1,0,2\n1,1\n");
  CHECK(code_of([&] { read_csv(ragged); }) == ErrorCode::SchemaError);
  std::istringstream text("y,z,x\n1,0,abc\n2,1,3\n");
  CHECK(code_of([&] { read_csv(text); }) == ErrorCode::SchemaError);
}

TEST_CASE("double formatting round-trips") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1e3);
  for (int k = 0; k < 1000; ++k) {
    const double v = n(rng) * std::pow(10.0, (k % 40) - 20);
    double back = 0.0;
    REQUIRE(parse_double(format_double(v), back));
    CHECK(back == v);
  }
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("select rows keeps duplicates") {
  std::mt19937_64 rng(2);
  const Dataset ds = gen::dataset(rng, 10, 2);
  const std::vector<std::size_t> rows{3, 3, 0};
  const Dataset sub = select_rows(ds, rows);
  REQUIRE(sub.size() == 3);
  CHECK(sub.y[0] == ds.y[3]);
  CHECK(sub.y[1] == ds.y[3]);
  CHECK(sub.x.row(2) == ds.x.row(0));
}
