#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "balsens/core.hpp"
#include "balsens/rng.hpp"

namespace gen {

// Random observational dataset: normal covariates, logistic treatment with a
// mild tilt, linear outcome. Both groups are guaranteed nonempty.
inline balsens::Dataset dataset(std::mt19937_64& rng, std::size_t n, std::size_t d, double tilt = 0.4,
                                double effect = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  balsens::Dataset ds;
  const auto nn = static_cast<Eigen::Index>(n);
  const auto dd = static_cast<Eigen::Index>(d);
  for (;;) {
    ds.x.resize(nn, dd);
    ds.y.resize(nn);
    ds.z.resize(nn);
    std::size_t treated = 0;
    for (Eigen::Index i = 0; i < nn; ++i) {
      double lin = 0.0;
      double out = 0.0;
      for (Eigen::Index j = 0; j < dd; ++j) {
        ds.x(i, j) = normal(rng);
        lin += tilt * ds.x(i, j);
        out += (0.5 + 0.25 * static_cast<double>(j)) * ds.x(i, j);
      }
      const bool z = unif(rng) < 1.0 / (1.0 + std::exp(-lin));
      ds.z[i] = z ? 1.0 : 0.0;
      treated += z;
      ds.y[i] = out + (z ? effect : 0.0) + normal(rng);
    }
    if (treated > 1 && treated + 1 < n) break;
  }
  ds.names.clear();
  for (std::size_t j = 0; j < d; ++j) ds.names.push_back("x" + std::to_string(j + 1));
  return balsens::validate(std::move(ds));
}

inline Eigen::VectorXd uniform_vector(std::mt19937_64& rng, std::size_t m, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(static_cast<Eigen::Index>(m));
  for (auto& x : v) x = u(rng);
  return v;
}

inline Eigen::VectorXd normal_vector(std::mt19937_64& rng, std::size_t m, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Eigen::VectorXd v(static_cast<Eigen::Index>(m));
  for (auto& x : v) x = nd(rng);
  return v;
}

}  // namespace gen
