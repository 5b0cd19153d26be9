#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mixdetect/core_types.hpp"
#include "mixdetect/mixing_law.hpp"
#include "mixdetect/random.hpp"

namespace testing {

using namespace mixdetect;

inline MixtureProportions random_interior(std::size_t n, Rng& rng, double floor = 0.02) {
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) {
    x = rng.exponential();
    total += x;
  }
  const double scale = 1.0 - floor * static_cast<double>(n);
  for (auto& x : v) x = floor + scale * x / total;
  return make_proportions(v);
}

inline Eigen::MatrixXd random_orthogonal(std::size_t n, Rng& rng) {
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

// T = U diag(s) V^T with singular values spread geometrically over [1/cond, 1],
// scaled by `scale`.
inline Eigen::MatrixXd matrix_with_condition(std::size_t n, double cond, Rng& rng, double scale = 2.0) {
  Eigen::VectorXd s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s(i) = scale * (n == 1 ? 1.0 : std::pow(cond, -static_cast<double>(i) / static_cast<double>(n - 1)));
  }
  return random_orthogonal(n, rng) * s.asDiagonal() * random_orthogonal(n, rng).transpose();
}

inline MixingLawParams random_law(std::size_t n, double cond, Rng& rng) {
  MixingLawParams p;
  p.t = matrix_with_condition(n, cond, rng);
  for (std::size_t i = 0; i < n; ++i) {
    p.c.push_back(0.5 + rng.uniform());
    p.k.push_back(0.2 + rng.uniform());
  }
  return p;
}

}  // namespace testing
