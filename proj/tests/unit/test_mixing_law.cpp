#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "helpers.hpp"

using namespace mixdetect;

namespace {

MixingLawParams identity_law(std::size_t n) {
  MixingLawParams p;
  p.c.assign(n, 0.0);
  p.k.assign(n, 1.0);
  p.t = Eigen::MatrixXd::Identity(n, n);
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

double residual(const Eigen::MatrixXd& t, std::span<const double> x, const Eigen::VectorXd& b) {
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
  return (t * v - b).norm();
}

}  // namespace

TEST_SUITE("mixing-law") {
  TEST_CASE("eval_loss examples") {
    const auto l = eval_loss(identity_law(2), make_proportions({0.3, 0.7}));
    CHECK(l[0] == doctest::Approx(std::exp(0.3)).epsilon(1e-15));
    CHECK(l[1] == doctest::Approx(std::exp(0.7)).epsilon(1e-15));
    MixingLawParams p;
    p.c = {1.0, 0.5};
    p.k = {2.0, 1.0};
    p.t = Eigen::MatrixXd::Zero(2, 2);
    const auto z = eval_loss(p, make_proportions({0.9, 0.1}));
    CHECK(z[0] == 3.0);
    CHECK(z[1] == 1.5);
    CHECK(kind_of([&] { eval_loss(p, uniform_proportions(3)); }) == ErrorKind::DimensionMismatch);
  }

  TEST_CASE("gamma_from_loss examples") {
    const auto one = gamma_from_loss(std::vector<double>{0.0, 0.0});
    CHECK(one.values == std::vector<double>{1.0, 1.0});
    CHECK(one.estimator == GammaEstimator::ExpOfMeanLoss);
    CHECK(gamma_from_loss(std::vector<double>{std::log(2.0)}).values[0] == doctest::Approx(0.5).epsilon(1e-15));
    const auto g = gamma_from_loss(std::vector<double>{std::exp(0.3), std::exp(0.7)});
    CHECK(g.values[0] == doctest::Approx(std::exp(-std::exp(0.3))).epsilon(1e-15));
    CHECK(kind_of([] { gamma_from_loss(std::vector<double>{0.1, -0.1}); }) == ErrorKind::NegativeLoss);
  }

  TEST_CASE("beta_from_gamma examples") {
    auto law = identity_law(2);
    GammaVector g{{std::exp(-std::exp(0.3)), 0.5}, std::nullopt, GammaEstimator::ExpOfMeanLoss};
    CHECK(beta_from_gamma(g, law).values[0] == doctest::Approx(0.3).epsilon(1e-14));

    law.c = {0.2, 0.0};
    g.values = {0.9, 0.5};
    try {
      beta_from_gamma(g, law);
      FAIL("expected DomainViolation");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DomainViolation);
      CHECK(e.domain() == std::optional<std::size_t>(0));
      CHECK(e.value() == std::optional<double>(0.9));
    }
    law.c = {0.0, 0.0};
    g.values = {1.0, 0.5};
    CHECK(kind_of([&] { beta_from_gamma(g, law); }) == ErrorKind::DomainViolation);
  }

  TEST_CASE("log/exp chain reproduces T alpha") {
    Rng rng(21);
    for (int r = 0; r < 200; ++r) {
      const std::size_t n = 2 + r % 5;
      const auto law = testing::random_law(n, 50.0, rng);
      const auto alpha = testing::random_interior(n, rng);
      const auto beta = beta_from_gamma(gamma_from_loss(eval_loss(law, alpha)), law);
      const Eigen::Map<const Eigen::VectorXd> a(alpha.values().data(), static_cast<Eigen::Index>(n));
      const Eigen::VectorXd ta = law.t * a;
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(beta.values[i] - ta(static_cast<Eigen::Index>(i))) < 1e-12);
    }
  }

  TEST_CASE("identity law round trip in every mode") {
    const auto law = identity_law(2);
    const auto gamma = gamma_from_loss(eval_loss(law, make_proportions({0.3, 0.7})));
    for (auto mode : {InversionMode::Raw, InversionMode::Project, InversionMode::Constrained}) {
      const auto r = invert(law, gamma, mode);
      CHECK(r.alpha[0] == doctest::Approx(0.3).epsilon(1e-12));
      CHECK(r.alpha[1] == doctest::Approx(0.7).epsilon(1e-12));
      CHECK(r.diagnostics.residual < 1e-12);
      CHECK(r.diagnostics.condition == doctest::Approx(1.0));
    }
  }

  TEST_CASE("singular T is rejected") {
    auto law = identity_law(2);
    law.t << 1.0, 2.0, 1.0, 2.0;
    const BetaVector b{{0.5, 0.5}};
    for (auto mode : {InversionMode::Raw, InversionMode::Project, InversionMode::Constrained}) {
      CHECK(kind_of([&] { invert(law, b, mode); }) == ErrorKind::SingularMatrix);
    }
    CHECK(std::isinf(condition_number(law.t)));
    auto near = identity_law(2);
    near.t(1, 1) = 1e-9;
    CHECK(kind_of([&] { invert(near, b, InversionMode::Raw); }) == ErrorKind::SingularMatrix);
    CHECK_NOTHROW(invert(near, b, InversionMode::Raw, 1e12));
  }

  TEST_CASE("condition number of a diagonal matrix") {
    Eigen::MatrixXd d = Eigen::Vector3d(4.0, -2.0, 0.5).asDiagonal();
    CHECK(condition_number(d) == doctest::Approx(8.0));
  }

  TEST_CASE("raw mode reports off-simplex solutions") {
    const auto law = identity_law(2);
    const BetaVector b{{1.2, -0.2}};
    const auto raw = invert(law, b, InversionMode::Raw);
    CHECK(raw.alpha[0] == doctest::Approx(1.2));
    CHECK(raw.diagnostics.simplex_violation == doctest::Approx(0.4));
    const auto proj = invert(law, b, InversionMode::Project);
    CHECK(proj.alpha[0] == doctest::Approx(1.0));
    CHECK(proj.diagnostics.projection_changed);
    const auto off = invert(law, BetaVector{{0.8, 0.8}}, InversionMode::Raw);
    CHECK(off.proportions()[0] == doctest::Approx(0.5));
  }

  TEST_CASE("project_to_simplex examples") {
    const auto fixed = project_to_simplex(std::vector<double>{0.3, 0.7});
    CHECK(fixed.values() == std::vector<double>{0.3, 0.7});
    const auto clamp = project_to_simplex(std::vector<double>{1.2, -0.2});
    CHECK(clamp[0] == doctest::Approx(1.0));
    CHECK(clamp[1] == 0.0);
    CHECK_THROWS_AS(project_to_simplex(std::vector<double>{INFINITY, 0.0}), Error);
  }

  TEST_CASE("projection matches a brute-force grid for n = 3") {
    Rng rng(33);
    const int steps = 1000;  // resolution 1e-3
    for (int r = 0; r < 12; ++r) {
      const std::vector<double> v{2.0 * rng.uniform() - 0.5, 2.0 * rng.uniform() - 0.5, 2.0 * rng.uniform() - 0.5};
      double best = std::numeric_limits<double>::infinity();
      std::array<double, 3> arg{};
      for (int i = 0; i <= steps; ++i) {
        for (int j = 0; i + j <= steps; ++j) {
          const double x = i / double(steps), y = j / double(steps), z = 1.0 - x - y;
          const double d = (x - v[0]) * (x - v[0]) + (y - v[1]) * (y - v[1]) + (z - v[2]) * (z - v[2]);
          if (d < best) {
            best = d;
            arg = {x, y, z};
          }
        }
      }
      const auto p = project_to_simplex(v);
      double dist = 0.0;
      for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(p[i] - arg[i]) <= 2e-3);
        dist += (p[i] - v[i]) * (p[i] - v[i]);
      }
      CHECK(dist <= best + 1e-12);
    }
  }

  TEST_CASE("projection is idempotent and lands on the simplex") {
    Rng rng(4);
    for (int r = 0; r < 500; ++r) {
      std::vector<double> v(2 + r % 7);
      for (auto& x : v) x = 3.0 * rng.normal();
      const auto p = project_to_simplex(v);
      double sum = 0.0;
      for (double x : p.values()) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
      const auto q = project_to_simplex(p.values());
      for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
    }
  }

  TEST_CASE("constrained residual never exceeds the projected raw residual") {
    Rng rng(1234);
    int changed = 0;
    for (int r = 0; r < 1000; ++r) {
      const std::size_t n = 2 + r % 5;
      const auto law = testing::random_law(n, 1.0 + 99.0 * rng.uniform(), rng);
      const auto alpha = testing::random_interior(n, rng, 0.0);
      auto beta = beta_from_gamma(gamma_from_loss(eval_loss(law, alpha)), law);
      for (auto& b : beta.values) b += 0.3 * rng.normal();
      const auto con = invert(law, beta, InversionMode::Constrained);
      const auto prj = invert(law, beta, InversionMode::Project);
      const Eigen::Map<const Eigen::VectorXd> b(beta.values.data(), static_cast<Eigen::Index>(n));
      double sum = 0.0;
      for (double x : con.alpha) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
      const double rc = residual(law.t, con.alpha, b);
      const double rp = residual(law.t, prj.alpha, b);
      CHECK(rc <= rp + 1e-10);
      CHECK(con.diagnostics.residual == doctest::Approx(rc).epsilon(1e-9));
      changed += prj.diagnostics.projection_changed;
    }
    CHECK(changed > 0);
  }

  TEST_CASE("constrained least squares matches a line search for n = 2") {
    Rng rng(8);
    for (int r = 0; r < 200; ++r) {
      Eigen::MatrixXd t(2, 2);
      t << rng.normal(), rng.normal(), rng.normal(), rng.normal();
      const Eigen::Vector2d b(rng.normal(), rng.normal());
      const auto x = simplex_least_squares(t, b);
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i <= 100000; ++i) {
        const double a = i / 100000.0;
        best = std::min(best, (t * Eigen::Vector2d(a, 1.0 - a) - b).squaredNorm());
      }
      CHECK((t * Eigen::Vector2d(x[0], x[1]) - b).squaredNorm() <= best + 1e-9);
    }
  }

  TEST_CASE("law diagnostics") {
    const auto d = law_diagnostics(identity_law(3));
    CHECK(d.condition == doctest::Approx(1.0));
    CHECK_FALSE(d.singular);
    CHECK(d.monotonicity(0, 0) == 1);
    CHECK(d.monotonicity(0, 1) == 0);
    auto dup = identity_law(2);
    dup.t << 1.0, 0.5, 1.0, 0.5;
    const auto ds = law_diagnostics(dup);
    CHECK(ds.singular);
    CHECK(std::isinf(ds.condition));
    CHECK(ds.to_json().find("\"inf\"") != std::string::npos);

    Rng rng(77);
    for (int r = 0; r < 20; ++r) {
      const std::size_t n = 2 + r % 4;
      const auto law = testing::random_law(n, 20.0, rng);
      const auto diag = law_diagnostics(law);
      for (int s = 0; s < 100; ++s) {
        const auto g = gamma_from_loss(eval_loss(law, testing::random_interior(n, rng, 0.0)));
        for (std::size_t i = 0; i < n; ++i) {
          CHECK(g.values[i] >= diag.gamma_min[i] * (1 - 1e-12));
          CHECK(g.values[i] <= diag.gamma_max[i] * (1 + 1e-12));
        }
      }
    }
  }

  TEST_CASE("params and observations round-trip through JSON") {
    Rng rng(9);
    const auto law = testing::random_law(3, 5.0, rng);
    const auto back = MixingLawParams::from_json(law.to_json());
    CHECK(back.c == law.c);
    CHECK(back.k == law.k);
    CHECK(back.t == law.t);
    CHECK(back.loss_units == "nats_per_token");
    CHECK_THROWS_AS(MixingLawParams::from_json("{\"c\": [1]}"), Error);

    std::vector<RunObservation> runs{{make_proportions({0.2, 0.8}), {1.5, 2.5}}};
    const auto again = observations_from_json(observations_to_json(runs));
    REQUIRE(again.size() == 1);
    CHECK(again[0].alpha == runs[0].alpha);
    CHECK(again[0].losses == runs[0].losses);
  }

  TEST_CASE("fit recovers noiseless laws") {
    Rng rng(55);
    for (int r = 0; r < 30; ++r) {
      const std::size_t n = 2 + r % 4;
      const auto law = testing::random_law(n, 10.0, rng);
      std::vector<RunObservation> runs;
      for (std::size_t i = 0; i < 2 * (n + 2); ++i) {
        const auto a = testing::random_interior(n, rng, 0.03);
        runs.push_back({a, eval_loss(law, a)});
      }
      const auto result = fit(runs);
      CHECK(result.report.rmse <= 1e-6);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(result.params.k[i] > 0.0);
        CHECK(std::log(result.params.k[i]) == doctest::Approx(result.params.t.row(i).sum()).epsilon(1e-9));
      }
      // Predictions at fresh mixtures agree with the generating law.
      for (int s = 0; s < 10; ++s) {
        const auto a = testing::random_interior(n, rng, 0.03);
        const auto want = eval_loss(law, a);
        const auto got = eval_loss(result.params, a);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(want[i] - got[i]) < 1e-5);
      }
    }
  }

  TEST_CASE("fit noise study") {
    Rng rng(56);
    const double sigma = 0.01;
    for (int r = 0; r < 10; ++r) {
      const std::size_t n = 3;
      const auto law = testing::random_law(n, 5.0, rng);
      std::vector<RunObservation> runs;
      for (int i = 0; i < 30; ++i) {
        const auto a = testing::random_interior(n, rng, 0.03);
        auto l = eval_loss(law, a);
        for (auto& x : l) x += sigma * rng.normal();
        runs.push_back({a, l});
      }
      const auto result = fit(runs);
      CHECK(result.report.rmse <= 3.0 * sigma);
    }
  }

  TEST_CASE("fit input errors") {
    std::vector<RunObservation> runs;
    for (int i = 0; i < 4; ++i) runs.push_back({uniform_proportions(3), {1.0, 1.0, 1.0}});
    CHECK(kind_of([&] { fit(runs); }) == ErrorKind::InsufficientObservations);
    runs.push_back({uniform_proportions(3), {1.0, 1.0, 1.0}});
    CHECK(kind_of([&] { fit(runs); }) == ErrorKind::DegenerateDesign);
    std::vector<RunObservation> line;
    for (int i = 0; i < 8; ++i) {
      const double a = 0.1 + 0.1 * i;
      line.push_back({make_proportions({a, 1.0 - a, 0.0}), {1.0 + a, 2.0, 3.0}});
    }
    CHECK(kind_of([&] { fit(line); }) == ErrorKind::DegenerateDesign);
  }

  TEST_CASE("mode names") {
    CHECK(parse_inversion_mode("raw") == InversionMode::Raw);
    CHECK(to_string(InversionMode::Constrained) == "constrained");
    CHECK_THROWS_AS(parse_inversion_mode("lsq"), Error);
  }
}
