#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "herdlab/model.hpp"

using namespace herdlab;

namespace {

ModelParams table1_params() {
  ModelParams p;
  p.kappa = 1.0;
  p.alpha = 0.2;
  p.length = 20.0;
  p.u1_mean = 0.594;
  p.rho = 0.05;
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("logistic g: values, roots, domain guard") {
  ModelParams p;
  CHECK(model::g_eval(0.5, p) == doctest::Approx(0.25));
  CHECK(model::g_eval(0.0, p) == 0.0);
  CHECK(model::g_eval(1.0, p) == 0.0);
  CHECK(model::g_eval(0.594, p) == doctest::Approx(0.241164).epsilon(1e-12));
  CHECK(model::g_prime(0.5, p) == 0.0);
  CHECK(model::g_double_prime(0.3, p) == -2.0);
  CHECK_THROWS_AS(model::g_eval(-1e-6, p), std::domain_error);
  CHECK_THROWS_AS(model::g_eval(1.0 + 1e-6, p), std::domain_error);
  CHECK_NOTHROW(model::g_eval(1.0 + 1e-13, p));  // inside tolerance
}

TEST_CASE("power-law g and gamma by golden section") {
  ModelParams p;
  p.g_fn = Nonlinearity::power(2.0, 2.0);
  CHECK(model::g_eval(0.5, p) == doctest::Approx(0.0625));
  // max of s^2 (1-s)^2 is at s = 1/2
  CHECK(p.gamma() == doctest::Approx(0.0625).epsilon(1e-10));
  p.g_fn = Nonlinearity::power(2.0, 1.0);
  // max of s^2 (1-s) at s = 2/3: (4/9)(1/3) = 4/27
  CHECK(p.gamma() == doctest::Approx(4.0 / 27.0).epsilon(1e-10));
  // derivative consistent with finite differences
  for (double s : {0.2, 0.5, 0.8}) {
    const double fd =
        (model::g_eval(s + 1e-6, p) - model::g_eval(s - 1e-6, p)) / 2e-6;
    CHECK(model::g_prime(s, p) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("h0 closed form and companions") {
  ModelParams p;
  CHECK(model::h0_eval(0.5, p) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(model::h0_eval(0.9, p) ==
        doctest::Approx(0.9 * std::log(0.9) + 0.1 * std::log(0.1))
            .epsilon(1e-14));
  CHECK(model::h0_prime_inverse(0.0, p) == doctest::Approx(0.5));
  CHECK(model::h0_double_prime(0.25, p) ==
        doctest::Approx(1.0 / (0.25 * 0.75)));
  CHECK_THROWS_AS(model::h0_eval(0.0, p), std::domain_error);
  CHECK_THROWS_AS(model::h0_prime(1.0, p), std::domain_error);
}

TEST_CASE("h0_prime_inverse round-trips to 1e-12") {
  ModelParams p;
  std::mt19937_64 rng(20240901);
  std::uniform_real_distribution<double> dist(1e-3, 1.0 - 1e-3);
  for (int k = 0; k < 200; ++k) {
    const double s = dist(rng);
    const double w = model::h0_prime(s, p);
    CHECK(model::h0_prime_inverse(w, p) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("h0 convexity: Bregman gap is nonnegative on sampled pairs") {
  ModelParams p;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(1e-4, 1.0 - 1e-4);
  for (int k = 0; k < 500; ++k) {
    const double x = dist(rng), y = dist(rng);
    const double lhs = model::h0_eval(x, p) - model::h0_eval(y, p);
    CHECK(lhs <= model::h0_prime(x, p) * (x - y) + 1e-14);
  }
}

TEST_CASE("power-law h0 quadrature agrees with its defining derivatives") {
  ModelParams p;
  p.g_fn = Nonlinearity::power(2.0, 2.0);
  for (double s : {0.3, 0.5, 0.7, 0.9}) {
    const double fd =
        (model::h0_eval(s + 1e-5, p) - model::h0_eval(s - 1e-5, p)) / 2e-5;
    CHECK(model::h0_prime(s, p) == doctest::Approx(fd).epsilon(1e-7));
    const double fd2 =
        (model::h0_prime(s + 1e-5, p) - model::h0_prime(s - 1e-5, p)) / 2e-5;
    CHECK(1.0 / model::g_eval(s, p) == doctest::Approx(fd2).epsilon(1e-7));
    const double w = model::h0_prime(s, p);
    CHECK(model::h0_prime_inverse(w, p) == doctest::Approx(s).epsilon(1e-10));
  }
}

TEST_CASE("delta0 branches and rejections") {
  ModelParams p;
  p.kappa = 1.0;
  p.delta = 0.25;
  CHECK(model::delta0(p) == doctest::Approx(0.25));
  p.delta = -2.0;  // gamma = 1/4 so kappa/gamma = 4
  CHECK(model::delta0(p) == doctest::Approx(4.0));
  p.delta = 0.0;
  CHECK_THROWS_AS(model::delta0(p), std::domain_error);
  p.delta = -4.0;
  CHECK_THROWS_AS(model::delta0(p), std::domain_error);
  p.delta = -5.0;
  CHECK_THROWS_AS(model::delta0(p), std::domain_error);
}

TEST_CASE("epsilon1 values and limits") {
  ModelParams p;
  p.kappa = 1.0;
  p.delta = 0.25;
  CHECK(model::epsilon1(p) == doctest::Approx(0.25));
  p.delta = -2.0;
  // eps0 = (1 - (1.5)^2/4)/2 = 0.21875; second term 1.12; min is eps0
  CHECK(model::epsilon1(p) == doctest::Approx(0.21875).epsilon(1e-14));

  double prev = 1.0;
  for (double d : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
    p.delta = d;
    const double e = model::epsilon1(p);
    CHECK(e > 0.0);
    CHECK(e < prev);
    prev = e;
  }
  CHECK(prev < 1e-4);  // epsilon1 -> 0 as delta -> 0+

  prev = 1.0;
  for (double d : {-3.9, -3.99, -3.999, -3.9999}) {
    p.delta = d;
    const double e = model::epsilon1(p);
    CHECK(e > 0.0);
    CHECK(e < prev);
    prev = e;
  }
  CHECK(prev < 1e-3);  // epsilon1 -> 0 as delta -> (-kappa/gamma)+
}

TEST_CASE("b_matrix entries and zero-mobility row") {
  ModelParams p;
  p.kappa = 1.0;
  p.delta = 0.25;
  const Eigen::Matrix2d b = model::b_matrix(0.5, p);
  CHECK(b(0, 0) == doctest::Approx(0.25));
  CHECK(b(0, 1) == doctest::Approx(-0.0625));
  CHECK(b(1, 0) == doctest::Approx(0.0625));
  CHECK(b(1, 1) == doctest::Approx(0.25));

  const Eigen::Matrix2d b0 = model::b_matrix(0.0, p);
  CHECK(b0(0, 0) == 0.0);
  CHECK(b0(0, 1) == 0.0);
  CHECK(b0(1, 0) == 0.0);
  CHECK(b0(1, 1) == doctest::Approx(model::delta0(p) * p.kappa));
}

TEST_CASE("b_matrix coercivity bound holds on random samples") {
  std::mt19937_64 rng(123456);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> zdist;
  std::uniform_real_distribution<double> ddist(-3.5, 3.0);
  for (int k = 0; k < 10000; ++k) {
    ModelParams p;
    p.kappa = 1.0;
    do {
      p.delta = ddist(rng);
    } while (std::abs(p.delta) < 1e-3);
    const double u1 = u01(rng);
    const double e1 = model::epsilon1(p);
    const Eigen::Matrix2d b = model::b_matrix(u1, p);
    const Eigen::Vector2d z(zdist(rng), zdist(rng));
    const double quad = z.dot(b * z);
    const double bound =
        e1 * (model::g_eval(u1, p) * z[0] * z[0] + z[1] * z[1]);
    CHECK(quad >= bound - 1e-12 * std::abs(quad));
  }
}

TEST_CASE("chi_rate example, failure signal, large-alpha limit") {
  ModelParams p;
  p.delta = 1.0;
  p.kappa = 1.0;
  p.alpha = 10.0;
  auto chi = model::chi_rate(p);
  REQUIRE(chi.has_value());
  CHECK(*chi == doctest::Approx(0.975).epsilon(1e-14));

  ModelParams bad = p;
  bad.alpha = 1e-6;  // delta0*eps1 = 1 <= (gamma/alpha) = 250000
  CHECK_FALSE(model::chi_rate(bad).has_value());

  ModelParams big = p;
  big.alpha = 1e9;
  auto chi_big = model::chi_rate(big);
  REQUIRE(chi_big.has_value());
  CHECK(*chi_big ==
        doctest::Approx(model::epsilon1(big) / big.c_sobolev).epsilon(1e-6));
}

TEST_CASE("steady_state examples") {
  ModelParams p = table1_params();
  auto [u1, u2] = model::steady_state(p);
  CHECK(u1 == doctest::Approx(0.594));
  CHECK(u2 == doctest::Approx(1.20582).epsilon(1e-10));

  ModelParams q;
  q.u1_mean = 0.5;
  q.alpha = 1.0;
  auto [v1, v2] = model::steady_state(q);
  CHECK(v1 == doctest::Approx(0.5));
  CHECK(v2 == doctest::Approx(0.25));

  ModelParams r;
  r.u1_mean = 0.211325;
  r.alpha = 0.001;
  r.length = 50.0;
  auto [w1, w2] = model::steady_state(r);
  CHECK(w1 == doctest::Approx(0.211325));
  // f(0.211325) = 0.166666744...; divided by alpha = 0.001
  CHECK(w2 == doctest::Approx(166.666744375).epsilon(1e-9));
}

TEST_CASE("decay_region: critical deltas and large-alpha limit") {
  ModelParams p = table1_params();
  std::vector<double> grid;
  for (double d = -3.9; d < -0.011; d += 0.05) grid.push_back(d);
  for (double d = 0.01; d < 10.0; d += 0.05) grid.push_back(d);

  const CriticalDeltas cd = model::decay_region(p, grid);
  CHECK(cd.delta_star == doctest::Approx(-4.0));
  CHECK(cd.delta_d == doctest::Approx(-4.1466).epsilon(1e-3));

  ModelParams big = p;
  big.alpha = 1e6;
  const CriticalDeltas cd_big = model::decay_region(big, grid);
  REQUIRE(cd_big.decay_intervals.size() >= 1);
  // With huge alpha the condition holds essentially everywhere on the grid.
  double covered = 0.0;
  for (auto [lo, hi] : cd_big.decay_intervals) covered += hi - lo;
  const double span = (grid.back() - grid.front());
  CHECK(covered > 0.95 * (span - 0.05));

  // Intervals stay inside the admissible set and never span delta = 0.
  for (auto [lo, hi] : cd_big.decay_intervals) {
    CHECK(lo > cd_big.delta_star);
    CHECK(((lo < 0.0 && hi < 0.0) || (lo > 0.0 && hi > 0.0)));
  }
}

TEST_CASE("decay_region matches an independent bisection oracle") {
  ModelParams p = table1_params();
  p.alpha = 0.2;
  std::vector<double> grid;
  for (double d = 0.01; d <= 6.0; d += 0.1) grid.push_back(d);
  const CriticalDeltas cd = model::decay_region(p, grid);
  REQUIRE(cd.decay_intervals.size() == 1);

  // Oracle: the positive-side condition is delta*min(1, delta) > threshold;
  // with threshold = 0.25/alpha = 1.25 > 1 the boundary sits at threshold.
  const double threshold = 0.25 / p.alpha;
  const double boundary = (threshold >= 1.0) ? threshold : std::sqrt(threshold);
  CHECK(cd.decay_intervals[0].first == doctest::Approx(boundary).epsilon(1e-8));
  CHECK(cd.decay_intervals[0].second ==
        doctest::Approx(grid.back()).epsilon(1e-12));
}

TEST_CASE("decay_region: tiny alpha on a bounded grid is empty") {
  ModelParams p = table1_params();
  p.alpha = 1e-4;
  std::vector<double> grid;
  for (double d = -3.9; d < 2.0; d += 0.05) {
    if (std::abs(d) > 1e-3) grid.push_back(d);
  }
  const CriticalDeltas cd = model::decay_region(p, grid);
  CHECK(cd.decay_intervals.empty());
}

TEST_CASE("delta_d <= delta_star, equality only at the g-maximizer") {
  // g(u1*) <= gamma makes -kappa/g(u1*) <= -kappa/gamma.
  for (double mean : {0.2, 0.4, 0.5, 0.7, 0.9}) {
    ModelParams p;
    p.u1_mean = mean;
    std::vector<double> grid{1.0};
    const CriticalDeltas cd = model::decay_region(p, grid);
    CHECK(cd.delta_d <= cd.delta_star + 1e-14);
    if (mean == 0.5) {
      CHECK(cd.delta_star == doctest::Approx(cd.delta_d));
    } else {
      CHECK(cd.delta_d < cd.delta_star);
    }
  }
}

TEST_CASE("params validation rejects bad fields") {
  ModelParams p;
  p.kappa = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ModelParams{};
  p.u1_mean = 1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = ModelParams{};
  p.g_fn = Nonlinearity::power(0.5, 2.0);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_SUITE_END();
