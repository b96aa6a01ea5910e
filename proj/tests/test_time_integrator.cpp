#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "herdlab/time_integrator.hpp"

using namespace herdlab;

namespace {

StateField cosine_perturbation(const Grid& g, const ModelParams& p,
                               double amplitude, int mode) {
  auto [u1s, u2s] = model::steady_state(p);
  StateField s(g);
  for (int i = 0; i < g.n_cells; ++i) {
    const double x = g.cell_center(i);
    s.u1[i] =
        u1s + amplitude * std::cos(mode * std::numbers::pi * x / p.length);
    s.u2[i] = u2s;
  }
  return s;
}

double mean(const Eigen::VectorXd& v) { return v.sum() / v.size(); }

}  // namespace

TEST_SUITE_BEGIN("time_integrator");

TEST_CASE("entropy step: steady state moves only by the regularization drift") {
  ModelParams p;
  p.delta = 0.25;
  p.alpha = 0.2;
  p.u1_mean = 0.594;
  Grid g(64, p.length);
  auto [u1s, u2s] = model::steady_state(p);
  StateField steady = StateField::constant(g, u1s, u2s);

  TimeStepperConfig cfg;
  cfg.tau = 0.1;
  cfg.eps_reg = 1e-8;
  cfg.newton_tol = 1e-12;

  const StateField next = time_integrator::step_entropy_variables(steady, p, cfg);
  // The regularization pulls each component by about eps*tau*|w| per step:
  // u1 by g* dw1 with dw1 ~ -eps tau w1/g*, u2 by delta0 dw2 likewise.
  const double w1 = model::h0_prime(u1s, p);
  const double w2 = u2s / model::delta0(p);
  const double w_norm = std::max(std::abs(w1), std::abs(w2));
  const double drift_bound = 2.0 * cfg.eps_reg * cfg.tau * w_norm + 1e-10;
  CHECK((next.u1 - steady.u1).lpNorm<Eigen::Infinity>() < drift_bound);
  CHECK((next.u2 - steady.u2).lpNorm<Eigen::Infinity>() < drift_bound);
}

TEST_CASE("entropy step: mean drift identity and interior bounds") {
  ModelParams p;
  p.delta = -2.0;  // negative-delta regime
  p.alpha = 1.0;
  p.u1_mean = 0.5;
  Grid g(64, p.length);
  TimeStepperConfig cfg;
  cfg.tau = 0.05;
  cfg.eps_reg = 1e-6;  // visible drift for the identity check
  cfg.newton_tol = 1e-13;

  StateField s = cosine_perturbation(g, p, 0.3, 1);
  const double d0 = model::delta0(p);
  for (int k = 0; k < 20; ++k) {
    const StateField next = time_integrator::step_entropy_variables(s, p, cfg);
    // all iterates strictly interior
    CHECK(next.u1.minCoeff() > 0.0);
    CHECK(next.u1.maxCoeff() < 1.0);
    // mean(u1^k) = mean(u1^{k-1}) - eps*tau*mean(w1^k)
    Eigen::VectorXd w1(g.n_cells);
    for (int i = 0; i < g.n_cells; ++i) {
      w1[i] = model::h0_prime(next.u1[i], p);
    }
    const double expected = mean(s.u1) - cfg.eps_reg * cfg.tau * mean(w1);
    CHECK(mean(next.u1) == doctest::Approx(expected).epsilon(1e-10));
    (void)d0;
    s = next;
  }
}

TEST_CASE("entropy step: discrete entropy inequality per step") {
  ModelParams p;
  p.delta = -2.0;
  p.alpha = 1.0;
  p.u1_mean = 0.5;
  Grid g(64, p.length);
  TimeStepperConfig cfg;
  cfg.tau = 0.05;
  cfg.eps_reg = 1e-8;
  cfg.newton_tol = 1e-12;

  const double d0 = model::delta0(p);
  const double gamma = p.gamma();
  const double c0 =
      model::epsilon1(p) * std::min(1.0 / gamma, 1.0 / (d0 * d0));
  const double f_m = model::f_max(p);
  // (f_M - alpha u2) u2 <= f_M^2 / (4 alpha) pointwise
  const double c_f = p.length * f_m * f_m / (4.0 * p.alpha);

  auto entropy_h = [&](const StateField& s) {
    Eigen::VectorXd vals(g.n_cells);
    for (int i = 0; i < g.n_cells; ++i) {
      vals[i] = model::h0_eval(s.u1[i], p) + s.u2[i] * s.u2[i] / (2.0 * d0);
    }
    return grid_ops::integrate(vals, g);
  };
  auto grad_sq = [&](const Eigen::VectorXd& v) {
    double acc = 0.0;
    for (int i = 0; i + 1 < g.n_cells; ++i) {
      const double d = (v[i + 1] - v[i]) / g.spacing();
      acc += d * d * g.spacing();
    }
    return acc;
  };

  StateField s = cosine_perturbation(g, p, 0.35, 2);
  for (int k = 0; k < 15; ++k) {
    const StateField next = time_integrator::step_entropy_variables(s, p, cfg);
    const double lhs = entropy_h(next) +
                       c0 * cfg.tau * (grad_sq(next.u1) + grad_sq(next.u2));
    const double rhs = c_f * cfg.tau + entropy_h(s);
    CHECK(lhs <= rhs + 1e-10);
    s = next;
  }
}

TEST_CASE("primal step: steady fixed point and exact mass conservation") {
  ModelParams p;
  p.delta = 1.0;
  p.alpha = 10.0;
  p.u1_mean = 0.5;
  Grid g(64, p.length);
  auto [u1s, u2s] = model::steady_state(p);
  StateField steady = StateField::constant(g, u1s, u2s);
  TimeStepperConfig cfg;
  cfg.mode = TimeStepMode::Primal;
  cfg.tau = 0.1;
  cfg.newton_tol = 1e-13;

  const StateField still = time_integrator::step_primal(steady, p, cfg);
  CHECK((still.u1 - steady.u1).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((still.u2 - steady.u2).lpNorm<Eigen::Infinity>() < 1e-12);

  StateField s = cosine_perturbation(g, p, 0.2, 3);
  const double mass0 = grid_ops::integrate(s.u1, g);
  for (int k = 0; k < 25; ++k) {
    s = time_integrator::step_primal(s, p, cfg);
    const double mass = grid_ops::integrate(s.u1, g);
    CHECK(std::abs(mass - mass0) < 1e-12 * std::abs(mass0));
  }
}

TEST_CASE("primal evolve: relative entropy decays monotonically in the decay regime") {
  ModelParams p;
  p.delta = 1.0;
  p.kappa = 1.0;
  p.alpha = 10.0;
  p.u1_mean = 0.5;
  p.length = 2.0;
  Grid g(64, p.length);
  TimeStepperConfig cfg;
  cfg.mode = TimeStepMode::Primal;
  cfg.tau = 0.02;
  cfg.t_final = 1.0;
  cfg.newton_tol = 1e-12;

  const Trajectory traj =
      time_integrator::evolve(cosine_perturbation(g, p, 0.1, 1), p, cfg);
  REQUIRE(traj.completed);
  for (std::size_t k = 1; k < traj.samples.size(); ++k) {
    CHECK(traj.samples[k].report.relative_entropy <=
          traj.samples[k - 1].report.relative_entropy * (1.0 + 1e-10));
  }
}

TEST_CASE("evolve: flat trace at the steady state") {
  ModelParams p;
  p.delta = 0.5;
  p.u1_mean = 0.3;
  Grid g(32, p.length);
  auto [u1s, u2s] = model::steady_state(p);
  TimeStepperConfig cfg;
  cfg.mode = TimeStepMode::Primal;
  cfg.tau = 0.05;
  cfg.t_final = 0.5;
  const Trajectory traj =
      time_integrator::evolve(StateField::constant(g, u1s, u2s), p, cfg);
  REQUIRE(traj.completed);
  for (const auto& s : traj.samples) {
    CHECK(std::abs(s.report.relative_entropy) < 1e-12);
  }
}

TEST_CASE("fit_decay_rate: synthetic exponential, constant, and empty traces") {
  Trajectory traj;
  for (int k = 0; k <= 100; ++k) {
    TrajectorySample s;
    s.time = 0.05 * k;
    s.report.relative_entropy = std::exp(-2.0 * s.time);
    traj.samples.push_back(s);
  }
  CHECK(time_integrator::fit_decay_rate(traj) ==
        doctest::Approx(2.0).epsilon(1e-6));

  Trajectory flat;
  for (int k = 0; k <= 50; ++k) {
    TrajectorySample s;
    s.time = 0.1 * k;
    s.report.relative_entropy = 0.25;
    flat.samples.push_back(s);
  }
  CHECK(time_integrator::fit_decay_rate(flat) ==
        doctest::Approx(0.0).epsilon(1e-12));

  Trajectory dead;
  for (int k = 0; k <= 50; ++k) {
    TrajectorySample s;
    s.time = 0.1 * k;
    s.report.relative_entropy = 1e-16;
    dead.samples.push_back(s);
  }
  CHECK_THROWS_AS(time_integrator::fit_decay_rate(dead), std::runtime_error);
}

TEST_CASE("evolve decay rate is at least the guaranteed chi") {
  // Quick version of the decay-rate criterion: l = 1 puts the convex Sobolev
  // constant for the unit interval below the configured c_sobolev = 1.
  ModelParams p;
  p.delta = 1.0;
  p.kappa = 1.0;
  p.alpha = 10.0;
  p.u1_mean = 0.5;
  p.length = 1.0;
  Grid g(100, p.length);
  TimeStepperConfig cfg;
  cfg.tau = 5e-3;
  cfg.t_final = 2.0;
  cfg.eps_reg = 1e-10;
  cfg.newton_tol = 1e-12;

  const auto chi = model::chi_rate(p);
  REQUIRE(chi.has_value());
  CHECK(*chi == doctest::Approx(0.975));

  const Trajectory traj =
      time_integrator::evolve(cosine_perturbation(g, p, 0.1, 1), p, cfg);
  REQUIRE(traj.completed);
  const double rate = time_integrator::fit_decay_rate(traj);
  CHECK(rate >= *chi * 0.95);

  // L2 decay bound along the trajectory.
  auto [u1s, u2s] = model::steady_state(p);
  const double h0 = traj.samples.front().report.relative_entropy;
  const double front = 2.0 * std::sqrt(std::max(p.gamma(), p.delta) * h0);
  for (const auto& s : traj.samples) {
    double l2_1 = 0.0, l2_2 = 0.0;
    for (int i = 0; i < g.n_cells; ++i) {
      l2_1 += std::pow(s.state.u1[i] - u1s, 2);
      l2_2 += std::pow(s.state.u2[i] - u2s, 2);
    }
    const double lhs =
        std::sqrt(l2_1 * g.spacing()) + std::sqrt(l2_2 * g.spacing());
    CHECK(lhs <= front * std::exp(-0.5 * *chi * s.time) + 1e-12);
  }
}

TEST_CASE("step Jacobians match finite differences in both modes") {
  ModelParams p;
  p.delta = -1.5;
  p.alpha = 0.7;
  p.u1_mean = 0.45;
  Grid g(24, 6.0);
  p.length = g.length;
  const int n = g.n_cells;

  std::mt19937_64 rng(31415);
  std::uniform_real_distribution<double> u01(0.15, 0.85);
  std::normal_distribution<double> nd;

  StateField prev(g);
  for (int i = 0; i < n; ++i) {
    prev.u1[i] = u01(rng);
    prev.u2[i] = 0.5 * nd(rng);
  }

  for (TimeStepMode mode :
       {TimeStepMode::EntropyVariables, TimeStepMode::Primal}) {
    TimeStepperConfig cfg;
    cfg.mode = mode;
    cfg.tau = 0.07;
    cfg.eps_reg = 1e-4;

    Eigen::VectorXd x(2 * n);
    if (mode == TimeStepMode::EntropyVariables) {
      for (int i = 0; i < n; ++i) {
        x[i] = model::h0_prime(u01(rng), p);
        x[n + i] = 0.3 * nd(rng);
      }
    } else {
      for (int i = 0; i < n; ++i) {
        x[i] = u01(rng);
        x[n + i] = 0.5 * nd(rng);
      }
    }

    const Eigen::MatrixXd jac = Eigen::MatrixXd(
        time_integrator::step_jacobian(x, prev, p, cfg));
    const Eigen::VectorXd r0 = time_integrator::step_residual(x, prev, p, cfg);
    const double scale = jac.cwiseAbs().maxCoeff();
    for (int j = 0; j < 2 * n; ++j) {
      const double e = 1e-7 * std::max(1.0, std::abs(x[j]));
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += e;
      xm[j] -= e;
      const Eigen::VectorXd col =
          (time_integrator::step_residual(xp, prev, p, cfg) -
           time_integrator::step_residual(xm, prev, p, cfg)) /
          (2.0 * e);
      for (int i = 0; i < 2 * n; ++i) {
        CHECK(std::abs(jac(i, j) - col[i]) <= 1e-6 * scale);
      }
    }
    (void)r0;
  }
}

TEST_CASE("entropy and primal modes agree under joint refinement") {
  // The two modes share the time discretization but differ in the spatial
  // treatment of the u1 diffusion (g(u1_face) * d h0'(u1) versus d u1), so
  // their mismatch is O(h^2) with a negligible tau dependence. Joint
  // (tau, h) refinement must send it to zero at second order.
  ModelParams p;
  p.delta = 1.0;
  p.alpha = 1.0;
  p.u1_mean = 0.5;
  p.length = 2.0;

  auto diff = [&](int n, double tau) {
    Grid g(n, p.length);
    TimeStepperConfig ce;
    ce.mode = TimeStepMode::EntropyVariables;
    ce.tau = tau;
    ce.t_final = 0.4;
    ce.eps_reg = 1e-12;
    // residual entries scale like 1/h^2; keep the tolerance above roundoff
    ce.newton_tol = 1e-10;
    TimeStepperConfig cp = ce;
    cp.mode = TimeStepMode::Primal;
    cp.eps_reg = 0.0;
    const StateField init = cosine_perturbation(g, p, 0.15, 1);
    const Trajectory te = time_integrator::evolve(init, p, ce);
    const Trajectory tp = time_integrator::evolve(init, p, cp);
    REQUIRE(te.completed);
    REQUIRE(tp.completed);
    const StateField& a = te.samples.back().state;
    const StateField& b = tp.samples.back().state;
    return (a.u1 - b.u1).lpNorm<Eigen::Infinity>() +
           (a.u2 - b.u2).lpNorm<Eigen::Infinity>();
  };

  const double d1 = diff(64, 0.08);
  const double d2 = diff(128, 0.04);
  const double d3 = diff(256, 0.02);
  CHECK(d2 < d1);
  CHECK(d3 < d2);
  CHECK(d1 / d2 == doctest::Approx(4.0).epsilon(0.3));
  CHECK(d2 / d3 == doctest::Approx(4.0).epsilon(0.3));
}

TEST_CASE("evolve aborts with a partial trajectory on persistent failure") {
  ModelParams p;
  p.delta = 1.0;
  Grid g(16, p.length);
  TimeStepperConfig cfg;
  cfg.mode = TimeStepMode::EntropyVariables;
  cfg.tau = 1.0;
  cfg.t_final = 2.0;
  cfg.newton_max_iter = 1;  // guarantees step failure
  cfg.newton_tol = 1e-16;
  const Trajectory traj =
      time_integrator::evolve(cosine_perturbation(g, p, 0.4, 1), p, cfg);
  CHECK_FALSE(traj.completed);
  CHECK_FALSE(traj.error.empty());
  CHECK(traj.samples.size() >= 1);
}

TEST_SUITE_END();
