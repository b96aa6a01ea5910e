#include "herdlab/time_integrator.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>

namespace herdlab {

void TimeStepperConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  if (!(eps_reg >= 0.0)) throw std::invalid_argument("eps_reg must be >= 0");
  if (mode == TimeStepMode::EntropyVariables && !(eps_reg > 0.0)) {
    throw std::invalid_argument(
        "eps_reg must be > 0 in entropy-variable mode (coercivity)");
  }
  if (!(newton_tol > 0.0)) throw std::invalid_argument("newton_tol must be > 0");
  if (newton_max_iter < 1) {
    throw std::invalid_argument("newton_max_iter must be >= 1");
  }
}

namespace time_integrator {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

struct NewtonSystem {
  Eigen::VectorXd residual;
  SpMat jacobian;
};

/// Residual and Jacobian of the entropy-variable step. Unknowns are stacked
/// [w1; w2]. The w -> u map is u1 = (h0')^{-1}(w1), u2 = delta0*w2, which
/// keeps u1 strictly inside (0,1) for any finite w1.
NewtonSystem assemble_entropy(const Eigen::VectorXd& w, const StateField& prev,
                              const ModelParams& p,
                              const TimeStepperConfig& cfg) {
  const Grid& grid = prev.grid;
  const int n = grid.n_cells;
  const double h = grid.spacing();
  const double inv_h = 1.0 / h;
  const double inv_h2 = inv_h * inv_h;
  const double d0 = model::delta0(p);
  const double eps = cfg.eps_reg;
  const double inv_tau = 1.0 / cfg.tau;

  Eigen::VectorXd u1(n), du1dw(n);
  for (int i = 0; i < n; ++i) {
    u1[i] = model::h0_prime_inverse(w[i], p);
    du1dw[i] = model::g_eval(u1[i], p);  // d/dw (h0')^{-1} = 1/h0'' = g
  }

  Eigen::VectorXd res = Eigen::VectorXd::Zero(2 * n);
  Triplets trip;
  trip.reserve(16 * n);
  auto add = [&](int r, int c, double v) { trip.emplace_back(r, c, v); };

  // Time derivative, regularization mass term, and reaction.
  for (int i = 0; i < n; ++i) {
    const double u2 = d0 * w[n + i];
    res[i] += (u1[i] - prev.u1[i]) * inv_tau + eps * w[i];
    add(i, i, du1dw[i] * inv_tau + eps);
    res[n + i] += (u2 - prev.u2[i]) * inv_tau + eps * w[n + i] -
                  (model::f_eval(u1[i], p) - p.alpha * u2);
    add(n + i, i, -model::f_prime(u1[i], p) * du1dw[i]);
    add(n + i, n + i, d0 * inv_tau + eps + p.alpha * d0);
  }

  // B-fluxes at interior faces and the H1 regularization stencil. Boundary
  // fluxes vanish (no-flux), so only interior faces contribute.
  for (int f = 0; f < n - 1; ++f) {
    const int i = f, j = f + 1;
    const double u1f = 0.5 * (u1[i] + u1[j]);
    const double gf = model::g_eval(u1f, p);
    const double dgf_i = 0.5 * model::g_prime(u1f, p) * du1dw[i];
    const double dgf_j = 0.5 * model::g_prime(u1f, p) * du1dw[j];
    const double dw1 = (w[j] - w[i]) * inv_h;
    const double dw2 = (w[n + j] - w[n + i]) * inv_h;

    const double flux1 = gf * (dw1 - d0 * dw2);
    const double flux2 = p.delta * gf * dw1 + d0 * p.kappa * dw2;

    // div contribution: -(G_f - G_{f-1})/h -> cell i gets +G_f/h sign flip.
    // r1 rows.
    res[i] -= flux1 * inv_h;
    res[j] += flux1 * inv_h;
    // r2 rows.
    res[n + i] -= flux2 * inv_h;
    res[n + j] += flux2 * inv_h;

    const double d_flux1[4] = {
        dgf_i * (dw1 - d0 * dw2) - gf * inv_h,  // d/dw1_i
        dgf_j * (dw1 - d0 * dw2) + gf * inv_h,  // d/dw1_j
        gf * d0 * inv_h,                        // d/dw2_i
        -gf * d0 * inv_h                        // d/dw2_j
    };
    const double d_flux2[4] = {
        p.delta * (dgf_i * dw1 - gf * inv_h),  // d/dw1_i
        p.delta * (dgf_j * dw1 + gf * inv_h),  // d/dw1_j
        -d0 * p.kappa * inv_h,                 // d/dw2_i
        d0 * p.kappa * inv_h                   // d/dw2_j
    };
    const int cols[4] = {i, j, n + i, n + j};
    for (int k = 0; k < 4; ++k) {
      add(i, cols[k], -d_flux1[k] * inv_h);
      add(j, cols[k], d_flux1[k] * inv_h);
      add(n + i, cols[k], -d_flux2[k] * inv_h);
      add(n + j, cols[k], d_flux2[k] * inv_h);
    }

    // eps * (-Laplacian) acting on both w components, assembled per face.
    for (int comp = 0; comp < 2; ++comp) {
      const int a = comp * n + i, b = comp * n + j;
      const double dwc = (w[b] - w[a]) * inv_h;
      res[a] -= eps * dwc * inv_h;
      res[b] += eps * dwc * inv_h;
      add(a, a, eps * inv_h2);
      add(a, b, -eps * inv_h2);
      add(b, b, eps * inv_h2);
      add(b, a, -eps * inv_h2);
    }
  }

  NewtonSystem sys;
  sys.residual = std::move(res);
  sys.jacobian.resize(2 * n, 2 * n);
  sys.jacobian.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

/// Residual and Jacobian of the primal step; unknowns stacked [u1; u2].
NewtonSystem assemble_primal(const Eigen::VectorXd& u, const StateField& prev,
                             const ModelParams& p,
                             const TimeStepperConfig& cfg) {
  const Grid& grid = prev.grid;
  const int n = grid.n_cells;
  const double h = grid.spacing();
  const double inv_h = 1.0 / h;
  const double inv_tau = 1.0 / cfg.tau;

  Eigen::VectorXd res = Eigen::VectorXd::Zero(2 * n);
  Triplets trip;
  trip.reserve(16 * n);
  auto add = [&](int r, int c, double v) { trip.emplace_back(r, c, v); };

  for (int i = 0; i < n; ++i) {
    res[i] += (u[i] - prev.u1[i]) * inv_tau;
    add(i, i, inv_tau);
    res[n + i] += (u[n + i] - prev.u2[i]) * inv_tau -
                  model::f_extended(u[i], p) + p.alpha * u[n + i];
    add(n + i, i, -model::f_prime_extended(u[i], p));
    add(n + i, n + i, inv_tau + p.alpha);
  }

  for (int f = 0; f < n - 1; ++f) {
    const int i = f, j = f + 1;
    const double u1f = 0.5 * (u[i] + u[j]);
    const double gf = model::g_extended(u1f, p);
    const double gpf = 0.5 * model::g_prime_extended(u1f, p);
    const double du1 = (u[j] - u[i]) * inv_h;
    const double du2 = (u[n + j] - u[n + i]) * inv_h;

    const double flux1 = du1 - gf * du2;
    const double flux2 = p.delta * du1 + p.kappa * du2;

    res[i] -= flux1 * inv_h;
    res[j] += flux1 * inv_h;
    res[n + i] -= flux2 * inv_h;
    res[n + j] += flux2 * inv_h;

    const double d_flux1[4] = {
        -inv_h - gpf * du2,  // d/du1_i
        inv_h - gpf * du2,   // d/du1_j
        gf * inv_h,          // d/du2_i
        -gf * inv_h          // d/du2_j
    };
    const double d_flux2[4] = {-p.delta * inv_h, p.delta * inv_h,
                               -p.kappa * inv_h, p.kappa * inv_h};
    const int cols[4] = {i, j, n + i, n + j};
    for (int k = 0; k < 4; ++k) {
      add(i, cols[k], -d_flux1[k] * inv_h);
      add(j, cols[k], d_flux1[k] * inv_h);
      add(n + i, cols[k], -d_flux2[k] * inv_h);
      add(n + j, cols[k], d_flux2[k] * inv_h);
    }
  }

  NewtonSystem sys;
  sys.residual = std::move(res);
  sys.jacobian.resize(2 * n, 2 * n);
  sys.jacobian.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

template <typename Assembler>
Eigen::VectorXd newton_iterate(Eigen::VectorXd x, const Assembler& assemble,
                               const TimeStepperConfig& cfg,
                               const char* what) {
  double res_norm = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.newton_max_iter; ++it) {
    NewtonSystem sys = assemble(x);
    res_norm = sys.residual.lpNorm<Eigen::Infinity>();
    if (res_norm <= cfg.newton_tol) return x;

    Eigen::SparseLU<SpMat> lu(sys.jacobian);
    if (lu.info() != Eigen::Success) {
      throw step_error(std::string(what) +
                       ": singular Jacobian; try a smaller tau");
    }
    const Eigen::VectorXd dx = lu.solve(sys.residual);

    // Half-step backtracking on residual increase; the w -> u map is stiff
    // near u1 in {0,1}.
    double lambda = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 8; ++bt) {
      Eigen::VectorXd cand = x - lambda * dx;
      const Eigen::VectorXd cand_res = assemble(cand).residual;
      const double cand_norm = cand_res.lpNorm<Eigen::Infinity>();
      if (cand_norm < res_norm) {
        x = std::move(cand);
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) x -= lambda * dx;  // take the smallest damped step anyway
  }
  const double final_norm =
      std::isfinite(res_norm) ? res_norm : std::numeric_limits<double>::max();
  if (final_norm > cfg.newton_tol) {
    throw step_error(std::string(what) + ": Newton did not converge (" +
                     std::to_string(final_norm) +
                     " residual); try a smaller tau");
  }
  return x;
}

}  // namespace

StateField step_entropy_variables(const StateField& prev, const ModelParams& p,
                                  const TimeStepperConfig& cfg) {
  cfg.validate();
  const int n = prev.grid.n_cells;
  const double d0 = model::delta0(p);

  Eigen::VectorXd w(2 * n);
  for (int i = 0; i < n; ++i) {
    w[i] = model::h0_prime(prev.u1[i], p);  // throws unless strictly interior
    w[n + i] = prev.u2[i] / d0;
  }

  w = newton_iterate(
      std::move(w),
      [&](const Eigen::VectorXd& x) { return assemble_entropy(x, prev, p, cfg); },
      cfg, "step_entropy_variables");

  StateField next(prev.grid);
  for (int i = 0; i < n; ++i) {
    next.u1[i] = model::h0_prime_inverse(w[i], p);
    next.u2[i] = d0 * w[n + i];
  }
  return next;
}

StateField step_primal(const StateField& prev, const ModelParams& p,
                       const TimeStepperConfig& cfg) {
  cfg.validate();
  const int n = prev.grid.n_cells;
  Eigen::VectorXd u(2 * n);
  u.head(n) = prev.u1;
  u.tail(n) = prev.u2;

  u = newton_iterate(
      std::move(u),
      [&](const Eigen::VectorXd& x) { return assemble_primal(x, prev, p, cfg); },
      cfg, "step_primal");

  StateField next(prev.grid);
  next.u1 = u.head(n);
  next.u2 = u.tail(n);
  return next;
}

namespace {

/// EntropyReport with a clamped fallback so slightly out-of-bounds primal
/// states still yield diagnostics (recorded as a warning by evolve).
EntropyReport report_or_clamp(const StateField& s, const ModelParams& p,
                              double t, bool* clamped) {
  try {
    return grid_ops::entropy_report(s, p, t);
  } catch (const std::domain_error&) {
    StateField c = s;
    for (int i = 0; i < c.grid.n_cells; ++i) {
      c.u1[i] = std::clamp(c.u1[i], 1e-14, 1.0 - 1e-14);
    }
    if (clamped) *clamped = true;
    return grid_ops::entropy_report(c, p, t);
  }
}

}  // namespace

Trajectory evolve(const StateField& initial, const ModelParams& p,
                  const TimeStepperConfig& cfg) {
  cfg.validate();
  if (!(cfg.t_final > 0.0)) {
    throw std::invalid_argument("evolve: t_final must be > 0");
  }

  Trajectory traj;
  double t = 0.0;
  double tau = cfg.tau;
  TimeStepperConfig step_cfg = cfg;

  bool clamped = false;
  traj.samples.push_back({0.0, initial, report_or_clamp(initial, p, 0.0, &clamped)});

  StateField current = initial;
  int halvings = 0;
  while (t < cfg.t_final - 1e-12 * cfg.t_final) {
    step_cfg.tau = std::min(tau, cfg.t_final - t);
    try {
      StateField next = (cfg.mode == TimeStepMode::EntropyVariables)
                            ? step_entropy_variables(current, p, step_cfg)
                            : step_primal(current, p, step_cfg);
      t += step_cfg.tau;
      if (cfg.mode == TimeStepMode::Primal) {
        const double lo = next.u1.minCoeff(), hi = next.u1.maxCoeff();
        if (lo < -1e-8 || hi > 1.0 + 1e-8) {
          traj.warnings.push_back("u1 out of [0,1] beyond 1e-8 at t=" +
                                  std::to_string(t));
        }
      }
      bool was_clamped = false;
      EntropyReport rep = report_or_clamp(next, p, t, &was_clamped);
      if (was_clamped && !clamped) {
        traj.warnings.push_back("entropy report clamped u1 into (0,1)");
        clamped = true;
      }
      traj.samples.push_back({t, next, rep});
      current = std::move(next);
    } catch (const step_error& e) {
      if (++halvings > 10) {
        traj.error = std::string("aborted after 10 tau halvings: ") + e.what();
        return traj;
      }
      tau *= 0.5;
    }
  }
  traj.completed = true;
  return traj;
}

Eigen::VectorXd step_residual(const Eigen::VectorXd& iterate,
                              const StateField& state_prev,
                              const ModelParams& p,
                              const TimeStepperConfig& cfg) {
  return (cfg.mode == TimeStepMode::EntropyVariables)
             ? assemble_entropy(iterate, state_prev, p, cfg).residual
             : assemble_primal(iterate, state_prev, p, cfg).residual;
}

Eigen::SparseMatrix<double> step_jacobian(const Eigen::VectorXd& iterate,
                                          const StateField& state_prev,
                                          const ModelParams& p,
                                          const TimeStepperConfig& cfg) {
  return (cfg.mode == TimeStepMode::EntropyVariables)
             ? assemble_entropy(iterate, state_prev, p, cfg).jacobian
             : assemble_primal(iterate, state_prev, p, cfg).jacobian;
}

double fit_decay_rate(const Trajectory& trajectory) {
  std::vector<std::pair<double, double>> valid;  // (t, log rel_ent)
  for (const auto& s : trajectory.samples) {
    if (s.report.relative_entropy > 1e-14) {
      valid.emplace_back(s.time, std::log(s.report.relative_entropy));
    }
  }
  if (valid.empty()) {
    throw std::runtime_error("fit_decay_rate: no decay measurable "
                             "(relative entropy below 1e-14 everywhere)");
  }
  if (valid.size() < 10) {
    throw std::invalid_argument(
        "fit_decay_rate: needs >= 10 samples with positive relative entropy");
  }
  const std::size_t begin = valid.size() / 2;
  const std::size_t m = valid.size() - begin;
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (std::size_t i = begin; i < valid.size(); ++i) {
    st += valid[i].first;
    sy += valid[i].second;
    stt += valid[i].first * valid[i].first;
    sty += valid[i].first * valid[i].second;
  }
  const double denom = m * stt - st * st;
  if (denom == 0.0) {
    throw std::runtime_error("fit_decay_rate: degenerate time samples");
  }
  const double slope = (m * sty - st * sy) / denom;
  return -slope;
}

}  // namespace time_integrator
}  // namespace herdlab
