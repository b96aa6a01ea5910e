#include "herdlab/continuation.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace herdlab {

const char* to_string(ActiveParameter p) {
  switch (p) {
    case ActiveParameter::Delta: return "delta";
    case ActiveParameter::Rho: return "rho";
    case ActiveParameter::Kappa: return "kappa";
    case ActiveParameter::Alpha: return "alpha";
    case ActiveParameter::Length: return "length";
  }
  return "?";
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::RangeBoundary: return "range boundary";
    case StopReason::DgDegeneracy: return "D_g degeneracy";
    case StopReason::StepFailure: return "step failure";
    case StopReason::MaxPoints: return "max points";
    case StopReason::NotStarted: return "not started";
  }
  return "?";
}

double get_parameter(const ModelParams& p, ActiveParameter which) {
  switch (which) {
    case ActiveParameter::Delta: return p.delta;
    case ActiveParameter::Rho: return p.rho;
    case ActiveParameter::Kappa: return p.kappa;
    case ActiveParameter::Alpha: return p.alpha;
    case ActiveParameter::Length: return p.length;
  }
  return 0.0;
}

void set_parameter(ModelParams& p, ActiveParameter which, double value) {
  switch (which) {
    case ActiveParameter::Delta: p.delta = value; break;
    case ActiveParameter::Rho: p.rho = value; break;
    case ActiveParameter::Kappa: p.kappa = value; break;
    case ActiveParameter::Alpha: p.alpha = value; break;
    case ActiveParameter::Length: p.length = value; break;
  }
}

ModelParams Branch::params_at(double value) const {
  ModelParams p = base_params;
  set_parameter(p, parameter, value);
  return p;
}

namespace continuation {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

StateField make_state(const Eigen::VectorXd& y, int n, const ModelParams& p) {
  StateField s(Grid(n, p.length));
  s.u1 = y.head(n);
  s.u2 = y.tail(n);
  return s;
}

Eigen::VectorXd stack_state(const StateField& s) {
  Eigen::VectorXd y(2 * s.grid.n_cells);
  y.head(s.grid.n_cells) = s.u1;
  y.tail(s.grid.n_cells) = s.u2;
  return y;
}

Eigen::VectorXd residual_raw(const Eigen::VectorXd& y, int n,
                             const ModelParams& p) {
  const double h = p.length / n;
  const double inv_h = 1.0 / h;

  Eigen::VectorXd res = Eigen::VectorXd::Zero(2 * n);
  for (int i = 0; i < n; ++i) {
    res[i] -= p.rho * (y[i] - p.u1_mean);
    res[n + i] += model::f_extended(y[i], p) - p.alpha * y[n + i];
  }
  for (int f = 0; f < n - 1; ++f) {
    const int i = f, j = f + 1;
    const double gf = model::g_extended(0.5 * (y[i] + y[j]), p);
    const double du1 = (y[j] - y[i]) * inv_h;
    const double du2 = (y[n + j] - y[n + i]) * inv_h;
    const double flux1 = du1 - gf * du2;
    const double flux2 = p.delta * du1 + p.kappa * du2;
    // Face flux enters the divergence of cell i with +, of cell j with -.
    res[i] += flux1 * inv_h;
    res[j] -= flux1 * inv_h;
    res[n + i] += flux2 * inv_h;
    res[n + j] -= flux2 * inv_h;
  }
  return res;
}

SpMat jacobian_raw(const Eigen::VectorXd& y, int n, const ModelParams& p) {
  const double h = p.length / n;
  const double inv_h = 1.0 / h;

  Triplets trip;
  trip.reserve(16 * n);
  auto add = [&](int r, int c, double v) { trip.emplace_back(r, c, v); };

  for (int i = 0; i < n; ++i) {
    add(i, i, -p.rho);
    add(n + i, i, model::f_prime_extended(y[i], p));
    add(n + i, n + i, -p.alpha);
  }
  for (int f = 0; f < n - 1; ++f) {
    const int i = f, j = f + 1;
    const double u1f = 0.5 * (y[i] + y[j]);
    const double gf = model::g_extended(u1f, p);
    const double gpf = 0.5 * model::g_prime_extended(u1f, p);
    const double du2 = (y[n + j] - y[n + i]) * inv_h;

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
      add(i, cols[k], d_flux1[k] * inv_h);
      add(j, cols[k], -d_flux1[k] * inv_h);
      add(n + i, cols[k], d_flux2[k] * inv_h);
      add(n + j, cols[k], -d_flux2[k] * inv_h);
    }
  }
  SpMat jac(2 * n, 2 * n);
  jac.setFromTriplets(trip.begin(), trip.end());
  return jac;
}

Eigen::VectorXd parameter_derivative_raw(const Eigen::VectorXd& y, int n,
                                         const ModelParams& p,
                                         ActiveParameter which) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(2 * n);
  const double h = p.length / n;
  const double inv_h2 = 1.0 / (h * h);
  switch (which) {
    case ActiveParameter::Delta:
      // d/d delta of the delta * u1'' rows: discrete Neumann Laplacian of u1.
      for (int i = 0; i < n; ++i) {
        const double left = (i > 0) ? y[i - 1] : y[i];
        const double right = (i < n - 1) ? y[i + 1] : y[i];
        d[n + i] = (left - 2.0 * y[i] + right) * inv_h2;
      }
      return d;
    case ActiveParameter::Kappa:
      for (int i = 0; i < n; ++i) {
        const double left = (i > 0) ? y[n + i - 1] : y[n + i];
        const double right = (i < n - 1) ? y[n + i + 1] : y[n + i];
        d[n + i] = (left - 2.0 * y[n + i] + right) * inv_h2;
      }
      return d;
    case ActiveParameter::Rho:
      for (int i = 0; i < n; ++i) d[i] = -(y[i] - p.u1_mean);
      return d;
    case ActiveParameter::Alpha:
      for (int i = 0; i < n; ++i) d[n + i] = -y[n + i];
      return d;
    case ActiveParameter::Length: {
      // Central finite difference; the geometry enters through h = length/n.
      const double e = 1e-7 * std::max(1.0, std::abs(p.length));
      ModelParams pp = p, pm = p;
      pp.length += e;
      pm.length -= e;
      return (residual_raw(y, n, pp) - residual_raw(y, n, pm)) / (2.0 * e);
    }
  }
  return d;
}

double dg_min_raw(const Eigen::VectorXd& y, int n, const ModelParams& p) {
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    m = std::min(m, std::abs(p.kappa + p.delta * model::g_extended(y[i], p)));
  }
  return m;
}

/// Sign classification of the D_g field: +1 / -1 when every node has that
/// sign, 0 when the field straddles zero (solutions crossing the degeneracy
/// pointwise in x are fine; a full-field flip between consecutive branch
/// points is the delta_d degeneracy).
int dg_sign_class(const Eigen::VectorXd& y, int n, const ModelParams& p) {
  bool any_pos = false, any_neg = false;
  for (int i = 0; i < n; ++i) {
    const double d = p.kappa + p.delta * model::g_extended(y[i], p);
    (d >= 0.0 ? any_pos : any_neg) = true;
  }
  if (any_pos && any_neg) return 0;
  return any_pos ? 1 : -1;
}

struct LuOrDense {
  Eigen::SparseLU<SpMat> lu;
  bool ok = false;
  explicit LuOrDense(const SpMat& m) {
    lu.compute(m);
    ok = (lu.info() == Eigen::Success);
  }
};

Eigen::VectorXd newton_solve_raw(Eigen::VectorXd y, int n,
                                 const ModelParams& p, double tol,
                                 int max_iter, NewtonInfo* info) {
  double res_norm = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd res = residual_raw(y, n, p);
    res_norm = res.lpNorm<Eigen::Infinity>();
    if (info) {
      info->iterations = it;
      info->residual_norm = res_norm;
    }
    if (res_norm <= tol) return y;
    if (!std::isfinite(res_norm) || y.lpNorm<Eigen::Infinity>() > 1e8) {
      throw newton_error("newton_solve: iterates diverged");
    }

    LuOrDense fac(jacobian_raw(y, n, p));
    if (!fac.ok) throw newton_error("newton_solve: singular Jacobian");
    const Eigen::VectorXd dy = fac.lu.solve(res);

    double lambda = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 8; ++bt) {
      Eigen::VectorXd cand = y - lambda * dy;
      const double cand_norm =
          residual_raw(cand, n, p).lpNorm<Eigen::Infinity>();
      if (cand_norm < res_norm) {
        y = std::move(cand);
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) y -= lambda * dy;
  }
  const double final_norm = residual_raw(y, n, p).lpNorm<Eigen::Infinity>();
  if (info) info->residual_norm = final_norm;
  if (final_norm > tol) {
    throw newton_error("newton_solve: no convergence, residual " +
                       std::to_string(final_norm));
  }
  return y;
}

std::pair<double, Eigen::VectorXd> smallest_singular_pair_raw(
    const SpMat& jac) {
  const int m = static_cast<int>(jac.rows());
  LuOrDense fac(jac);
  if (!fac.ok) {
    // Numerically singular: fall back to a dense SVD.
    Eigen::MatrixXd dense(jac);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dense, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    return {sv[m - 1], svd.matrixV().col(m - 1)};
  }

  // Inverse iteration on J^T J: x = J^{-1} J^{-T} v converges onto the right
  // singular vector of the smallest singular value.
  std::mt19937_64 rng(0x9E3779B97F4A7C15ull);
  std::normal_distribution<double> dist;
  Eigen::VectorXd v(m);
  for (int i = 0; i < m; ++i) v[i] = dist(rng);
  v.normalize();

  double lambda = 0.0;
  for (int it = 0; it < 64; ++it) {
    Eigen::VectorXd x = fac.lu.solve(fac.lu.adjoint().solve(v));
    const double nx = x.norm();
    if (!std::isfinite(nx) || nx == 0.0) break;
    x /= nx;
    const double drift = std::min((x - v).norm(), (x + v).norm());
    v = x;
    lambda = nx;
    if (drift < 1e-11 && it > 2) break;
  }
  const double sigma = (lambda > 0.0) ? 1.0 / std::sqrt(lambda) : 0.0;
  return {sigma, v};
}

/// Left null-direction estimate (inverse iteration on J J^T).
Eigen::VectorXd left_null_estimate(const SpMat& jac) {
  const int m = static_cast<int>(jac.rows());
  LuOrDense fac(jac);
  std::mt19937_64 rng(0xC2B2AE3D27D4EB4Full);
  std::normal_distribution<double> dist;
  Eigen::VectorXd v(m);
  for (int i = 0; i < m; ++i) v[i] = dist(rng);
  v.normalize();
  if (!fac.ok) return v;
  for (int it = 0; it < 32; ++it) {
    Eigen::VectorXd x = fac.lu.adjoint().solve(fac.lu.solve(v));
    const double nx = x.norm();
    if (!std::isfinite(nx) || nx == 0.0) break;
    v = x / nx;
  }
  return v;
}

/// Pseudo-arclength state shared by branch tracing and branch switching.
/// Works on raw stacked vectors; StateFields are materialized with the
/// parameters of each point (the grid geometry follows params.length).
struct Tracer {
  int n;
  ModelParams base;
  ActiveParameter which;
  const ContinuationConfig& cfg;
  double state_weight;

  Tracer(int n_, const ModelParams& b, ActiveParameter w,
         const ContinuationConfig& c)
      : n(n_), base(b), which(w), cfg(c), state_weight(1.0 / (2.0 * n_)) {}

  ModelParams params_at(double p) const {
    ModelParams q = base;
    set_parameter(q, which, p);
    return q;
  }

  double dot(const Eigen::VectorXd& ya, double pa, const Eigen::VectorXd& yb,
             double pb) const {
    return state_weight * ya.dot(yb) + pa * pb;
  }

  double norm(const Eigen::VectorXd& y, double p) const {
    return std::sqrt(dot(y, p, y, p));
  }

  SpMat bordered(const SpMat& jac, const Eigen::VectorXd& fp,
                 const Eigen::VectorXd& ty, double tp) const {
    Triplets trip;
    trip.reserve(jac.nonZeros() + 4 * n + 2);
    for (int k = 0; k < jac.outerSize(); ++k) {
      for (SpMat::InnerIterator it(jac, k); it; ++it) {
        trip.emplace_back(static_cast<int>(it.row()),
                          static_cast<int>(it.col()), it.value());
      }
    }
    for (int i = 0; i < 2 * n; ++i) {
      if (fp[i] != 0.0) trip.emplace_back(i, 2 * n, fp[i]);
      const double w = state_weight * ty[i];
      if (w != 0.0) trip.emplace_back(2 * n, i, w);
    }
    trip.emplace_back(2 * n, 2 * n, tp);
    SpMat ext(2 * n + 1, 2 * n + 1);
    ext.setFromTriplets(trip.begin(), trip.end());
    return ext;
  }

  /// Tangent through the bordered system [J, F_p; prev tangent row] t = e_last.
  bool tangent(const Eigen::VectorXd& y, double p,
               const Eigen::VectorXd& prev_ty, double prev_tp,
               Eigen::VectorXd* ty, double* tp) const {
    const ModelParams q = params_at(p);
    const SpMat ext = bordered(jacobian_raw(y, n, q),
                               parameter_derivative_raw(y, n, q, which),
                               prev_ty, prev_tp);
    LuOrDense fac(ext);
    if (!fac.ok) return false;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * n + 1);
    rhs[2 * n] = 1.0;
    const Eigen::VectorXd t = fac.lu.solve(rhs);
    if (!t.allFinite()) return false;
    Eigen::VectorXd t_y = t.head(2 * n);
    double t_p = t[2 * n];
    const double nrm = norm(t_y, t_p);
    if (!(nrm > 0.0) || !std::isfinite(nrm)) return false;
    *ty = t_y / nrm;
    *tp = t_p / nrm;
    return true;
  }

  /// Corrector: Newton on [F(y,p); <T, Y - Ypred>] = 0.
  bool correct(Eigen::VectorXd* y, double* p, const Eigen::VectorXd& ty,
               double tp, const Eigen::VectorXd& y_pred, double p_pred,
               int* iters_out) const {
    for (int it = 0; it < cfg.max_newton_iter; ++it) {
      const ModelParams q = params_at(*p);
      const Eigen::VectorXd res = residual_raw(*y, n, q);
      const double res_norm = res.lpNorm<Eigen::Infinity>();
      if (iters_out) *iters_out = it;
      if (res_norm <= cfg.tol) return true;
      if (!std::isfinite(res_norm) ||
          y->lpNorm<Eigen::Infinity>() > 1e8) {
        return false;
      }

      const SpMat ext = bordered(jacobian_raw(*y, n, q),
                                 parameter_derivative_raw(*y, n, q, which),
                                 ty, tp);
      LuOrDense fac(ext);
      if (!fac.ok) return false;

      Eigen::VectorXd rhs(2 * n + 1);
      rhs.head(2 * n) = res;
      rhs[2 * n] = dot(*y - y_pred, *p - p_pred, ty, tp);
      const Eigen::VectorXd dz = fac.lu.solve(rhs);
      if (!dz.allFinite()) return false;
      *y -= dz.head(2 * n);
      *p -= dz[2 * n];
    }
    return residual_raw(*y, n, params_at(*p)).lpNorm<Eigen::Infinity>() <=
           cfg.tol;
  }

  BranchPoint make_point(const Eigen::VectorXd& y, double p,
                         const Eigen::VectorXd& ty, double tp) const {
    const ModelParams q = params_at(p);
    BranchPoint bp;
    bp.parameter_value = p;
    bp.state = make_state(y, n, q);
    bp.l2_norm = solution_l2_norm(bp.state);
    bp.tangent.resize(2 * n + 1);
    bp.tangent.head(2 * n) = ty;
    bp.tangent[2 * n] = tp;
    bp.n_interfaces = count_interfaces(bp.state, q.u1_mean);
    bp.dg_min = dg_min_raw(y, n, q);

    const SpMat jac = jacobian_raw(y, n, q);
    LuOrDense fac(jac);
    bp.det_sign = fac.ok ? static_cast<int>(fac.lu.signDeterminant()) : 0;
    if (cfg.track_singular_values) {
      bp.smallest_singular_value = smallest_singular_pair_raw(jac).first;
    }
    return bp;
  }

  /// Main predictor-corrector loop. The first point (y, p) must already be
  /// corrected; (ty, tp) is its outgoing unit tangent.
  Branch trace(Eigen::VectorXd y, double p, Eigen::VectorXd ty, double tp,
               double step, std::pair<double, double> range) const {
    Branch branch;
    branch.base_params = base;
    branch.parameter = which;
    branch.points.push_back(make_point(y, p, ty, tp));

    int dg_class = dg_sign_class(y, n, params_at(p));
    bool degeneracy_blocked = false;

    while (true) {
      if (static_cast<int>(branch.points.size()) >= cfg.max_points) {
        branch.stop_reason = StopReason::MaxPoints;
        branch.stop_note = "max_points reached";
        return branch;
      }

      Eigen::VectorXd y_pred = y + step * ty;
      double p_pred = p + step * tp;
      Eigen::VectorXd y_new = y_pred;
      double p_new = p_pred;
      int iters = 0;
      bool ok = correct(&y_new, &p_new, ty, tp, y_pred, p_pred, &iters);

      if (ok) {
        const ModelParams q_new = params_at(p_new);
        if (dg_min_raw(y_new, n, q_new) < cfg.dg_floor) {
          ok = false;  // never accept a solution inside the degeneracy zone
          degeneracy_blocked = true;
        } else {
          const int cls = dg_sign_class(y_new, n, q_new);
          if (dg_class != 0 && cls == -dg_class) {
            // The whole D_g field flipped sign across this step: the branch
            // crossed the delta_d degeneracy. Halving localizes it.
            ok = false;
            degeneracy_blocked = true;
          }
        }
      }

      if (ok && (p_new < range.first || p_new > range.second)) {
        // Land exactly on the boundary with a fixed-parameter solve seeded
        // from the interpolant between the last point and the overshoot.
        const double bound =
            (p_new < range.first) ? range.first : range.second;
        const double span = p_new - p;
        const double frac = (span != 0.0) ? (bound - p) / span : 1.0;
        Eigen::VectorXd y_guess = y + frac * (y_new - y);
        try {
          Eigen::VectorXd y_bound =
              newton_solve_raw(y_guess, n, params_at(bound), cfg.tol,
                               cfg.max_newton_iter, nullptr);
          Eigen::VectorXd ty_b = ty;
          double tp_b = tp;
          tangent(y_bound, bound, ty, tp, &ty_b, &tp_b);
          branch.points.push_back(make_point(y_bound, bound, ty_b, tp_b));
          branch.stop_reason = StopReason::RangeBoundary;
          branch.stop_note = "reached " + std::to_string(bound);
          return branch;
        } catch (const newton_error&) {
          ok = false;
        }
      }

      if (!ok) {
        step *= 0.5;
        if (step < cfg.min_step) {
          if (degeneracy_blocked) {
            branch.stop_reason = StopReason::DgDegeneracy;
            branch.stop_note =
                "diffusion-matrix degeneracy, min |D_g| = " +
                std::to_string(branch.points.back().dg_min);
          } else {
            branch.stop_reason = StopReason::StepFailure;
            branch.stop_note = "corrector failed below the minimum step";
          }
          return branch;
        }
        continue;
      }
      degeneracy_blocked = false;

      Eigen::VectorXd sec_y = y_new - y;
      double sec_p = p_new - p;
      const double sn = norm(sec_y, sec_p);
      if (sn > 0.0) {
        ty = sec_y / sn;
        tp = sec_p / sn;
      }
      y = std::move(y_new);
      p = p_new;
      dg_class = dg_sign_class(y, n, params_at(p));
      branch.points.push_back(make_point(y, p, ty, tp));

      if (iters <= 3) {
        step = std::min(step * 2.0, cfg.max_step);
      } else if (iters >= 8) {
        step = std::max(step * 0.5, cfg.min_step);
      }
    }
  }
};

}  // namespace

Eigen::VectorXd bvp_residual(const StateField& state, const ModelParams& p) {
  const int n = state.grid.n_cells;
  if (state.u1.size() != n || state.u2.size() != n) {
    throw std::invalid_argument("bvp_residual: field size mismatch");
  }
  if (std::abs(state.grid.length - p.length) >
      1e-12 * std::max(1.0, p.length)) {
    throw std::invalid_argument(
        "bvp_residual: grid length disagrees with params.length");
  }
  return residual_raw(stack_state(state), n, p);
}

Eigen::SparseMatrix<double> bvp_jacobian(const StateField& state,
                                         const ModelParams& p) {
  return jacobian_raw(stack_state(state), state.grid.n_cells, p);
}

Eigen::VectorXd bvp_parameter_derivative(const StateField& state,
                                         const ModelParams& p,
                                         ActiveParameter which) {
  return parameter_derivative_raw(stack_state(state), state.grid.n_cells, p,
                                  which);
}

StateField newton_solve(const StateField& guess, const ModelParams& p,
                        double tol, int max_iter, NewtonInfo* info) {
  const int n = guess.grid.n_cells;
  Eigen::VectorXd y =
      newton_solve_raw(stack_state(guess), n, p, tol, max_iter, info);
  return make_state(y, n, p);
}

double solution_l2_norm(const StateField& state) {
  const Grid& g = state.grid;
  const Eigen::VectorXd d1 = grid_ops::centered_gradient(state.u1, g);
  const Eigen::VectorXd d2 = grid_ops::centered_gradient(state.u2, g);
  double acc = 0.0;
  for (int i = 0; i < g.n_cells; ++i) {
    acc += state.u1[i] * state.u1[i] + state.u2[i] * state.u2[i] +
           d1[i] * d1[i] + d2[i] * d2[i];
  }
  // Norm over the unit-scaled domain, matching continuation-toolkit output.
  return std::sqrt(acc * g.spacing() / g.length);
}

int count_interfaces(const StateField& state, double u1_mean,
                     double plateau_tol) {
  int count = 0;
  int last_sign = 0;
  for (int i = 0; i < state.grid.n_cells; ++i) {
    const double v = state.u1[i] - u1_mean;
    if (std::abs(v) < plateau_tol) continue;
    const int s = (v > 0.0) ? 1 : -1;
    if (last_sign != 0 && s != last_sign) ++count;
    last_sign = s;
  }
  return count;
}

double dg_min(const StateField& state, const ModelParams& p) {
  return dg_min_raw(stack_state(state), state.grid.n_cells, p);
}

std::pair<double, Eigen::VectorXd> smallest_singular_pair(const SpMat& jac) {
  return smallest_singular_pair_raw(jac);
}

std::pair<double, double> smallest_two_singular_values(const SpMat& jac) {
  Eigen::MatrixXd dense(jac);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(dense);
  const auto& sv = svd.singularValues();
  const int m = static_cast<int>(sv.size());
  return {sv[m - 1], sv[m - 2]};
}

Branch continue_branch(const StateField& start, const ModelParams& base,
                       ActiveParameter which, std::pair<double, double> range,
                       int direction, const ContinuationConfig& cfg) {
  const int n = start.grid.n_cells;
  if (range.second < range.first) std::swap(range.first, range.second);
  if (direction != 1 && direction != -1) {
    throw std::invalid_argument("continue_branch: direction must be +-1");
  }

  Tracer tr(n, base, which, cfg);
  double p = get_parameter(base, which);
  if (p < range.first || p > range.second) {
    throw std::invalid_argument(
        "continue_branch: start parameter outside range");
  }

  Eigen::VectorXd y = newton_solve_raw(stack_state(start), n, tr.params_at(p),
                                       cfg.tol, 32, nullptr);

  Eigen::VectorXd ty = Eigen::VectorXd::Zero(2 * n);
  double tp = static_cast<double>(direction);
  if (!tr.tangent(y, p, ty, tp, &ty, &tp)) {
    Branch branch;
    branch.base_params = base;
    branch.parameter = which;
    branch.stop_reason = StopReason::StepFailure;
    branch.stop_note = "tangent computation failed at the start point";
    return branch;
  }
  if (tp * direction < 0.0) {
    ty = -ty;
    tp = -tp;
  }
  return tr.trace(std::move(y), p, std::move(ty), tp, cfg.initial_step, range);
}

std::vector<Detection> detect_branch_points(
    const Branch& branch, const ContinuationConfig& cfg,
    std::vector<std::string>* warnings) {
  std::vector<Detection> out;
  if (branch.points.size() < 2) return out;
  const int n = branch.points.front().state.grid.n_cells;
  Tracer tr(n, branch.base_params, branch.parameter, cfg);

  auto det_sign_at = [&](const Eigen::VectorXd& y, double p) -> int {
    LuOrDense fac(jacobian_raw(y, n, tr.params_at(p)));
    return fac.ok ? static_cast<int>(fac.lu.signDeterminant()) : 0;
  };

  for (std::size_t k = 0; k + 1 < branch.points.size(); ++k) {
    const BranchPoint& a = branch.points[k];
    const BranchPoint& b = branch.points[k + 1];
    if (a.det_sign == 0 || b.det_sign == 0 || a.det_sign == b.det_sign) {
      continue;
    }

    // Bisection in the parameter; each probe is a fixed-parameter Newton
    // solve seeded from the interpolant of the bracketing states.
    double pa = a.parameter_value, pb = b.parameter_value;
    Eigen::VectorXd ya = stack_state(a.state), yb = stack_state(b.state);
    const int sa = a.det_sign;
    bool refine_ok = true;
    while (std::abs(pb - pa) > cfg.detect_refine_tol) {
      const double pm = 0.5 * (pa + pb);
      Eigen::VectorXd ym;
      try {
        ym = newton_solve_raw(0.5 * (ya + yb), n, tr.params_at(pm), cfg.tol,
                              cfg.max_newton_iter, nullptr);
      } catch (const newton_error&) {
        refine_ok = false;
        break;
      }
      if (det_sign_at(ym, pm) == sa) {
        pa = pm;
        ya = std::move(ym);
      } else {
        pb = pm;
        yb = std::move(ym);
      }
    }
    if (!refine_ok && warnings) {
      warnings->push_back("detection between " +
                          std::to_string(a.parameter_value) + " and " +
                          std::to_string(b.parameter_value) +
                          " could not be fully refined");
    }

    Detection d;
    d.parameter_value = 0.5 * (pa + pb);
    Eigen::VectorXd y_at = 0.5 * (ya + yb);
    const ModelParams q = tr.params_at(d.parameter_value);
    d.state = make_state(y_at, n, q);

    // The delta_d crossing flips determinant signs without being a
    // bifurcation; suppress anything inside the degeneracy zone.
    if (dg_min_raw(y_at, n, q) < cfg.dg_detect_guard) continue;

    const SpMat jac = jacobian_raw(y_at, n, q);
    auto [sigma, null_vec] = smallest_singular_pair_raw(jac);
    d.sigma_min = sigma;
    if (null_vec[0] < 0.0) null_vec = -null_vec;  // positive u1 at x = 0
    d.null_vector = null_vec;

    // Fold vs bifurcation: a fold has the parameter derivative outside the
    // range of J (nonzero component along the left null direction).
    const Eigen::VectorXd fp =
        parameter_derivative_raw(y_at, n, q, branch.parameter);
    const double fp_norm = fp.norm();
    if (fp_norm > 1e-14) {
      const Eigen::VectorXd psi = left_null_estimate(jac);
      d.is_fold = std::abs(psi.dot(fp)) > 1e-4 * fp_norm;
    }

    if (!out.empty() &&
        std::abs(out.back().parameter_value - d.parameter_value) <=
            cfg.detect_refine_tol) {
      if (warnings) {
        warnings->push_back("merged clustered detections near " +
                            std::to_string(d.parameter_value));
      }
      continue;
    }
    out.push_back(std::move(d));
  }
  return out;
}

Branch switch_branch(const Detection& at, int direction,
                     const ModelParams& base, ActiveParameter which,
                     std::pair<double, double> range,
                     const ContinuationConfig& cfg) {
  if (direction != 1 && direction != -1) {
    throw std::invalid_argument("switch_branch: direction must be +-1");
  }
  const int n = at.state.grid.n_cells;
  if (range.second < range.first) std::swap(range.first, range.second);
  Tracer tr(n, base, which, cfg);
  const double p0 = at.parameter_value;
  const Eigen::VectorXd y0 = stack_state(at.state);

  Eigen::VectorXd phi = at.null_vector;
  const double phi_norm = tr.norm(phi, 0.0);
  if (!(phi_norm > 0.0)) {
    throw std::invalid_argument("switch_branch: zero null vector");
  }
  phi /= phi_norm;

  // Amplitude relative to the state scale, capped so u1 stays inside (0,1).
  double a0 = cfg.switch_amplitude_rel * std::max(tr.norm(y0, 0.0), 1.0);
  const double phi_u1_max = phi.head(n).lpNorm<Eigen::Infinity>();
  if (phi_u1_max > 0.0) {
    double room = 0.45;
    for (int i = 0; i < n; ++i) {
      room = std::min(room, std::min(y0[i], 1.0 - y0[i]));
    }
    a0 = std::min(a0, std::max(0.5 * room, 1e-6) / phi_u1_max);
  }

  for (int k = 0; k <= cfg.switch_max_halvings; ++k) {
    const double a = a0 * std::pow(0.5, k);
    const Eigen::VectorXd ty = direction * phi;
    const double tp = 0.0;
    const Eigen::VectorXd y_pred = y0 + a * ty;
    Eigen::VectorXd y_new = y_pred;
    double p_new = p0;
    int iters = 0;
    if (!tr.correct(&y_new, &p_new, ty, tp, y_pred, p0, &iters)) continue;
    if (tr.norm(y_new - y0, 0.0) < 0.1 * a) continue;  // collapsed back

    Eigen::VectorXd sec_y = y_new - y0;
    double sec_p = p_new - p0;
    const double sn = tr.norm(sec_y, sec_p);
    sec_y /= sn;
    sec_p /= sn;

    Branch traced = tr.trace(std::move(y_new), p_new, std::move(sec_y), sec_p,
                             std::max(std::min(sn, cfg.max_step), cfg.min_step),
                             range);
    traced.provenance = Branch::Provenance::Switched;
    traced.switched_at = p0;
    traced.mode_hint = traced.points.empty()
                           ? 0
                           : traced.points.front().n_interfaces;
    return traced;
  }

  Branch branch;
  branch.base_params = base;
  branch.parameter = which;
  branch.provenance = Branch::Provenance::Switched;
  branch.switched_at = p0;
  branch.stop_reason = StopReason::StepFailure;
  branch.stop_note = "branch switch failed for the whole amplitude schedule";
  return branch;
}

HomotopyResult homotopy_rho_to_zero(const StateField& start,
                                    const ModelParams& params_at_start,
                                    const ContinuationConfig& cfg) {
  HomotopyResult result;
  const int n = start.grid.n_cells;
  const double rho0 = params_at_start.rho;
  if (!(rho0 > 0.0)) {
    throw std::invalid_argument("homotopy_rho_to_zero: start rho must be > 0");
  }

  // Trace rho downward to a small positive switch point; the plain rho = 0
  // Jacobian is singular along the mass-conservation family.
  const double rho_switch = std::max(1e-4 * rho0, 1e-9);
  result.branch = continue_branch(start, params_at_start, ActiveParameter::Rho,
                                  {rho_switch, rho0}, -1, cfg);
  const bool reached_switch =
      result.branch.stop_reason == StopReason::RangeBoundary &&
      !result.branch.points.empty() &&
      std::abs(result.branch.points.back().parameter_value - rho_switch) <=
          1e-6 * rho0 + 1e-12;
  if (!reached_switch) {
    const double last_rho = result.branch.points.empty()
                                ? rho0
                                : result.branch.points.back().parameter_value;
    result.note = "continuation stopped before rho -> 0 (" +
                  std::string(to_string(result.branch.stop_reason)) + ", " +
                  result.branch.stop_note +
                  "), last rho = " + std::to_string(last_rho);
    return result;
  }

  // Final polish at rho = 0. The u1 rows sum to zero identically there, so
  // the last u1 row is replaced by the mass constraint.
  ModelParams p0 = params_at_start;
  p0.rho = 0.0;
  Eigen::VectorXd y = stack_state(result.branch.points.back().state);
  const double h = p0.length / n;
  // Aim well below the public tolerance but accept a roundoff-floor stall.
  const double inner_tol = std::max(1e-13, 1e-2 * cfg.tol);

  double best_norm = std::numeric_limits<double>::infinity();
  Eigen::VectorXd y_best = y;
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd res = residual_raw(y, n, p0);
    res[n - 1] = (h * y.head(n).sum() - p0.u1_mean * p0.length) / p0.length;
    const double rn = res.lpNorm<Eigen::Infinity>();
    if (rn < best_norm) {
      best_norm = rn;
      y_best = y;
    }
    if (rn <= inner_tol) break;
    SpMat jac = jacobian_raw(y, n, p0);
    Triplets trip;
    trip.reserve(jac.nonZeros() + n);
    for (int k = 0; k < jac.outerSize(); ++k) {
      for (SpMat::InnerIterator itr(jac, k); itr; ++itr) {
        if (itr.row() == n - 1) continue;
        trip.emplace_back(static_cast<int>(itr.row()),
                          static_cast<int>(itr.col()), itr.value());
      }
    }
    for (int i = 0; i < n; ++i) trip.emplace_back(n - 1, i, h / p0.length);
    SpMat jac2(2 * n, 2 * n);
    jac2.setFromTriplets(trip.begin(), trip.end());
    LuOrDense fac(jac2);
    if (!fac.ok) break;
    const Eigen::VectorXd dy = fac.lu.solve(res);
    if (!dy.allFinite()) break;
    y -= dy;
  }

  if (!(best_norm <= cfg.tol)) {
    result.note = "rho = 0 polish did not converge (best residual " +
                  std::to_string(best_norm) + ")";
    return result;
  }
  result.final_state = make_state(y_best, n, p0);
  result.final_residual_norm =
      residual_raw(y_best, n, p0).lpNorm<Eigen::Infinity>();
  result.reached_zero = true;
  result.note = "reached rho = 0";
  return result;
}

}  // namespace continuation
}  // namespace herdlab
