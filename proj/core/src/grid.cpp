#include "herdlab/grid.hpp"

#include <cmath>
#include <stdexcept>

#include "herdlab/csv.hpp"

namespace herdlab {

Grid::Grid(int n, double l) : n_cells(n), length(l) {
  if (n < 8) throw std::invalid_argument("Grid: n_cells must be >= 8");
  if (!(l > 0.0)) throw std::invalid_argument("Grid: length must be > 0");
}

StateField StateField::constant(const Grid& g, double v1, double v2) {
  StateField s(g);
  s.u1.setConstant(v1);
  s.u2.setConstant(v2);
  return s;
}

namespace grid_ops {

double integrate(const Eigen::VectorXd& values, const Grid& g) {
  if (values.size() != g.n_cells) {
    throw std::invalid_argument("integrate: vector length does not match grid");
  }
  return g.spacing() * values.sum();
}

Eigen::VectorXd neumann_laplacian_apply(const Eigen::VectorXd& v,
                                        const Grid& g) {
  const int n = g.n_cells;
  if (v.size() != n) {
    throw std::invalid_argument(
        "neumann_laplacian_apply: vector length does not match grid");
  }
  const double inv_h2 = 1.0 / (g.spacing() * g.spacing());
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const double left = (i > 0) ? v[i - 1] : v[i];
    const double right = (i < n - 1) ? v[i + 1] : v[i];
    out[i] = (left - 2.0 * v[i] + right) * inv_h2;
  }
  return out;
}

Eigen::VectorXd centered_gradient(const Eigen::VectorXd& v, const Grid& g) {
  const int n = g.n_cells;
  if (v.size() != n) {
    throw std::invalid_argument(
        "centered_gradient: vector length does not match grid");
  }
  const double inv_2h = 0.5 / g.spacing();
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const double left = (i > 0) ? v[i - 1] : v[i];
    const double right = (i < n - 1) ? v[i + 1] : v[i];
    out[i] = (right - left) * inv_2h;
  }
  return out;
}

EntropyReport entropy_report(const StateField& state, const ModelParams& p,
                             double time) {
  const Grid& g = state.grid;
  const int n = g.n_cells;
  if (state.u1.size() != n || state.u2.size() != n) {
    throw std::invalid_argument("entropy_report: field size mismatch");
  }
  for (int i = 0; i < n; ++i) {
    if (state.u1[i] == 0.0 || state.u1[i] == 1.0) {
      throw std::domain_error("entropy_report: entropy undefined, u1 hits {0,1}");
    }
  }

  const double d0 = model::delta0(p);
  const auto [u1s, u2s] = model::steady_state(p);
  const double h0_star = model::h0_eval(u1s, p);
  const double h0p_star = model::h0_prime(u1s, p);

  Eigen::VectorXd h0_vals(n), rel_vals(n);
  for (int i = 0; i < n; ++i) {
    const double h0i = model::h0_eval(state.u1[i], p);
    h0_vals[i] = h0i + state.u2[i] * state.u2[i] / (2.0 * d0);
    const double du2 = state.u2[i] - u2s;
    rel_vals[i] =
        (h0i - h0_star - h0p_star * (state.u1[i] - u1s)) + du2 * du2 / (2.0 * d0);
  }

  const Eigen::VectorXd grad1 = centered_gradient(state.u1, g);
  const Eigen::VectorXd grad2 = centered_gradient(state.u2, g);
  Eigen::VectorXd diss_vals(n);
  for (int i = 0; i < n; ++i) {
    const double gi = model::g_eval(state.u1[i], p);
    const double cross = (p.delta / d0 - 1.0) * grad1[i] * grad2[i];
    const double grad1_term =
        (gi > 0.0) ? grad1[i] * grad1[i] / gi : 0.0;  // g=0 only where grad=0
    diss_vals[i] = grad1_term + cross + (p.kappa / d0) * grad2[i] * grad2[i];
  }

  EntropyReport r;
  r.time = time;
  r.entropy = integrate(h0_vals, g);
  r.relative_entropy = integrate(rel_vals, g);
  r.dissipation = integrate(diss_vals, g);
  r.mass_u1 = integrate(state.u1, g);
  r.l2_u2 = std::sqrt(integrate(state.u2.cwiseProduct(state.u2), g));
  return r;
}

void write_state_csv(const StateField& state, const std::filesystem::path& to) {
  csv::Table t;
  t.header = {"x", "u1", "u2"};
  t.rows.reserve(state.grid.n_cells);
  for (int i = 0; i < state.grid.n_cells; ++i) {
    t.rows.push_back(
        {state.grid.cell_center(i), state.u1[i], state.u2[i]});
  }
  csv::write(t, to);
}

StateField read_state_csv(const std::filesystem::path& from) {
  const csv::Table t = csv::read(from);
  if (t.header != std::vector<std::string>{"x", "u1", "u2"}) {
    throw std::runtime_error("read_state_csv: unexpected header in " +
                             from.string());
  }
  const int n = static_cast<int>(t.rows.size());
  if (n < 8) throw std::runtime_error("read_state_csv: too few rows");
  // Recover the grid from the first cell center: x0 = h/2.
  const double h = 2.0 * t.rows.front()[0];
  Grid g(n, h * n);
  StateField s(g);
  for (int i = 0; i < n; ++i) {
    s.u1[i] = t.rows[i][1];
    s.u2[i] = t.rows[i][2];
  }
  return s;
}

}  // namespace grid_ops
}  // namespace herdlab
