#pragma once

#include <Eigen/Dense>

#include <filesystem>

#include "herdlab/model.hpp"

namespace herdlab {

/// Uniform cell-centered 1-D grid over [0, length]. Cell centers sit at
/// (i + 1/2) h, strictly interior, so reflecting ghost cells make the
/// no-flux boundary conditions exact at the discrete level.
struct Grid {
  int n_cells = 200;
  double length = 20.0;

  Grid() = default;
  Grid(int n, double l);  // validates n >= 8, l > 0

  double spacing() const { return length / n_cells; }
  double cell_center(int i) const { return (i + 0.5) * spacing(); }
};

/// Discretized (u1, u2) pair over the cells of a grid.
struct StateField {
  Grid grid;
  Eigen::VectorXd u1;
  Eigen::VectorXd u2;

  StateField() = default;
  explicit StateField(const Grid& g)
      : grid(g),
        u1(Eigen::VectorXd::Zero(g.n_cells)),
        u2(Eigen::VectorXd::Zero(g.n_cells)) {}

  static StateField constant(const Grid& g, double v1, double v2);
};

/// Per-timestep entropy diagnostics.
struct EntropyReport {
  double time = 0.0;
  double entropy = 0.0;  // integral of h0(u1) + u2^2/(2 delta0)
  double relative_entropy = 0.0;  // against the homogeneous steady state, >= 0
  double dissipation = 0.0;  // quadratic-form integrand of the entropy balance
  double mass_u1 = 0.0;
  double l2_u2 = 0.0;
};

namespace grid_ops {

/// Midpoint quadrature h * sum(values); exact for cell-wise constants.
double integrate(const Eigen::VectorXd& values, const Grid& g);

/// Standard 3-point Laplacian with reflecting (zero-flux) ghost cells.
/// Symmetric, annihilates constants, row sums zero.
Eigen::VectorXd neumann_laplacian_apply(const Eigen::VectorXd& v,
                                        const Grid& g);

/// Centered-difference gradient at cell centers with reflecting ghosts
/// (zero slope in the first and last cell).
Eigen::VectorXd centered_gradient(const Eigen::VectorXd& v, const Grid& g);

/// Entropy, relative entropy (Bregman form, pointwise nonnegative and equal
/// to the mass-conserving definition whenever the mean of u1 matches
/// u1_mean), dissipation, mass and L2 diagnostics.
/// Throws std::domain_error if any u1[i] is exactly 0 or 1.
EntropyReport entropy_report(const StateField& state, const ModelParams& p,
                             double time);

/// Writes columns x,u1,u2 as RFC-4180 CSV with 17-significant-digit floats.
void write_state_csv(const StateField& state, const std::filesystem::path& to);
StateField read_state_csv(const std::filesystem::path& from);

}  // namespace grid_ops
}  // namespace herdlab
