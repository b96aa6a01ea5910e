#pragma once

#include <vector>

#include "herdlab/grid.hpp"
#include "herdlab/model.hpp"

namespace herdlab {

/// Closed-form prediction of one steady-state bifurcation mode.
struct BifurcationPrediction {
  int mode_index = 1;       // n >= 1
  double mu_n = 0.0;        // Neumann eigenvalue (n pi / l)^2
  double delta_b = 0.0;     // with the rho regularization term
  double delta_b_rho0 = 0.0;  // rho = 0 formula
  double amplitude_u1 = 0.0;  // eigenfunction amplitude ratio, g(u1*)
  double wavenumber = 0.0;    // n pi / l; profile sqrt(2/l) cos(wavenumber x)
};

enum class AlphaRegime { Large, Small, Boundary };

namespace bifurcation {

/// (n pi / length)^2, n >= 1. The zero mode is excluded by the mass
/// constraint and rejected here.
double neumann_eigenvalue(int n, double length);

/// Bifurcation value of delta for mode n. With include_rho the value of the
/// rho-regularized steady problem is returned; both are evaluated through
/// their bracketed delta_d-offset forms to avoid cancellation near delta_d.
double delta_b(int n, const ModelParams& p, bool include_rho);

/// Determinant of the 2x2 mode-n system obtained by projecting the
/// linearization at the homogeneous state onto the n-th Neumann
/// eigenfunction, evaluated at p.delta. Zero exactly at delta_b(n).
double mode_determinant(int n, const ModelParams& p, bool include_rho);

/// Null eigenfunction (U1, U2) = sqrt(2/l) cos(n pi x / l) (g(u1*), 1)
/// sampled at cell centers.
StateField null_eigenfunction(int n, const ModelParams& p, const Grid& grid);

/// Verifies that the eigenvalue crossing at delta_b(n, rho=0) is
/// non-degenerate: the projected 2x2 system for the crossing obstruction is
/// singular with an inconsistent right-hand side. Throws std::domain_error
/// when delta_b(n) coincides with the degeneracy delta_d (genericity
/// violated).
bool crossing_check(int n, const ModelParams& p);

/// Classifies whether the bifurcation values sit below delta_d (Large, for
/// alpha above every per-mode threshold) or above (Small), checking modes
/// n = 1..n_max; Boundary when mixed or on the threshold.
AlphaRegime alpha_regime(const ModelParams& p, int n_max = 50);

/// Predictions for modes 1..n_max.
std::vector<BifurcationPrediction> predict(const ModelParams& p, int n_max);

}  // namespace bifurcation
}  // namespace herdlab
