#pragma once

#include <Eigen/Sparse>

#include <string>
#include <utility>
#include <vector>

#include "herdlab/grid.hpp"
#include "herdlab/model.hpp"

namespace herdlab {

enum class ActiveParameter { Delta, Rho, Kappa, Alpha, Length };

const char* to_string(ActiveParameter p);
double get_parameter(const ModelParams& p, ActiveParameter which);
void set_parameter(ModelParams& p, ActiveParameter which, double value);

struct ContinuationConfig {
  double initial_step = 1e-2;  // in normalized (state, parameter) arclength
  double max_step = 0.25;
  double min_step = 1e-10;
  double tol = 1e-9;  // corrector residual inf-norm
  int max_newton_iter = 12;
  int max_points = 2000;

  // Degeneracy guard: solutions with min_x |kappa + delta g(u1)| below
  // dg_floor are never accepted; detections where it falls below
  // dg_detect_guard are suppressed (the delta_d crossing is not a
  // bifurcation).
  double dg_floor = 1e-6;
  double dg_detect_guard = 1e-3;

  double detect_refine_tol = 1e-6;  // parameter tolerance of the bisection
  bool track_singular_values = true;

  double switch_amplitude_rel = 1e-2;  // a0 = rel * max(||state||, 1)
  int switch_max_halvings = 6;
};

enum class StopReason {
  RangeBoundary,
  DgDegeneracy,
  StepFailure,
  MaxPoints,
  NotStarted
};

const char* to_string(StopReason r);

struct BranchPoint {
  double parameter_value = 0.0;
  StateField state;
  double l2_norm = 0.0;  // sqrt((1/l) int (u1^2 + u2^2 + u1'^2 + u2'^2))
  Eigen::VectorXd tangent;  // extended (2n+1) secant, normalized
  double smallest_singular_value = 0.0;
  int n_interfaces = 0;
  bool is_bifurcation = false;
  int det_sign = 0;   // sign of det of the state Jacobian
  double dg_min = 0.0;
};

struct Branch {
  ModelParams base_params;  // the active parameter is overridden per point
  ActiveParameter parameter = ActiveParameter::Delta;
  std::vector<BranchPoint> points;
  StopReason stop_reason = StopReason::NotStarted;
  std::string stop_note;

  enum class Provenance { Homogeneous, Switched };
  Provenance provenance = Provenance::Homogeneous;
  double switched_at = 0.0;
  int mode_hint = 0;

  ModelParams params_at(double value) const;
};

/// A localized branch point: parameter value, corrected state, numerical
/// null vector of the state Jacobian, and the fold-vs-bifurcation verdict.
struct Detection {
  double parameter_value = 0.0;
  StateField state;
  Eigen::VectorXd null_vector;  // 2n, unit Euclidean norm, u1[0] >= 0 sign
  double sigma_min = 0.0;
  bool is_fold = false;
};

namespace continuation {

/// Stacked [u1-rows; u2-rows] finite-volume residual of the steady problem
///
///   0 = d/dx(u1' - g(u1) u2') - rho (u1 - u1_mean)
///   0 = delta u1'' + kappa u2'' - alpha u2 + f(u1)
///
/// with boundary fluxes set to zero exactly.
Eigen::VectorXd bvp_residual(const StateField& state, const ModelParams& p);

/// Analytic Jacobian of bvp_residual with respect to the stacked state.
Eigen::SparseMatrix<double> bvp_jacobian(const StateField& state,
                                         const ModelParams& p);

/// Derivative of bvp_residual with respect to the active parameter
/// (finite-differenced for Length, analytic otherwise).
Eigen::VectorXd bvp_parameter_derivative(const StateField& state,
                                         const ModelParams& p,
                                         ActiveParameter which);

struct newton_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NewtonInfo {
  int iterations = 0;
  double residual_norm = 0.0;
};

/// Damped Newton on bvp_residual; throws newton_error on non-convergence or
/// a singular Jacobian.
StateField newton_solve(const StateField& guess, const ModelParams& p,
                        double tol, int max_iter, NewtonInfo* info = nullptr);

double solution_l2_norm(const StateField& state);
int count_interfaces(const StateField& state, double u1_mean,
                     double plateau_tol = 1e-6);
/// min over cells of |kappa + delta * g(u1)|.
double dg_min(const StateField& state, const ModelParams& p);

/// Smallest singular value and the matching right singular vector by inverse
/// iteration on J^T J (dense SVD fallback when the factorization fails).
std::pair<double, Eigen::VectorXd> smallest_singular_pair(
    const Eigen::SparseMatrix<double>& jac);

/// Two smallest singular values by dense SVD; used only at refinement time.
std::pair<double, double> smallest_two_singular_values(
    const Eigen::SparseMatrix<double>& jac);

/// Pseudo-arclength predictor-corrector trace of the solution branch through
/// `start` (corrected first), moving initially toward `direction` (+1 grows
/// the parameter). Stops at the range boundary, on the D_g degeneracy guard,
/// on step failure below min_step, or after max_points.
Branch continue_branch(const StateField& start, const ModelParams& base,
                       ActiveParameter which, std::pair<double, double> range,
                       int direction, const ContinuationConfig& cfg);

/// Scans a traced branch for sign changes of det(J), refines each by
/// parameter bisection, extracts the null vector, and classifies
/// fold vs bifurcation by testing whether the parameter-derivative residual
/// is compatible with the range of J. Detections inside the D_g guard zone
/// are suppressed; clustered detections are merged (with a warning).
std::vector<Detection> detect_branch_points(
    const Branch& branch, const ContinuationConfig& cfg,
    std::vector<std::string>* warnings = nullptr);

/// Perturbs along +-null_vector, corrects onto the bifurcating branch with
/// the amplitude schedule a0 * 2^-k, then traces it.
Branch switch_branch(const Detection& at, int direction,
                     const ModelParams& base, ActiveParameter which,
                     std::pair<double, double> range,
                     const ContinuationConfig& cfg);

struct HomotopyResult {
  Branch branch;          // the rho-trace (decreasing)
  StateField final_state;  // polished rho = 0 solution when reached_zero
  double final_residual_norm = 0.0;
  bool reached_zero = false;
  std::string note;
};

/// Continues a nonhomogeneous solution in rho down to zero (all other
/// parameters fixed). The last stretch is finished by a Newton solve of the
/// rho = 0 system with one redundant u1 row replaced by the mass constraint,
/// since the plain rho = 0 Jacobian is singular along the mass family.
HomotopyResult homotopy_rho_to_zero(const StateField& start,
                                    const ModelParams& params_at_start,
                                    const ContinuationConfig& cfg);

}  // namespace continuation
}  // namespace herdlab
