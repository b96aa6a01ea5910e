#pragma once

#include <Eigen/Sparse>

#include <stdexcept>
#include <string>
#include <vector>

#include "herdlab/grid.hpp"
#include "herdlab/model.hpp"

namespace herdlab {

enum class TimeStepMode {
  EntropyVariables,  // implicit Euler on w = (h0'(u1), u2/delta0), regularized
  Primal             // implicit Euler on (u1, u2), conservative fluxes
};

struct TimeStepperConfig {
  double tau = 1e-2;
  double eps_reg = 1e-8;  // H1 regularization weight; > 0 in entropy mode
  TimeStepMode mode = TimeStepMode::EntropyVariables;
  double newton_tol = 1e-10;  // residual inf-norm
  int newton_max_iter = 50;
  double t_final = 1.0;

  void validate() const;
};

/// Thrown when a single implicit step cannot be completed (Newton
/// non-convergence or singular Jacobian). evolve() reacts by halving tau.
struct step_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrajectorySample {
  double time = 0.0;
  StateField state;
  EntropyReport report;
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  bool completed = false;
  std::string error;  // set when evolve aborts after persistent step failure
  std::vector<std::string> warnings;
};

namespace time_integrator {

/// One implicit Euler step of the regularized entropy-variable scheme.
/// state_prev.u1 must be strictly interior; the returned u1 is strictly in
/// (0,1) by construction of the w -> u map.
StateField step_entropy_variables(const StateField& state_prev,
                                  const ModelParams& p,
                                  const TimeStepperConfig& cfg);

/// One implicit Euler step on the primal variables with conservative flux
/// discretization; cell mass of u1 is conserved to roundoff.
StateField step_primal(const StateField& state_prev, const ModelParams& p,
                       const TimeStepperConfig& cfg);

/// Repeated stepping to t_final with an EntropyReport per accepted step.
/// On step failure the time step is halved (up to 10 times) before the run
/// aborts with the partial trajectory and an error message.
Trajectory evolve(const StateField& initial, const ModelParams& p,
                  const TimeStepperConfig& cfg);

/// Least-squares exponential rate of the relative-entropy trace, fitted on
/// the second half of the samples whose relative entropy exceeds 1e-14
/// (positive = decaying). Throws std::runtime_error when no sample is above
/// that floor and std::invalid_argument when fewer than 10 usable samples
/// exist.
double fit_decay_rate(const Trajectory& trajectory);

/// Residual and analytic Jacobian of one implicit step at a given iterate
/// (stacked entropy variables [w1; w2] or primal [u1; u2] depending on
/// cfg.mode). Exposed so the Jacobian can be verified against finite
/// differences of the residual.
Eigen::VectorXd step_residual(const Eigen::VectorXd& iterate,
                              const StateField& state_prev,
                              const ModelParams& p,
                              const TimeStepperConfig& cfg);
Eigen::SparseMatrix<double> step_jacobian(const Eigen::VectorXd& iterate,
                                          const StateField& state_prev,
                                          const ModelParams& p,
                                          const TimeStepperConfig& cfg);

}  // namespace time_integrator
}  // namespace herdlab
