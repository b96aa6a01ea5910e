#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace herdlab {

/// Mobility / source nonlinearity on [0,1]. Logistic is s(1-s); PowerAB is
/// s^a (1-s)^b with a, b >= 1 so that 1/g is non-integrable at both endpoints.
struct Nonlinearity {
  enum class Kind { Logistic, PowerAB };
  Kind kind = Kind::Logistic;
  double a = 1.0;
  double b = 1.0;

  static Nonlinearity logistic() { return {}; }
  static Nonlinearity power(double a, double b) {
    return {Kind::PowerAB, a, b};
  }
};

/// All scalar parameters of the cross-diffusion herding model
///
///   d/dt u1 = div(grad u1 - g(u1) grad u2)
///   d/dt u2 = div(delta grad u1 + kappa grad u2) + f(u1) - alpha u2
///
/// on [0, length] with no-flux boundaries, plus the constants entering the
/// entropy decay estimate (c_sobolev, c_lipschitz) and the steady-state
/// mass regularization rho.
struct ModelParams {
  double delta = 1.0;      // cross-diffusion coefficient (may be negative)
  double kappa = 1.0;      // diffusion of the influence variable, > 0
  double alpha = 1.0;      // relaxation rate, > 0
  double length = 20.0;    // domain length, > 0
  double rho = 0.0;        // mass regularization of the steady problem, >= 0
  double u1_mean = 0.5;    // conserved mean of u1, in (0,1)
  double c_sobolev = 1.0;  // convex Sobolev constant, user supplied, > 0
  double c_lipschitz = 1.0;  // Lipschitz constant of f, > 0

  Nonlinearity g_fn = Nonlinearity::logistic();  // mobility g
  Nonlinearity f_fn = Nonlinearity::logistic();  // source f

  /// Throws std::invalid_argument when any invariant fails.
  void validate() const;

  /// gamma = max of g over [0,1]. Closed form 1/4 for Logistic, golden-section
  /// search for PowerAB.
  double gamma() const;
};

/// Critical delta values and the set of deltas where the exponential-decay
/// condition delta0 * epsilon1(delta) > (gamma/alpha) cL^2 cS holds.
struct CriticalDeltas {
  double delta_star = 0.0;  // -kappa/gamma, lower end of the admissible range
  double delta_d = 0.0;     // -kappa/g(u1_mean), diffusion-matrix degeneracy
  std::vector<std::pair<double, double>> decay_intervals;
};

namespace model {

// --- nonlinearities ---------------------------------------------------------

/// g(s). Domain [0,1] with tolerance 1e-12; throws std::domain_error outside.
double g_eval(double s, const ModelParams& p);
double g_prime(double s, const ModelParams& p);
double g_double_prime(double s, const ModelParams& p);

double f_eval(double s, const ModelParams& p);
double f_prime(double s, const ModelParams& p);
/// Maximum of f over [0,1] (f_M in the entropy-inequality constants).
double f_max(const ModelParams& p);

/// Unclamped variants for solver internals, where Newton iterates may
/// transiently leave [0,1]: Logistic extends as the polynomial s(1-s),
/// PowerAB extends by zero outside [0,1].
double g_extended(double s, const ModelParams& p);
double g_prime_extended(double s, const ModelParams& p);
double f_extended(double s, const ModelParams& p);
double f_prime_extended(double s, const ModelParams& p);

// --- entropy density --------------------------------------------------------

/// h0(s): second anti-derivative of 1/g anchored at m = 1/2. Logistic has the
/// closed form s log s + (1-s) log(1-s); PowerAB is evaluated by adaptive
/// quadrature of h0(s) = int_m^s (s-t)/g(t) dt.
/// Throws std::domain_error at s in {0,1} and outside [0,1].
double h0_eval(double s, const ModelParams& p);
/// h0'(s), strictly increasing with range all of R.
double h0_prime(double s, const ModelParams& p);
/// h0''(s) = 1/g(s).
double h0_double_prime(double s, const ModelParams& p);
/// Inverse of h0': maps R onto (0,1).
double h0_prime_inverse(double w, const ModelParams& p);

// --- entropy structure constants --------------------------------------------

/// delta0 = delta for delta > 0, kappa/gamma for -kappa/gamma < delta < 0.
/// Throws std::domain_error for delta = 0 or delta <= -kappa/gamma, where the
/// entropy structure is undefined.
double delta0(const ModelParams& p);

/// Coercivity constant of the transformed diffusion matrix:
/// min{1, delta*kappa} for delta > 0, and for negative admissible delta
/// min{eps0, [kappa^2 - (kappa - gamma*delta)^2 / (4(1-eps0))]/gamma} with
/// eps0 = (1 - (1 - gamma*delta/kappa)^2/4)/2. Strictly positive on the
/// admissible range and -> 0 at both ends.
double epsilon1(const ModelParams& p);

/// Diffusion matrix in entropy variables,
///   B = [ g(u1), -delta0*g(u1) ; delta*g(u1), delta0*kappa ].
/// Satisfies z^T B z >= epsilon1 * (g(u1) z1^2 + z2^2) for all z.
Eigen::Matrix2d b_matrix(double u1, const ModelParams& p);

/// Exponential decay rate bound
///   chi = min{epsilon1/cS - gamma*cL^2/(alpha*delta0), alpha}.
/// Returns nullopt when the decay condition
///   delta0*epsilon1 > (gamma/alpha) cL^2 cS
/// fails (decay not guaranteed; not an error).
std::optional<double> chi_rate(const ModelParams& p);

/// Homogeneous steady state (u1*, u2*) = (u1_mean, f(u1_mean)/alpha).
std::pair<double, double> steady_state(const ModelParams& p);

/// Scans a sorted grid of admissible deltas for the maximal sub-intervals
/// where the decay condition holds; interval endpoints interior to the grid
/// are refined by bisection to 1e-10. An empty interval list is a valid
/// result. Grid points must lie in (-kappa/gamma, 0) u (0, inf).
CriticalDeltas decay_region(const ModelParams& p,
                            std::span<const double> delta_grid);

}  // namespace model
}  // namespace herdlab
