#include "herdlab/bifurcation.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace herdlab::bifurcation {

double neumann_eigenvalue(int n, double length) {
  if (n < 1) {
    throw std::invalid_argument(
        "neumann_eigenvalue: n must be >= 1 (zero mode excluded by the mass "
        "constraint)");
  }
  if (!(length > 0.0)) {
    throw std::invalid_argument("neumann_eigenvalue: length must be > 0");
  }
  const double k = n * std::numbers::pi / length;
  return k * k;
}

double delta_b(int n, const ModelParams& p, bool include_rho) {
  p.validate();
  const double gs = model::g_eval(p.u1_mean, p);
  if (!(gs > 0.0)) throw std::domain_error("delta_b: g(u1*) must be positive");
  const double mu = neumann_eigenvalue(n, p.length);
  const double fp = model::f_prime(p.u1_mean, p);
  const double delta_d = -p.kappa / gs;
  if (!include_rho) {
    return delta_d + (fp - p.alpha / gs) / mu;
  }
  // Bracketed offset form of the rho-modified value; algebraically equal to
  // f'/mu - (kappa mu + alpha)(mu + rho)/(g mu^2) but without the large
  // cancellation near delta_d.
  return delta_d +
         (fp - (p.kappa * p.rho + p.alpha) / gs - p.alpha * p.rho / (gs * mu)) /
             mu;
}

double mode_determinant(int n, const ModelParams& p, bool include_rho) {
  const double gs = model::g_eval(p.u1_mean, p);
  const double mu = neumann_eigenvalue(n, p.length);
  const double fp = model::f_prime(p.u1_mean, p);
  const double rho = include_rho ? p.rho : 0.0;
  // det of [[-(mu+rho), g* mu], [f' - delta mu, -(kappa mu + alpha)]]
  return (mu + rho) * (p.kappa * mu + p.alpha) + gs * mu * (p.delta * mu - fp);
}

StateField null_eigenfunction(int n, const ModelParams& p, const Grid& grid) {
  const double gs = model::g_eval(p.u1_mean, p);
  const double k = n * std::numbers::pi / p.length;
  const double norm = std::sqrt(2.0 / p.length);  // integral of e^2 equals 1
  StateField e(grid);
  for (int i = 0; i < grid.n_cells; ++i) {
    const double c = norm * std::cos(k * grid.cell_center(i));
    e.u1[i] = gs * c;
    e.u2[i] = c;
  }
  return e;
}

bool crossing_check(int n, const ModelParams& p) {
  const double gs = model::g_eval(p.u1_mean, p);
  const double mu = neumann_eigenvalue(n, p.length);
  const double fp = model::f_prime(p.u1_mean, p);
  const double db = delta_b(n, p, /*include_rho=*/false);
  const double delta_d = -p.kappa / gs;
  if (std::abs(db - delta_d) < 1e-12 * (1.0 + std::abs(delta_d))) {
    throw std::domain_error(
        "crossing_check: delta_b coincides with the degeneracy delta_d");
  }

  // Projected obstruction system M (P,Q)^T = rhs with
  //   M = [[1, -g*], [f' - delta_b mu, -(kappa mu + alpha)]],
  //   rhs = (-g*, 0).
  // The crossing is non-degenerate iff M is singular and rhs is outside its
  // column space (the system is inconsistent).
  const double m00 = 1.0, m01 = -gs;
  const double m10 = fp - db * mu, m11 = -(p.kappa * mu + p.alpha);
  const double det = m00 * m11 - m01 * m10;
  const double scale = std::abs(m00 * m11) + std::abs(m01 * m10);
  if (std::abs(det) > 1e-9 * scale) {
    return false;  // regular system: unique solution, no crossing obstruction
  }

  // rhs is in the column space of the rank-1 matrix iff it is parallel to
  // (m00, m10).
  const double cross = (-gs) * m10 - 0.0 * m00;
  return std::abs(cross) > 1e-12 * (gs * (1.0 + std::abs(m10)));
}

AlphaRegime alpha_regime(const ModelParams& p, int n_max) {
  p.validate();
  const double gs = model::g_eval(p.u1_mean, p);
  const double fp = model::f_prime(p.u1_mean, p);
  bool any_large = false, any_small = false, any_boundary = false;
  for (int n = 1; n <= n_max; ++n) {
    const double mu = neumann_eigenvalue(n, p.length);
    const double threshold = mu * (fp * gs - p.kappa * p.rho) / (p.rho + mu);
    if (p.alpha > threshold) {
      any_large = true;
    } else if (p.alpha < threshold) {
      any_small = true;
    } else {
      any_boundary = true;
    }
  }
  if (any_boundary || (any_large && any_small)) return AlphaRegime::Boundary;
  return any_large ? AlphaRegime::Large : AlphaRegime::Small;
}

std::vector<BifurcationPrediction> predict(const ModelParams& p, int n_max) {
  std::vector<BifurcationPrediction> out;
  out.reserve(n_max);
  const double gs = model::g_eval(p.u1_mean, p);
  for (int n = 1; n <= n_max; ++n) {
    BifurcationPrediction b;
    b.mode_index = n;
    b.mu_n = neumann_eigenvalue(n, p.length);
    b.delta_b = delta_b(n, p, true);
    b.delta_b_rho0 = delta_b(n, p, false);
    b.amplitude_u1 = gs;
    b.wavenumber = n * std::numbers::pi / p.length;
    out.push_back(b);
  }
  return out;
}

}  // namespace herdlab::bifurcation
