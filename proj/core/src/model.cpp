#include "herdlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace herdlab {

namespace {

constexpr double kDomainTol = 1e-12;

double clamp_unit(double s, const char* what) {
  if (s < -kDomainTol || s > 1.0 + kDomainTol) {
    throw std::domain_error(std::string(what) + ": argument " +
                            std::to_string(s) + " outside [0,1]");
  }
  return std::clamp(s, 0.0, 1.0);
}

double nl_eval(const Nonlinearity& n, double s) {
  if (n.kind == Nonlinearity::Kind::Logistic) return s * (1.0 - s);
  return std::pow(s, n.a) * std::pow(1.0 - s, n.b);
}

double nl_prime(const Nonlinearity& n, double s) {
  if (n.kind == Nonlinearity::Kind::Logistic) return 1.0 - 2.0 * s;
  // d/ds s^a (1-s)^b = s^(a-1) (1-s)^(b-1) [a(1-s) - b s]
  return std::pow(s, n.a - 1.0) * std::pow(1.0 - s, n.b - 1.0) *
         (n.a * (1.0 - s) - n.b * s);
}

double nl_double_prime(const Nonlinearity& n, double s) {
  if (n.kind == Nonlinearity::Kind::Logistic) return -2.0;
  const double a = n.a, b = n.b;
  return std::pow(s, a - 2.0) * std::pow(1.0 - s, b - 2.0) *
         (a * (a - 1.0) * (1.0 - s) * (1.0 - s) -
          2.0 * a * b * s * (1.0 - s) + b * (b - 1.0) * s * s);
}

/// Maximum of a unimodal function on [lo, hi] by golden-section search.
double golden_section_max(const std::function<double(double)>& fn, double lo,
                          double hi) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = fn(c), fd = fn(d);
  while (b - a > 1e-14) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = fn(d);
    }
  }
  return std::max(fc, fd);
}

/// Adaptive Simpson quadrature; integrands here are smooth away from the
/// domain endpoints, which callers keep strictly interior.
double adaptive_simpson(const std::function<double(double)>& fn, double a,
                        double b, double fa, double fm, double fb, double tol,
                        int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = fn(lm), frm = fn(rm);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double err = left + right - whole;
  if (depth <= 0 || std::abs(err) < 15.0 * tol) {
    return left + right + err / 15.0;
  }
  return adaptive_simpson(fn, a, m, fa, flm, fm, 0.5 * tol, depth - 1) +
         adaptive_simpson(fn, m, b, fm, frm, fb, 0.5 * tol, depth - 1);
}

double integrate_adaptive(const std::function<double(double)>& fn, double a,
                          double b, double tol = 1e-13) {
  if (a == b) return 0.0;
  const double m = 0.5 * (a + b);
  return adaptive_simpson(fn, a, b, fn(a), fn(m), fn(b), tol, 48);
}

constexpr double kH0Anchor = 0.5;  // reference point m of the entropy density

}  // namespace

void ModelParams::validate() const {
  if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be > 0");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  if (!(length > 0.0)) throw std::invalid_argument("length must be > 0");
  if (!(rho >= 0.0)) throw std::invalid_argument("rho must be >= 0");
  if (!(u1_mean > 0.0 && u1_mean < 1.0)) {
    throw std::invalid_argument("u1_mean must lie in (0,1)");
  }
  if (!(c_sobolev > 0.0)) throw std::invalid_argument("c_sobolev must be > 0");
  if (!(c_lipschitz > 0.0)) {
    throw std::invalid_argument("c_lipschitz must be > 0");
  }
  for (const auto* n : {&g_fn, &f_fn}) {
    if (n->kind == Nonlinearity::Kind::PowerAB && (n->a < 1.0 || n->b < 1.0)) {
      throw std::invalid_argument("PowerAB exponents must satisfy a,b >= 1");
    }
  }
  if (!(gamma() > 0.0)) throw std::invalid_argument("max of g must be > 0");
}

double ModelParams::gamma() const {
  if (g_fn.kind == Nonlinearity::Kind::Logistic) return 0.25;
  return golden_section_max([&](double s) { return nl_eval(g_fn, s); }, 0.0,
                            1.0);
}

namespace model {

double g_eval(double s, const ModelParams& p) {
  return nl_eval(p.g_fn, clamp_unit(s, "g_eval"));
}

double g_prime(double s, const ModelParams& p) {
  return nl_prime(p.g_fn, clamp_unit(s, "g_prime"));
}

double g_double_prime(double s, const ModelParams& p) {
  return nl_double_prime(p.g_fn, clamp_unit(s, "g_double_prime"));
}

double f_eval(double s, const ModelParams& p) {
  return nl_eval(p.f_fn, clamp_unit(s, "f_eval"));
}

double f_prime(double s, const ModelParams& p) {
  return nl_prime(p.f_fn, clamp_unit(s, "f_prime"));
}

double f_max(const ModelParams& p) {
  if (p.f_fn.kind == Nonlinearity::Kind::Logistic) return 0.25;
  return golden_section_max([&](double s) { return nl_eval(p.f_fn, s); }, 0.0,
                            1.0);
}

namespace {

double nl_extended(const Nonlinearity& n, double s) {
  if (n.kind == Nonlinearity::Kind::Logistic) return s * (1.0 - s);
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return nl_eval(n, s);
}

double nl_prime_extended(const Nonlinearity& n, double s) {
  if (n.kind == Nonlinearity::Kind::Logistic) return 1.0 - 2.0 * s;
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return nl_prime(n, s);
}

}  // namespace

double g_extended(double s, const ModelParams& p) {
  return nl_extended(p.g_fn, s);
}

double g_prime_extended(double s, const ModelParams& p) {
  return nl_prime_extended(p.g_fn, s);
}

double f_extended(double s, const ModelParams& p) {
  return nl_extended(p.f_fn, s);
}

double f_prime_extended(double s, const ModelParams& p) {
  return nl_prime_extended(p.f_fn, s);
}

double h0_eval(double s, const ModelParams& p) {
  s = clamp_unit(s, "h0_eval");
  if (s <= 0.0 || s >= 1.0) {
    throw std::domain_error("h0_eval: entropy density undefined at s in {0,1}");
  }
  if (p.g_fn.kind == Nonlinearity::Kind::Logistic) {
    return s * std::log(s) + (1.0 - s) * std::log(1.0 - s);
  }
  // h0(s) = int_m^s (s - t)/g(t) dt
  return integrate_adaptive(
      [&](double t) { return (s - t) / nl_eval(p.g_fn, t); }, kH0Anchor, s);
}

double h0_prime(double s, const ModelParams& p) {
  s = clamp_unit(s, "h0_prime");
  if (s <= 0.0 || s >= 1.0) {
    throw std::domain_error("h0_prime: diverges at s in {0,1}");
  }
  if (p.g_fn.kind == Nonlinearity::Kind::Logistic) {
    return std::log(s / (1.0 - s));
  }
  return integrate_adaptive([&](double t) { return 1.0 / nl_eval(p.g_fn, t); },
                            kH0Anchor, s);
}

double h0_double_prime(double s, const ModelParams& p) {
  s = clamp_unit(s, "h0_double_prime");
  if (s <= 0.0 || s >= 1.0) {
    throw std::domain_error("h0_double_prime: 1/g diverges at s in {0,1}");
  }
  return 1.0 / nl_eval(p.g_fn, s);
}

double h0_prime_inverse(double w, const ModelParams& p) {
  if (p.g_fn.kind == Nonlinearity::Kind::Logistic) {
    // Inverse of the logit; evaluated to avoid overflow for large |w|.
    if (w >= 0.0) return 1.0 / (1.0 + std::exp(-w));
    const double e = std::exp(w);
    return e / (1.0 + e);
  }
  // h0' is strictly increasing; bracket then bisect/Newton.
  double lo = 1e-15, hi = 1.0 - 1e-15;
  double s = kH0Anchor;
  for (int it = 0; it < 200; ++it) {
    const double fw = h0_prime(s, p) - w;
    if (std::abs(fw) < 1e-14) break;
    if (fw > 0.0) {
      hi = s;
    } else {
      lo = s;
    }
    const double step = fw * nl_eval(p.g_fn, s);  // Newton: f' = 1/g
    double next = s - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == s) break;
    s = next;
  }
  return s;
}

namespace {

void require_admissible_delta(const ModelParams& p) {
  const double gamma = p.gamma();
  if (p.delta == 0.0) {
    throw std::domain_error("delta = 0: entropy structure undefined");
  }
  if (p.delta <= -p.kappa / gamma) {
    throw std::domain_error("delta <= -kappa/gamma: outside admissible range");
  }
}

}  // namespace

double delta0(const ModelParams& p) {
  require_admissible_delta(p);
  if (p.delta > 0.0) return p.delta;
  return p.kappa / p.gamma();
}

double epsilon1(const ModelParams& p) {
  require_admissible_delta(p);
  if (p.delta > 0.0) return std::min(1.0, p.delta * p.kappa);
  const double gamma = p.gamma();
  const double r = 1.0 - gamma * p.delta / p.kappa;  // in (1, 2)
  const double eps0 = 0.5 * (1.0 - 0.25 * r * r);
  const double k_minus = p.kappa - gamma * p.delta;
  const double second =
      (p.kappa * p.kappa - k_minus * k_minus / (4.0 * (1.0 - eps0))) / gamma;
  return std::min(eps0, second);
}

Eigen::Matrix2d b_matrix(double u1, const ModelParams& p) {
  const double g = g_eval(u1, p);
  const double d0 = delta0(p);
  Eigen::Matrix2d b;
  b << g, -d0 * g, p.delta * g, d0 * p.kappa;
  return b;
}

std::optional<double> chi_rate(const ModelParams& p) {
  const double d0 = delta0(p);
  const double e1 = epsilon1(p);
  const double gamma = p.gamma();
  const double threshold =
      (gamma / p.alpha) * p.c_lipschitz * p.c_lipschitz * p.c_sobolev;
  if (!(d0 * e1 > threshold)) return std::nullopt;
  const double rate = std::min(
      e1 / p.c_sobolev -
          gamma * p.c_lipschitz * p.c_lipschitz / (p.alpha * d0),
      p.alpha);
  return rate;
}

std::pair<double, double> steady_state(const ModelParams& p) {
  p.validate();
  return {p.u1_mean, f_eval(p.u1_mean, p) / p.alpha};
}

CriticalDeltas decay_region(const ModelParams& p,
                            std::span<const double> delta_grid) {
  p.validate();
  CriticalDeltas out;
  const double gamma = p.gamma();
  out.delta_star = -p.kappa / gamma;
  out.delta_d = -p.kappa / g_eval(p.u1_mean, p);

  auto holds = [&](double d) {
    ModelParams q = p;
    q.delta = d;
    return chi_rate(q).has_value();
  };

  for (std::size_t i = 0; i < delta_grid.size(); ++i) {
    const double d = delta_grid[i];
    if (i + 1 < delta_grid.size() && !(delta_grid[i + 1] > d)) {
      throw std::invalid_argument("decay_region: grid must be sorted");
    }
    if (d == 0.0 || d <= out.delta_star) {
      throw std::invalid_argument(
          "decay_region: grid point outside admissible delta range");
    }
  }

  // Refine a sign change of the predicate between a and b (holds(a) != holds(b))
  // by bisection; returns the boundary to 1e-10.
  auto refine = [&](double a, double b, bool at_a) {
    for (int it = 0; it < 200 && b - a > 1e-10; ++it) {
      const double m = 0.5 * (a + b);
      if (m == 0.0 || m <= out.delta_star) break;  // never happens on one side
      if (holds(m) == at_a) {
        a = m;
      } else {
        b = m;
      }
    }
    return 0.5 * (a + b);
  };

  const std::size_t n = delta_grid.size();
  std::size_t i = 0;
  while (i < n) {
    if (!holds(delta_grid[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    // Do not let an interval span the excluded point delta = 0.
    while (j + 1 < n && holds(delta_grid[j + 1]) &&
           !(delta_grid[j] < 0.0 && delta_grid[j + 1] > 0.0)) {
      ++j;
    }
    double lo = delta_grid[i];
    double hi = delta_grid[j];
    if (i > 0 && !(delta_grid[i - 1] < 0.0 && delta_grid[i] > 0.0)) {
      lo = refine(delta_grid[i - 1], delta_grid[i], false);
    }
    if (j + 1 < n && !(delta_grid[j] < 0.0 && delta_grid[j + 1] > 0.0)) {
      hi = refine(delta_grid[j], delta_grid[j + 1], true);
    }
    out.decay_intervals.emplace_back(lo, hi);
    i = j + 1;
  }
  return out;
}

}  // namespace model
}  // namespace herdlab
