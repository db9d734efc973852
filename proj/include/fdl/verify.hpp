#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fdl/exponents.hpp"
#include "fdl/geometry.hpp"
#include "fdl/intrinsic.hpp"
#include "fdl/report.hpp"
#include "fdl/solutions.hpp"

namespace fdl {

// ---------------------------------------------------------------------------
// Test function of the Moser energy estimate.

struct PhiTestFn {
  double alpha = 1.0;
  double k = 1.0;    // in (0, 1]
  double ell = 2.0;  // in (1, inf)
  double m = 1.0;

  void validate() const {
    if (!(alpha >= 0.0)) throw DomainError("phi: alpha must be >= 0");
    if (!(k > 0.0 && k <= 1.0)) throw DomainError("phi: k must lie in (0, 1]");
    if (!(ell > 1.0)) throw DomainError("phi: ell must exceed 1");
    if (!(m > 0.0)) throw DomainError("phi: m must be positive");
  }
};

inline double phi(const PhiTestFn& fn, double s) {
  const double lo = std::pow(fn.k, 2.0 * fn.m), hi = std::pow(fn.ell, 2.0 * fn.m);
  if (s <= lo) return std::pow(fn.k, 2.0 * fn.m * fn.alpha);
  if (s < hi) return std::pow(s, fn.alpha);
  return std::pow(fn.ell, 2.0 * fn.m * fn.alpha);
}

inline double phi_prime(const PhiTestFn& fn, double s) {
  const double lo = std::pow(fn.k, 2.0 * fn.m), hi = std::pow(fn.ell, 2.0 * fn.m);
  if (s <= lo || s >= hi) return 0.0;
  return fn.alpha * std::pow(s, fn.alpha - 1.0);
}

// v = int_0^{|u|^{m+1}} phi(s^{2m/(m+1)}) ds in closed form.
inline double v_of(const PhiTestFn& fn, double u_abs, double m) {
  const double a = m + 1.0 + 2.0 * m * fn.alpha;
  const double c = (m + 1.0) / a;
  const double k = fn.k, l = fn.ell;
  if (u_abs <= k) return std::pow(k, 2.0 * m * fn.alpha) * std::pow(u_abs, m + 1.0);
  if (u_abs < l) return std::pow(k, a) + c * (std::pow(u_abs, a) - std::pow(k, a));
  return std::pow(k, a) + c * (std::pow(l, a) - std::pow(k, a)) +
         std::pow(l, 2.0 * m * fn.alpha) * (std::pow(u_abs, m + 1.0) - std::pow(l, m + 1.0));
}

// v = ((m+1)/m) int_{k^m}^{|u|^m} (y - k^m)^2 y^{1/m} dy, the De Giorgi energy density.
inline double v_degiorgi(double u_abs, double k, double m) {
  const double K = std::pow(k, m), U = std::pow(u_abs, m);
  if (!(U > K)) return 0.0;
  auto f = [&](double y) { return (y - K) * (y - K) * std::pow(y, 1.0 / m); };
  const double I = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, K, U, 10, 1e-13);
  return (m + 1.0) / m * I;
}

struct Sandwich {
  double lower = 0.0;
  double upper = 0.0;
};

inline Sandwich v_degiorgi_bounds(double u_abs, double k, double m) {
  const double d = std::max(std::pow(u_abs, m) - std::pow(k, m), 0.0);
  return {(m + 1.0) / (3.0 * m + 1.0) * std::pow(d, 3.0 + 1.0 / m), (m + 1.0) / (3.0 * m) * u_abs * d * d * d};
}

// ---------------------------------------------------------------------------
// Power-of-vector inequalities on random samples.

namespace detail {
using Vec = std::vector<double>;

inline double norm(const Vec& a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}
inline double dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}
inline Vec vpow(const Vec& a, double alpha) { return vpower(std::span<const double>(a), alpha); }

// Random vector with log-uniform magnitude over 8 decades.
inline Vec random_vec(const CounterRng& rng, std::uint64_t k, int dim) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal(k * (dim + 1) + i);
  const double n = norm(v);
  const double mag = std::pow(10.0, 8.0 * rng.uniform(0xabcdef00ULL + k) - 4.0);
  for (double& x : v) x *= n > 0.0 ? mag / n : 0.0;
  return v;
}

// Minimizer of b -> sum |w_i - b|^p by reweighted least squares.
inline Vec lp_center(const std::vector<Vec>& w, double p) {
  const std::size_t dim = w.front().size();
  Vec b(dim, 0.0);
  for (const auto& x : w)
    for (std::size_t i = 0; i < dim; ++i) b[i] += x[i] / double(w.size());
  if (p == 2.0) return b;
  for (int it = 0; it < 50; ++it) {
    Vec num(dim, 0.0);
    double den = 0.0;
    for (const auto& x : w) {
      const double d = std::max(dist(x, b), 1e-300);
      const double wt = std::pow(d, p - 2.0);
      for (std::size_t i = 0; i < dim; ++i) num[i] += wt * x[i];
      den += wt;
    }
    for (std::size_t i = 0; i < dim; ++i) b[i] = num[i] / den;
  }
  return b;
}
}  // namespace detail

// Empirical constants of the two-sided power comparison, the difference bound and
// quasi-minimality of means of powers. lhs holds the largest observed constant.
inline std::vector<Report> check_power_inequalities(double alpha, std::uint64_t samples, std::uint64_t seed,
                                                    double p = 2.0, int dim = 3) {
  if (!(alpha > 0.0)) throw DomainError("power inequalities: alpha must be positive");
  const CounterRng rng{seed, 0x9051};
  std::vector<Report> out;

  Report af;
  af.check = "power-two-sided";
  af.anchor = "power-comparison";
  af.params = {{"alpha", alpha}, {"samples", samples}, {"dim", dim}};
  af.seed = seed;
  Report ad;
  ad.check = "power-difference";
  ad.anchor = "power-difference";
  ad.params = af.params;
  ad.seed = seed;
  double c_af = 0.0, c_ad = 0.0;
  for (std::uint64_t i = 0; i < samples; ++i) {
    const auto a = detail::random_vec(rng, 2 * i, dim);
    auto b = detail::random_vec(rng, 2 * i + 1, dim);
    if (i % 7 == 0)
      for (double& x : b) x = 0.0;
    const double pd = detail::dist(detail::vpow(b, alpha), detail::vpow(a, alpha));
    const double mid = std::pow(detail::norm(a) + detail::norm(b), alpha - 1.0) * detail::dist(a, b);
    if (pd > 0.0 && mid > 0.0) c_af = std::max({c_af, pd / mid, mid / pd});
    if (pd > 0.0) c_ad = std::max(c_ad, std::pow(detail::dist(a, b), alpha) / pd);
  }
  af.set_sides(c_af, 1.0);
  af.branch = "max-constant";
  out.push_back(af);
  if (alpha >= 1.0) {
    ad.set_sides(c_ad, 1.0);
    ad.branch = "max-constant";
  } else {
    ad.status = Status::precondition_unmet;
    ad.note = "requires alpha >= 1";
  }
  out.push_back(ad);

  Report qm;
  qm.check = "power-quasi-minimality";
  qm.anchor = "power-quasi-minimality";
  qm.params = {{"alpha", alpha}, {"p", p}, {"samples", samples}, {"dim", dim}};
  qm.seed = seed;
  if (p >= 1.0 && alpha >= 1.0 / p) {
    const CounterRng sets{seed, 0x9052};
    const std::uint64_t trials = std::max<std::uint64_t>(1, samples / 64);
    double c = 0.0;
    for (std::uint64_t tr = 0; tr < trials; ++tr) {
      const int nB = 64, nA = 1 + int(sets.uniform(tr) * nB);
      std::vector<detail::Vec> u(nB), w(nB);
      for (int i = 0; i < nB; ++i) {
        u[i] = detail::random_vec(sets, tr * 64 + i, dim);
        w[i] = detail::vpow(u[i], alpha);
      }
      detail::Vec uA(dim, 0.0);
      for (int i = 0; i < nA; ++i)
        for (int j = 0; j < dim; ++j) uA[j] += u[i][j] / nA;
      const auto wA = detail::vpow(uA, alpha);
      const auto best = detail::lp_center(w, p);
      double lhs = 0.0, rhs = 0.0;
      for (int i = 0; i < nB; ++i) {
        lhs += std::pow(detail::dist(w[i], wA), p) / nB;
        rhs += std::pow(detail::dist(w[i], best), p) / nB;
      }
      rhs *= double(nB) / nA;
      if (rhs > 0.0) c = std::max(c, lhs / rhs);
    }
    qm.set_sides(c, 1.0);
    qm.branch = "max-constant";
  } else {
    qm.status = Status::precondition_unmet;
    qm.note = "requires p >= 1 and alpha >= 1/p";
  }
  out.push_back(qm);
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers for the integral checkers.

namespace detail {

inline std::vector<double> vpow_value(const Value& v, double alpha) { return vpower(v.comps(), alpha); }

inline double diff_sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct Acc {
  double err = 0.0;
  bool divergent = false;
  double take(const Integral& I) {
    err += I.error;
    divergent = divergent || I.divergent || !std::isfinite(I.value);
    return I.value;
  }
};

inline double mean_of(const Field& f, const Cylinder& c, const ValueFn& h, const QuadratureSpec& q, Acc& acc) {
  return acc.take(cylinder_mean(f, c, h, q));
}

inline double force_mean(const Field& f, const Cylinder& c, double p, const QuadratureSpec& q, Acc& acc) {
  const double I = mean_of(f, c, [p](const Value& v, double) { return std::pow(v.force, 2.0 * p); }, q, acc);
  return I > 0.0 ? std::pow(I, 1.0 / p) : 0.0;
}

inline Json cylinder_json(const Cylinder& c) {
  return {{"kind", to_string(c.kind)}, {"x", c.x}, {"t", c.t}, {"rho", c.rho}, {"theta", c.theta}, {"S", c.S}};
}

inline void finish(Report& r, const Acc& acc, double lhs, double rhs) {
  r.quadrature_error = acc.err;
  if (acc.divergent) {
    r.status = Status::divergent;
    r.lhs = lhs;
    r.rhs = rhs;
    r.ratio = std::numeric_limits<double>::infinity();
    return;
  }
  r.set_sides(lhs, rhs);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Caccioppoli-type energy estimate on Q_r^{(theta)} inside Q_rho^{(theta)}.

inline Report check_energy(const Field& f, const Cylinder& Q, double r_in, const std::vector<double>& a,
                           const QuadratureSpec& q) {
  if (Q.kind != CylinderKind::intrinsic) throw DomainError("energy: intrinsic cylinder required");
  const double rho = Q.rho, m = f.m;
  if (!(r_in >= 0.5 * rho && r_in < rho)) throw DomainError("energy: inner radius must lie in [rho/2, rho)");
  if (int(a.size()) != f.k) throw DomainError("energy: constant has the wrong number of components");
  const double h = 0.5 * (1.0 + m);
  const auto ah = vpower(std::span<const double>(a), h);
  const auto am = vpower(std::span<const double>(a), m);
  const Cylinder inner = Q.with_radius(r_in);
  detail::Acc acc;
  auto dh = [&](const Value& v, double) { return detail::diff_sq(detail::vpow_value(v, h), ah); };
  auto dm = [&](const Value& v, double) { return detail::diff_sq(detail::vpow_value(v, m), am); };
  auto g2 = [](const Value& v, double) { return v.grad * v.grad; };
  auto F2 = [](const Value& v, double) { return v.force * v.force; };

  double sup = 0.0;
  const double b = inner.ball_radius();
  for (int i = 0; i <= 32; ++i) {
    const double t = inner.t_lo() + inner.duration() * i / 32.0;
    sup = std::max(sup, acc.take(slice_mean(f, inner.x, b, t, dh, q)));
  }
  const double rp = std::pow(r_in, (1.0 + m) / m), Rp = std::pow(rho, (1.0 + m) / m);
  const double lhs = sup / rp + detail::mean_of(f, inner, g2, q, acc);
  const double rhs = detail::mean_of(f, Q, dh, q, acc) / (Rp - rp) +
                     detail::mean_of(f, Q, dm, q, acc) /
                         (std::pow(Q.theta, 2.0 * m * (m - 1.0) / (1.0 + m)) * (rho - r_in) * (rho - r_in)) +
                     detail::mean_of(f, Q, F2, q, acc);
  Report r;
  r.check = "energy";
  r.anchor = "energy-caccioppoli";
  r.params = {{"cylinder", detail::cylinder_json(Q)}, {"r_in", r_in}, {"a", a}, {"m", m}};
  r.branch = "C=1";
  detail::finish(r, acc, lhs, rhs);
  return r;
}

// ---------------------------------------------------------------------------
// Energy estimates with a cut-off on one-sided cylinders.

struct Cutoff {
  double inner = 0.5;  // zeta = 1 on B_{inner R}, linear to 0 at R
  double ramp = 0.5;   // zeta rises linearly over the first `ramp` fraction of the time interval

  void validate() const {
    if (!(inner > 0.0 && inner < 1.0 && ramp > 0.0 && ramp <= 1.0)) throw DomainError("cutoff: invalid profile");
  }
};

namespace detail {
struct CutoffEval {
  double zeta = 0.0;
  double grad = 0.0;  // |grad zeta|
  double dt_sq = 0.0; // |d/dt zeta^2|
};

inline CutoffEval cutoff_at(const Cylinder& Q, const Cutoff& z, std::span<const double> y, double t) {
  const double R = Q.ball_radius(), S = Q.duration();
  double d2 = 0.0;
  for (int i = 0; i < Q.dim(); ++i) d2 += (y[i] - Q.x[i]) * (y[i] - Q.x[i]);
  const double s = std::sqrt(d2);
  double zx = 1.0, zx_d = 0.0;
  if (s >= R) {
    zx = 0.0;
  } else if (s > z.inner * R) {
    zx = (R - s) / ((1.0 - z.inner) * R);
    zx_d = 1.0 / ((1.0 - z.inner) * R);
  }
  const double tau = (t - Q.t_lo()) / (z.ramp * S);
  const double zt = std::clamp(tau, 0.0, 1.0);
  const double zt_d = tau > 0.0 && tau < 1.0 ? 1.0 / (z.ramp * S) : 0.0;
  return {zx * zt, zx_d * zt, 2.0 * zx * zx * zt * zt_d};
}

// Time panels split where the cut-off ramp ends.
inline QuadratureSpec cutoff_spec(QuadratureSpec q, const Cutoff& z) {
  const double inv = 1.0 / z.ramp;
  q.time_panels = std::max(q.time_panels, std::abs(inv - std::round(inv)) < 1e-12 ? int(std::round(inv)) : 4);
  return q;
}

inline double sup_slice_x(const Field& f, const Cylinder& Q, const PointFn& h, const QuadratureSpec& q, Acc& acc) {
  double sup = 0.0;
  for (int i = 1; i <= 32; ++i) {
    const double t = Q.t_lo() + Q.duration() * i / 32.0;
    sup = std::max(sup, acc.take(ball_integral_x(f, Q.x, Q.ball_radius(), t, h, q)));
  }
  return sup;
}
}  // namespace detail

inline Report check_energy_phi(const Field& f, const Cylinder& Q, const PhiTestFn& fn, const Cutoff& z,
                               const QuadratureSpec& q0) {
  if (Q.kind != CylinderKind::one_sided) throw DomainError("energy-phi: one-sided cylinder required");
  fn.validate();
  z.validate();
  const double m = f.m;
  const auto q = detail::cutoff_spec(q0, z);
  detail::Acc acc;
  auto Phi = [&](const Value& v) { return phi(fn, std::pow(v.norm(), 2.0 * m)); };
  auto sup_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    return v_of(fn, v.norm(), m) * c.zeta * c.zeta;
  };
  auto grad_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    return v.grad * v.grad * Phi(v) * c.zeta * c.zeta;
  };
  auto cut_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    return std::pow(v.norm(), 2.0 * m) * Phi(v) * c.grad * c.grad;
  };
  auto time_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    return v_of(fn, v.norm(), m) * c.dt_sq;
  };
  auto force_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    const double s = std::pow(v.norm(), 2.0 * m);
    return v.force * v.force * (Phi(v) + s * phi_prime(fn, s)) * c.zeta * c.zeta;
  };
  const double lhs = detail::sup_slice_x(f, Q, sup_term, q, acc) / (m + 1.0) +
                     0.5 * acc.take(cylinder_integral_x(f, Q, grad_term, q));
  const double rhs = acc.take(cylinder_integral_x(f, Q, cut_term, q)) +
                     2.0 / (m + 1.0) * acc.take(cylinder_integral_x(f, Q, time_term, q)) +
                     (1.0 + fn.alpha) * acc.take(cylinder_integral_x(f, Q, force_term, q));
  Report r;
  r.check = "energy-phi";
  r.anchor = "energy-moser-phi";
  r.params = {{"cylinder", detail::cylinder_json(Q)}, {"alpha", fn.alpha}, {"k", fn.k}, {"ell", fn.ell},
              {"m", m}, {"cutoff_inner", z.inner}, {"cutoff_ramp", z.ramp}};
  r.branch = "C1=C2=1";
  detail::finish(r, acc, lhs, rhs);
  return r;
}

inline Report check_energy_degiorgi(const Field& f, const Cylinder& Q, double k, const Cutoff& z,
                                    const QuadratureSpec& q0) {
  if (Q.kind != CylinderKind::one_sided) throw DomainError("energy-degiorgi: one-sided cylinder required");
  if (!(k >= 0.0)) throw DomainError("energy-degiorgi: level must be non-negative");
  z.validate();
  const double m = f.m, km = std::pow(k, m);
  const auto q = detail::cutoff_spec(q0, z);
  detail::Acc acc;
  auto excess = [&](const Value& v) { return std::max(std::pow(v.norm(), m) - km, 0.0); };
  auto sup_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    return std::pow(excess(v), 3.0 + 1.0 / m) * c.zeta * c.zeta;
  };
  auto grad_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    const double g = 2.0 * excess(v) * v.grad_abs;
    return g * g * c.zeta * c.zeta;
  };
  auto cut_term = [&](const Value& v, std::span<const double> y, double t) {
    if (!(v.norm() > k)) return 0.0;
    const auto c = detail::cutoff_at(Q, z, y, t);
    return std::pow(v.norm(), 4.0 * m) * c.grad * c.grad;
  };
  auto time_term = [&](const Value& v, std::span<const double> y, double t) {
    const auto c = detail::cutoff_at(Q, z, y, t);
    const double e = excess(v);
    return v.norm() * e * e * e * c.dt_sq;
  };
  auto force_term = [&](const Value& v, std::span<const double> y, double t) {
    if (!(v.norm() > k)) return 0.0;
    const auto c = detail::cutoff_at(Q, z, y, t);
    return v.force * v.force * std::pow(v.norm(), 2.0 * m) * c.zeta * c.zeta;
  };
  const double lhs = detail::sup_slice_x(f, Q, sup_term, q, acc) + acc.take(cylinder_integral_x(f, Q, grad_term, q));
  const double rhs = acc.take(cylinder_integral_x(f, Q, cut_term, q)) + acc.take(cylinder_integral_x(f, Q, time_term, q)) +
                     acc.take(cylinder_integral_x(f, Q, force_term, q));

  // Two-sided bound on the energy density at sample points of the cylinder.
  bool sandwich = true;
  int checked = 0;
  for (int it = 0; it <= 8; ++it) {
    const double t = Q.t_lo() + Q.duration() * (it + 0.5) / 9.0;
    for (int is = 0; is < 8; ++is)
      for (int dir = 0; dir < 2 * Q.dim(); ++dir) {
        std::vector<double> y = Q.x;
        y[dir / 2] += (dir % 2 ? -1.0 : 1.0) * Q.ball_radius() * (is + 0.5) / 8.0;
        const double u = f.at(y, t).norm();
        const double v = v_degiorgi(u, k, m);
        const auto b = v_degiorgi_bounds(u, k, m);
        ++checked;
        if (!(b.lower <= v * (1.0 + 1e-10) && v <= b.upper * (1.0 + 1e-10))) sandwich = false;
      }
  }
  Report r;
  r.check = "energy-degiorgi";
  r.anchor = "energy-degiorgi";
  r.params = {{"cylinder", detail::cylinder_json(Q)}, {"k", k}, {"m", m}, {"cutoff_inner", z.inner},
              {"cutoff_ramp", z.ramp}, {"sandwich_points", checked}, {"sandwich_holds", sandwich}};
  r.branch = sandwich ? "C=1;sandwich-ok" : "C=1;sandwich-violated";
  detail::finish(r, acc, lhs, rhs);
  return r;
}

// ---------------------------------------------------------------------------
// Gluing: slice means at different times.

inline Report check_gluing(const Field& f, const Cylinder& Q, const QuadratureSpec& q) {
  if (Q.kind != CylinderKind::intrinsic) throw DomainError("gluing: intrinsic cylinder required");
  const double m = f.m, rho = Q.rho;
  detail::Acc acc;
  std::vector<double> ts(8);
  for (int i = 0; i < 8; ++i) ts[i] = Q.t_lo() + Q.duration() * (i + 0.5) / 8.0;
  double best = std::numeric_limits<double>::infinity(), best_r = rho;
  for (int j = 0; j < 16; ++j) {
    const double rh = 0.5 * rho + 0.5 * rho * j / 15.0;
    const double b = Q.space_factor() * rh;
    std::vector<std::vector<double>> means(ts.size(), std::vector<double>(f.k));
    for (std::size_t i = 0; i < ts.size(); ++i)
      for (int c = 0; c < f.k; ++c)
        means[i][c] = acc.take(slice_mean(f, Q.x, b, ts[i], [c](const Value& v, double) { return v.u[c]; }, q));
    double worst = 0.0;
    for (std::size_t a = 0; a < ts.size(); ++a)
      for (std::size_t e = a + 1; e < ts.size(); ++e) worst = std::max(worst, std::sqrt(detail::diff_sq(means[a], means[e])));
    if (worst < best) {
      best = worst;
      best_r = rh;
    }
  }
  const double bracket =
      detail::mean_of(f, Q, [](const Value& v, double) { return v.grad + v.force; }, q, acc);
  const double rhs = std::pow(Q.theta, m * (1.0 - m) / (1.0 + m)) * std::pow(rho, 1.0 / m) * bracket;
  Report r;
  r.check = "gluing";
  r.anchor = "gluing";
  r.params = {{"cylinder", detail::cylinder_json(Q)}, {"m", m}, {"rho_hat", best_r}, {"radius_points", 16},
              {"time_points", 8}};
  r.branch = "grid-min";
  detail::finish(r, acc, best, rhs);
  return r;
}

// ---------------------------------------------------------------------------
// Intrinsic couplings and the checks that need them.

struct Coupling {
  bool sub = false;
  bool super_u = false;
  bool super_grad = false;
  double sub_ratio = 0.0;
  double super_u_ratio = 0.0;
  double super_grad_ratio = 0.0;
  std::string branch() const {
    if (super_u) return "super-u";
    if (super_grad) return "super-gradient";
    return "none";
  }
};

// Relative slack for couplings that hold with equality on constructed cylinders.
inline constexpr double kCouplingSlack = 1e-6;

inline Coupling check_couplings(const Field& f, const std::vector<double>& x, double t, double rho, double theta,
                                double K, const Params& P, const QuadratureSpec& q) {
  Coupling c;
  const auto Q1 = Cylinder::intrinsic(x, t, rho, theta, P.m);
  const auto Q2 = Q1.with_radius(2.0 * rho);
  detail::Acc acc;
  const double level = std::pow(theta, 2.0 * P.r * P.m / (1.0 + P.m));
  const double Kr = std::pow(K, P.r / (1.0 + P.m));
  auto ur = [&](const Value& v, double) { return std::pow(v.norm(), P.r); };
  const double m2 = detail::mean_of(f, Q2, ur, q, acc) / std::pow(2.0 * rho, P.r / P.m);
  const double m1 = detail::mean_of(f, Q1, ur, q, acc) / std::pow(rho, P.r / P.m);
  const double g = detail::mean_of(f, Q1, [](const Value& v, double) { return v.grad * v.grad; }, q, acc) +
                   detail::force_mean(f, Q1, P.p, q, acc);
  if (acc.divergent) throw DivergenceError("couplings: integral diverges");
  c.sub_ratio = m2 / (Kr * level);
  c.super_u_ratio = level / (Kr * m1);
  c.super_grad_ratio = std::pow(theta, 2.0 * P.m) / (K * g);
  c.sub = c.sub_ratio <= 1.0 + kCouplingSlack;
  c.super_u = c.super_u_ratio <= 1.0 + kCouplingSlack;
  c.super_grad = c.super_grad_ratio <= 1.0 + kCouplingSlack;
  return c;
}

namespace detail {
inline Report coupling_report(const char* check, const char* anchor, const std::vector<double>& x, double t, double rho,
                              double theta, double K, const Params& P, const Coupling& c) {
  Report r;
  r.check = check;
  r.anchor = anchor;
  r.params = {{"params", params_json(P)}, {"x", x},       {"t", t},
              {"rho", rho},               {"theta", theta}, {"K", K},
              {"q", q_exponent(P)},       {"sub_ratio", c.sub_ratio},
              {"super_u_ratio", c.super_u_ratio}, {"super_gradient_ratio", c.super_grad_ratio}};
  r.branch = c.branch();
  return r;
}

inline bool coupling_unmet(Report& r, bool ok, const char* why) {
  if (ok) return false;
  r.status = Status::precondition_unmet;
  r.note = why;
  r.ratio = std::numeric_limits<double>::quiet_NaN();
  return true;
}
}  // namespace detail

inline Report check_poincare(const Field& f, const std::vector<double>& x, double t, double rho, double theta, double K,
                             const Params& P, const QuadratureSpec& q) {
  const auto c = check_couplings(f, x, t, rho, theta, K, P, q);
  Report r = detail::coupling_report("poincare", "sobolev-poincare", x, t, rho, theta, K, P, c);
  if (detail::coupling_unmet(r, c.sub && (c.super_u || c.super_grad), "intrinsic coupling fails")) return r;
  const double m = P.m, h = 0.5 * (1.0 + m), qe = q_exponent(P);
  const auto Q1 = Cylinder::intrinsic(x, t, rho, theta, m);
  const auto Q2 = Q1.with_radius(2.0 * rho);
  detail::Acc acc;
  // Mean taken relative to the value at the center, so constant fields give exact zeros.
  const auto wref = detail::vpow_value(f.at(Q1.x, Q1.t), h);
  std::vector<double> wbar(f.k);
  for (int i = 0; i < f.k; ++i)
    wbar[i] = wref[i] + detail::mean_of(f, Q1, [&](const Value& v, double) { return detail::vpow_value(v, h)[i] - wref[i]; },
                                        q, acc);
  const double lhs =
      detail::mean_of(f, Q1, [&](const Value& v, double) { return detail::diff_sq(detail::vpow_value(v, h), wbar); }, q,
                      acc) /
      std::pow(rho, (1.0 + m) / m);
  const double gq = detail::mean_of(f, Q2, [&](const Value& v, double) { return std::pow(v.grad, 2.0 * qe); }, q, acc);
  const double rhs = std::pow(2.0, (1.0 + m) / m) * (gq > 0.0 ? std::pow(gq, 1.0 / qe) : 0.0) +
                     detail::force_mean(f, Q2, P.p, q, acc);
  detail::finish(r, acc, lhs, rhs);
  return r;
}

inline Report check_revholder(const Field& f, const std::vector<double>& x, double t, double rho, double theta, double K,
                              const Params& P, const QuadratureSpec& q) {
  const auto c = check_couplings(f, x, t, rho, theta, K, P, q);
  Report r = detail::coupling_report("revholder", "reverse-holder", x, t, rho, theta, K, P, c);
  if (detail::coupling_unmet(r, c.sub && (c.super_u || c.super_grad), "intrinsic coupling fails")) return r;
  const double qe = q_exponent(P);
  const auto Q1 = Cylinder::intrinsic(x, t, rho, theta, P.m);
  const auto Q2 = Q1.with_radius(2.0 * rho);
  detail::Acc acc;
  const double lhs = detail::mean_of(f, Q1, [](const Value& v, double) { return v.grad * v.grad; }, q, acc);
  const double gq = detail::mean_of(f, Q2, [&](const Value& v, double) { return std::pow(v.grad, 2.0 * qe); }, q, acc);
  const double rhs = (gq > 0.0 ? std::pow(gq, 1.0 / qe) : 0.0) + detail::force_mean(f, Q2, P.p, q, acc);
  detail::finish(r, acc, lhs, rhs);
  return r;
}

inline Report check_theta_bound(const Field& f, const std::vector<double>& x, double t, double rho, double theta,
                                const Params& P, const QuadratureSpec& q) {
  const auto c = check_couplings(f, x, t, rho, theta, 1.0, P, q);
  Report r = detail::coupling_report("theta-bound", "theta-bound", x, t, rho, theta, 1.0, P, c);
  if (detail::coupling_unmet(r, c.sub && c.super_u, "sub-intrinsic and u-super-intrinsic coupling with K = 1 required"))
    return r;
  const double m = P.m;
  const auto Q1 = Cylinder::intrinsic(x, t, rho, theta, m);
  const auto Qh = Q1.with_radius(0.5 * rho);
  const auto Q2 = Q1.with_radius(2.0 * rho);
  detail::Acc acc;
  const double uh = detail::mean_of(f, Qh, [m](const Value& v, double) { return std::pow(v.norm(), 1.0 + m); }, q, acc) /
                    std::pow(0.5 * rho, (1.0 + m) / m);
  const double g = detail::mean_of(f, Q2, [](const Value& v, double) { return v.grad * v.grad; }, q, acc) +
                   detail::force_mean(f, Q2, P.p, q, acc);
  const double rhs = std::sqrt(uh) / std::sqrt(2.0) + std::sqrt(g);
  detail::finish(r, acc, std::pow(theta, m), rhs);
  return r;
}

// Overloads taking theta from a built system.
inline Report check_poincare(const Field& f, const ThetaSystem& S, double rho, double K, const QuadratureSpec& q) {
  return check_poincare(f, S.x, S.t, rho, S.theta_at(rho), K, S.P, q);
}
inline Report check_revholder(const Field& f, const ThetaSystem& S, double rho, double K, const QuadratureSpec& q) {
  return check_revholder(f, S.x, S.t, rho, S.theta_at(rho), K, S.P, q);
}
inline Report check_theta_bound(const Field& f, const ThetaSystem& S, double rho, const QuadratureSpec& q) {
  return check_theta_bound(f, S.x, S.t, rho, S.theta_at(rho), S.P, q);
}

// ---------------------------------------------------------------------------
// L-infinity bounds.

// One-sided Q_{rho,vartheta} = B_rho x (t - vartheta, t]; the sup is taken on Q_{sigma rho, sigma vartheta}.
inline Report check_supbound(const Field& f, const Cylinder& Q, double sigma, const Params& P, const QuadratureSpec& q) {
  if (Q.kind != CylinderKind::one_sided) throw DomainError("supbound: one-sided cylinder required");
  if (!(sigma >= 0.5 && sigma < 1.0)) throw DomainError("supbound: sigma must lie in [1/2, 1)");
  if (!(P.m < 1.0)) throw DomainError("supbound: m must be below 1");
  require_positive_lambda(P, "supbound");
  const int N = P.N;
  const double rho = Q.rho, th = Q.S;
  const auto shrunk = Cylinder::one_sided(Q.x, Q.t, sigma * rho, sigma * th);
  Report r;
  r.check = "supbound";
  r.anchor = "sup-bound";
  r.params = {{"params", params_json(P)}, {"cylinder", detail::cylinder_json(Q)}, {"sigma", sigma}};
  const auto sup = sup_norm(f, shrunk);
  if (sup.unbounded) {
    r.status = Status::unbounded;
    r.lhs = std::numeric_limits<double>::infinity();
    r.ratio = std::numeric_limits<double>::infinity();
    return r;
  }
  detail::Acc acc;
  const double ur = detail::mean_of(f, Q, [&](const Value& v, double) { return std::pow(v.norm(), P.r); }, q, acc);
  const double fr = detail::mean_of(f, Q, [&](const Value& v, double) { return std::pow(rho * v.force, 2.0 * P.p); }, q, acc);
  const double lam_p = lambda_of(N, P.m, P.p * (1.0 + P.m));
  const std::array<double, 3> br{
      std::pow(std::pow(1.0 - sigma, -(N + 2.0)) * std::pow(rho * rho / th, 0.5 * N) * ur, 2.0 / lambda_r(P)),
      fr > 0.0 ? std::pow(std::pow(th / (rho * rho), P.p - 0.5 * N) * fr, 2.0 / lam_p) : 0.0,
      std::pow(th / (rho * rho), 1.0 / (1.0 - P.m))};
  const char* names[] = {"u-mean", "forcing", "threshold"};
  const std::size_t arg = std::size_t(std::max_element(br.begin(), br.end()) - br.begin());
  r.branch = names[arg];
  r.params["branches"] = {br[0], br[1], br[2]};
  r.params["sup_uncertainty"] = detail::number_or_null(sup.uncertainty);
  detail::finish(r, acc, sup.value, br[arg]);
  return r;
}

// Centered form: sup over Q_rho^{(theta)} against averages over Q_{2 rho}^{(theta)}.
inline Report check_supbound_centered(const Field& f, const Cylinder& Q, const Params& P, const QuadratureSpec& q) {
  if (Q.kind != CylinderKind::intrinsic) throw DomainError("supbound-centered: intrinsic cylinder required");
  require_positive_lambda(P, "supbound-centered");
  const int N = P.N;
  const double m = P.m, rho = Q.rho, th = Q.theta;
  const auto Q2 = Q.with_radius(2.0 * rho);
  Report r;
  r.check = "supbound-centered";
  r.anchor = "sup-bound-centered";
  r.params = {{"params", params_json(P)}, {"cylinder", detail::cylinder_json(Q)}};
  const auto sup = sup_norm(f, Q);
  if (sup.unbounded) {
    r.status = Status::unbounded;
    r.lhs = std::numeric_limits<double>::infinity();
    r.ratio = std::numeric_limits<double>::infinity();
    return r;
  }
  detail::Acc acc;
  const double ur = detail::mean_of(f, Q2, [&](const Value& v, double) { return std::pow(v.norm(), P.r); }, q, acc);
  const double fr = detail::mean_of(f, Q2, [&](const Value& v, double) { return std::pow(v.force, 2.0 * P.p); }, q, acc);
  const double scale = std::pow(rho, 1.0 / m) * std::pow(th, 2.0 * m / (1.0 + m));
  const double lam_p = lambda_of(N, m, P.p * (1.0 + m));
  const std::array<double, 3> terms{
      std::pow(std::pow(scale, 0.5 * N * (m - 1.0)) * ur, 2.0 / lambda_r(P)),
      fr > 0.0 ? std::pow(rho, 1.0 / m) * std::pow(std::pow(th, m * N * (m - 1.0) / (1.0 + m)) * fr, 2.0 / lam_p) : 0.0,
      scale};
  const char* names[] = {"u-mean", "forcing", "threshold"};
  r.branch = names[std::max_element(terms.begin(), terms.end()) - terms.begin()];
  r.params["terms"] = {terms[0], terms[1], terms[2]};
  detail::finish(r, acc, sup.value, terms[0] + terms[1] + terms[2]);
  return r;
}

// ---------------------------------------------------------------------------
// Main higher-integrability estimate.

enum class MainGeometry { intrinsic, parabolic };

inline Report check_main_estimate(const Field& f, const std::vector<double>& x, double t, double R, double eps,
                                  const Params& P, const QuadratureSpec& q,
                                  MainGeometry geom = MainGeometry::intrinsic) {
  if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("main estimate: eps must lie in (0, 1]");
  require_positive_lambda(P, "main estimate");
  const double m = P.m, d = scaling_deficit(P);
  const bool intr = geom == MainGeometry::intrinsic;
  const auto QR = intr ? Cylinder::intrinsic(x, t, R, 1.0, m) : Cylinder::parabolic(x, t, R);
  const auto Q2 = QR.with_radius(2.0 * R);
  Report r;
  r.check = intr ? "main" : "main-parabolic";
  r.anchor = intr ? "higher-integrability" : "higher-integrability-parabolic";
  r.params = {{"params", params_json(P)}, {"x", x}, {"t", t}, {"R", R}, {"eps", eps}, {"d", d}};
  detail::Acc lacc;
  const double lhs =
      detail::mean_of(f, QR, [&](const Value& v, double) { return std::pow(v.grad, 2.0 + 2.0 * eps); }, q, lacc);
  if (lacc.divergent) {
    r.status = Status::divergent;
    r.lhs = std::numeric_limits<double>::infinity();
    r.rhs = std::numeric_limits<double>::quiet_NaN();
    r.ratio = std::numeric_limits<double>::infinity();
    r.quadrature_error = lacc.err;
    r.note = "left side diverges";
    return r;
  }
  detail::Acc acc;
  acc.err = lacc.err;
  const double ur = detail::mean_of(f, Q2, [&](const Value& v, double) { return std::pow(v.norm(), P.r); }, q, acc);
  const double fm = detail::force_mean(f, Q2, P.p, q, acc);
  const double g2 = detail::mean_of(f, Q2, [](const Value& v, double) { return v.grad * v.grad; }, q, acc);
  double U = 1.0;
  if (intr) {
    const double uu = ur / std::pow(R, P.r / m);
    U += (uu > 0.0 ? std::pow(uu, (1.0 + m) / P.r) : 0.0) + fm;
  } else {
    U += (ur > 0.0 ? std::pow(ur, (1.0 + m) / P.r) : 0.0) + R * R * fm;
  }
  const double grad_part = std::pow(U, eps * d) * g2 * (intr ? 1.0 : std::pow(R, -2.0 * eps));
  const double rhs = grad_part + (fm > 0.0 ? std::pow(fm, 1.0 + eps) : 0.0);
  r.params["U"] = detail::number_or_null(U);
  r.branch = "C=1";
  detail::finish(r, acc, lhs, rhs);
  return r;
}

// ---------------------------------------------------------------------------
// Integrability probe over dyadic annuli around the singular point.

struct ProbeOptions {
  int j_start = 1;    // first annulus {2^{-j-1} <= |x| <= 2^{-j}}
  int annuli = 16;    // J
  double t_lo = 0.0;  // time window
  double t_hi = 0.0;
  std::vector<double> s_grid;  // exponents; default 1..8 step 0.05
};

struct ProbeResult {
  double critical_s = std::numeric_limits<double>::quiet_NaN();
  double critical_eps = std::numeric_limits<double>::quiet_NaN();
  double min_r2 = 1.0;
  bool reliable = false;
  std::vector<double> s_grid;
  std::vector<double> slopes;  // per-annulus log-growth of a_j per exponent
  std::vector<double> r2;
};

namespace detail {
struct Fit {
  double slope = 0.0;
  double r2 = 1.0;
};
inline Fit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  Fit f;
  f.slope = sxy / sxx;
  const double ssr = syy - f.slope * sxy;
  f.r2 = syy > 0.0 ? 1.0 - std::max(ssr, 0.0) / syy : 1.0;
  return f;
}
}  // namespace detail

inline ProbeResult probe_integrability(const ExactSolution& sol, ProbeOptions opt, const QuadratureSpec& q = {}) {
  if (opt.annuli < 10) throw DomainError("probe: at least 10 annuli required");
  if (opt.t_hi <= opt.t_lo) {
    opt.t_lo = std::max(sol.t_lo(), sol.T - 1.0);
    opt.t_hi = opt.t_lo + 0.5 * (sol.T - opt.t_lo);
  }
  if (opt.s_grid.empty())
    for (int i = 0; i <= 140; ++i) opt.s_grid.push_back(1.0 + 0.05 * i);
  const Rule tr = composite_rule(opt.t_lo, opt.t_hi, q.time_order, 1);
  const double area = sphere_area(sol.N);
  ProbeResult res;
  res.s_grid = opt.s_grid;
  std::vector<double> js;
  for (int j = 0; j < opt.annuli; ++j) js.push_back(opt.j_start + j);
  // ln a_j is computed from ln|grad u^m| to avoid underflow at tiny radii.
  for (double s : opt.s_grid) {
    std::vector<double> la;
    for (double j : js) {
      const double lo = std::ldexp(1.0, -int(j) - 1), hi = 2.0 * lo;
      // Factor out the value at the outer radius so integrands stay O(1).
      const double ref = std::log(std::abs(sol.dum_ds(hi, tr.x[0])));
      std::vector<double> parts(tr.x.size());
      for (std::size_t i = 0; i < tr.x.size(); ++i) {
        const double t = tr.x[i];
        auto g = [&](double x) {
          const double rr = lo + (hi - lo) * x;
          return std::exp(s * (std::log(std::abs(sol.dum_ds(rr, t))) - ref)) * std::pow(rr / hi, sol.N - 1);
        };
        parts[i] = tr.w[i] * adaptive_integral(g, 0.0, 1.0, q).value;
      }
      const double I = pairwise_sum(parts);
      la.push_back(std::log(I) + s * ref + (sol.N - 1) * std::log(hi) + std::log(area * (hi - lo)));
    }
    const auto fit = detail::linear_fit(js, la);
    // a_j shrinks with j when the integral converges; growth rate per annulus.
    res.slopes.push_back(fit.slope);
    res.r2.push_back(fit.r2);
  }
  double maxabs = 0.0;
  for (double sl : res.slopes) maxabs = std::max(maxabs, std::abs(sl));
  res.min_r2 = 1.0;
  for (std::size_t i = 0; i < res.slopes.size(); ++i)
    if (std::abs(res.slopes[i]) > 0.05 * maxabs) res.min_r2 = std::min(res.min_r2, res.r2[i]);
  for (std::size_t i = 0; i + 1 < res.slopes.size(); ++i) {
    const double a = res.slopes[i], b = res.slopes[i + 1];
    if ((a < 0.0 && b >= 0.0) || (a <= 0.0 && b > 0.0)) {
      const double w = a == b ? 0.0 : -a / (b - a);
      res.critical_s = res.s_grid[i] + w * (res.s_grid[i + 1] - res.s_grid[i]);
      break;
    }
  }
  res.critical_eps = res.critical_s - 2.0;
  res.reliable = std::isfinite(res.critical_s) && res.min_r2 >= 0.99;
  return res;
}

inline Json to_json(const ProbeResult& p) {
  return {{"critical_s", detail::number_or_null(p.critical_s)},
          {"critical_eps", detail::number_or_null(p.critical_eps)},
          {"min_r2", p.min_r2},
          {"reliable", p.reliable}};
}

// Image of a cylinder under the scaling x -> c + lambda (x - c), u -> lambda^{-2/(1-m)} u
// with time fixed, which maps solutions of the prototype equation to solutions.
inline Cylinder scaling_image(const Cylinder& c, double lambda, double m, std::span<const double> center) {
  if (!(lambda > 0.0)) throw DomainError("scaling: factor must be positive");
  if (!(m > 0.0 && m < 1.0)) throw DomainError("scaling: requires 0 < m < 1");
  if (c.kind == CylinderKind::parabolic) throw DomainError("scaling: parabolic cylinders have no image");
  Cylinder out = c;
  for (int i = 0; i < c.dim(); ++i) out.x[i] = center[i] + lambda * (c.x[i] - center[i]);
  if (c.kind == CylinderKind::intrinsic)
    out.theta = c.theta * std::pow(lambda, -(1.0 + m) / (m * (1.0 - m)));
  else
    out.rho = c.rho * lambda;
  return out;
}

// Amplitude factor of the same scaling.
inline double scaling_amplitude(double lambda, double m) { return std::pow(lambda, -2.0 / (1.0 - m)); }

// Largest over smallest of a set of positive ratios.
inline double spread(const std::vector<double>& ratios) {
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  return *hi / *lo;
}

}  // namespace fdl
