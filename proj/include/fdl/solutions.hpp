#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fdl/exponents.hpp"

namespace fdl {

struct SingularityError : DomainError {
  using DomainError::DomainError;
};

inline constexpr int kMaxComponents = 4;

inline double vpower(double u, double alpha) {
  if (u == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(u), alpha), u);
}

inline std::vector<double> vpower(std::span<const double> u, double alpha) {
  const double n = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
  std::vector<double> out(u.begin(), u.end());
  if (n == 0.0) return std::vector<double>(u.size(), 0.0);
  const double f = std::pow(n, alpha - 1.0);
  for (double& v : out) v *= f;
  return out;
}

// Pointwise data of a field: u, the radial derivative of each component of
// [u]^m (radial fields only), |D[u]^m|, |D|u|^m| and |F|.
struct Value {
  int k = 1;
  std::array<double, kMaxComponents> u{};
  std::array<double, kMaxComponents> dum{};
  double grad = 0.0;
  double grad_abs = 0.0;
  double force = 0.0;

  double norm() const {
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += u[i] * u[i];
    return std::sqrt(s);
  }
  std::span<const double> comps() const { return {u.data(), std::size_t(k)}; }
};

// Builds a radial Value from u components and radial derivatives of [u]^m.
inline Value radial_value(std::span<const double> u, std::span<const double> dum, double /*m*/, double force = 0.0) {
  Value v;
  v.k = int(u.size());
  double g2 = 0.0, un = 0.0;
  for (int i = 0; i < v.k; ++i) {
    v.u[i] = u[i];
    v.dum[i] = dum[i];
    g2 += dum[i] * dum[i];
    un += u[i] * u[i];
  }
  un = std::sqrt(un);
  v.grad = std::sqrt(g2);
  if (v.k == 1) {
    v.grad_abs = v.grad;
  } else if (un > 0.0) {
    // Differentiating <[u]^m, u> = |u|^{m+1} gives d|u|^m/ds = <d[u]^m/ds, u> / |u|.
    double dot = 0.0;
    for (int i = 0; i < v.k; ++i) dot += dum[i] * u[i];
    v.grad_abs = std::abs(dot) / un;
  }
  v.force = std::abs(force);
  return v;
}

enum class Provenance { analytic, sampled };

// A space-time map. Radial fields are evaluated through `profile(s, t)` with
// s the distance to `center`; others through `point(x, t)`.
struct Field {
  int N = 3;
  int k = 1;
  double m = 1.0;
  Provenance provenance = Provenance::analytic;
  bool radial = true;
  std::vector<double> center;
  std::function<Value(double, double)> profile;
  std::function<Value(std::span<const double>, double)> point;
  bool singular_at_center = false;
  bool time_independent = false;
  bool decreasing_in_s = false;
  int time_monotone = 0;  // +1 increasing, -1 decreasing, 0 unknown
  double s_max = std::numeric_limits<double>::infinity();
  double t_min = -std::numeric_limits<double>::infinity();
  double t_max = std::numeric_limits<double>::infinity();
  std::string label;

  double distance(std::span<const double> x) const {
    double s = 0.0;
    for (int i = 0; i < N; ++i) {
      const double c = center.empty() ? 0.0 : center[i];
      s += (x[i] - c) * (x[i] - c);
    }
    return std::sqrt(s);
  }

  Value at(std::span<const double> x, double t) const {
    if (radial) return profile(distance(x), t);
    return point(x, t);
  }
};

inline Field constant_field(int N, std::vector<double> c, double m = 1.0) {
  Field f;
  f.N = N;
  f.k = int(c.size());
  f.m = m;
  f.center.assign(N, 0.0);
  f.time_independent = true;
  f.label = "constant";
  Value v;
  v.k = f.k;
  for (int i = 0; i < f.k; ++i) v.u[i] = c[i];
  f.profile = [v](double, double) { return v; };
  return f;
}

inline Field constant_field(int N, double c, double m = 1.0) { return constant_field(N, std::vector<double>{c}, m); }

enum class SolutionKind { separable, king_kosov, kosov_critical };

inline const char* to_string(SolutionKind k) {
  switch (k) {
    case SolutionKind::separable: return "separable";
    case SolutionKind::king_kosov: return "king-kosov";
    default: return "kosov-critical";
  }
}

// The explicit radial solutions. Profiles are functions of s = |x| and t.
struct ExactSolution {
  SolutionKind kind = SolutionKind::separable;
  int N = 3;
  double m = 0.1;
  double T = 1.0;
  double A = 0.0;

  static ExactSolution separable(int N, double m, double T) {
    check_fast(N, m, T);
    return {SolutionKind::separable, N, m, T, 0.0};
  }
  static ExactSolution king_kosov(int N, double m, double T, double A) {
    check_fast(N, m, T);
    if (!(A >= 0.0)) throw DomainError("king_kosov: A must be >= 0");
    return {SolutionKind::king_kosov, N, m, T, A};
  }
  static ExactSolution kosov_critical(int N, double T) {
    if (N < 3) throw DomainError("kosov_critical: N must be >= 3");
    if (!(T > 0.0)) throw DomainError("kosov_critical: T must be positive");
    return {SolutionKind::kosov_critical, N, double(N - 2) / (N + 2), T, 0.0};
  }

  double lambda() const { return N * (m - 1.0) + 2.0; }
  double diffusion() const { return kind == SolutionKind::kosov_critical ? 1.0 / m : 1.0; }
  double prefactor() const {
    return std::pow(2.0 * m * std::abs(lambda()) / (1.0 - m), 1.0 / (1.0 - m));
  }
  double outer_radius() const {
    if (kind != SolutionKind::kosov_critical) return std::numeric_limits<double>::infinity();
    return std::pow(0.5 * T, 1.0 / (2.0 * m));
  }
  double t_lo() const {
    return kind == SolutionKind::kosov_critical ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  double t_hi() const {
    return kind == SolutionKind::kosov_critical ? 0.5 * T : std::numeric_limits<double>::infinity();
  }

  void check_point(double s, double t) const {
    if (s == 0.0) throw SingularityError("exact solution: x = 0 is singular");
    if (!(s > 0.0)) throw DomainError("exact solution: negative radius");
    if (kind == SolutionKind::kosov_critical) {
      if (!(t > 0.0 && t <= 0.5 * T)) throw DomainError("kosov_critical: t outside (0, T/2]");
      if (!(s < outer_radius())) throw DomainError("kosov_critical: |x| outside B_R");
    }
  }

  double u(double s, double t) const {
    check_point(s, t);
    const double tau = T - t;
    if (tau <= 0.0) return 0.0;
    switch (kind) {
      case SolutionKind::separable:
        return prefactor() * std::pow(tau, 1.0 / (1.0 - m)) * std::pow(s, -2.0 / (1.0 - m));
      case SolutionKind::king_kosov:
        return std::pow(tau, king_time_exp()) * std::pow(king_bracket(s, tau), -1.0 / (1.0 - m));
      default: {
        const double L = kosov_log(s, tau);
        return std::pow(0.5 * (N - 2) * tau, 0.25 * (N + 2)) * std::pow(s, -0.5 * (N + 2)) *
               std::pow(L, -0.25 * (N + 2));
      }
    }
  }

  double um(double s, double t) const { return std::pow(u(s, t), m); }

  // Radial derivative of u^m.
  double dum_ds(double s, double t) const {
    check_point(s, t);
    const double tau = T - t;
    if (tau <= 0.0) return 0.0;
    switch (kind) {
      case SolutionKind::separable: {
        const double K = prefactor();
        return -(2.0 * m / (1.0 - m)) * std::pow(K, m) * std::pow(tau, m / (1.0 - m)) *
               std::pow(s, -(1.0 + m) / (1.0 - m));
      }
      case SolutionKind::king_kosov: {
        const double a = (N - 2) * (1.0 - m) / m;
        const double c = (1.0 - m) / (2.0 * m * std::abs(lambda()));
        const double g = std::abs(lambda()) / (2.0 * m * m);
        const double br = king_bracket(s, tau);
        const double dbr = A * a * std::pow(s, a - 1.0) + 2.0 * c * s * std::pow(tau, g);
        return std::pow(tau, m * king_time_exp()) * (-m / (1.0 - m)) * std::pow(br, -m / (1.0 - m) - 1.0) * dbr;
      }
      default: {
        // u^m = c tau^{(N+2)m/4} s^{-(N-2)/2} L^{-(N-2)/4}, dL/ds = -1/s.
        const double L = kosov_log(s, tau);
        const double e = 0.25 * (N - 2);
        const double c = std::pow(0.5 * (N - 2) * tau, 0.25 * (N + 2) * m);
        const double base = c * std::pow(s, -2.0 * e) * std::pow(L, -e);
        return base * (-2.0 * e / s + e / (L * s));
      }
    }
  }

  // Radial component of the forcing F (zero for the unforced families).
  double forcing(double s, double t) const;

  double king_time_exp() const { return (N - 2 - 2.0 * m) / (2.0 * m * m); }
  double king_bracket(double s, double tau) const {
    const double a = (N - 2) * (1.0 - m) / m;
    const double c = (1.0 - m) / (2.0 * m * std::abs(lambda()));
    const double g = std::abs(lambda()) / (2.0 * m * m);
    return A * std::pow(s, a) + c * s * s * std::pow(tau, g);
  }
  double kosov_log(double s, double tau) const {
    const double L = -std::log(s) + std::log(tau) / (2.0 * m);
    if (!(L > 0.0)) throw DomainError("kosov_critical: logarithm argument >= 1");
    return L;
  }

 private:
  static void check_fast(int N, double m, double T) {
    if (!(m > 0.0 && m < critical_m(N)))
      throw DomainError("exact solution: m outside (0, (N-2)_+/(N+2))");
    if (!(T > 0.0)) throw DomainError("exact solution: T must be positive");
  }
};

inline double kosov_H(const ExactSolution& sol, double r, double t) {
  const int N = sol.N;
  const double L = sol.kosov_log(r, sol.T - t);
  return std::pow(r, 0.5 * (N - 4)) * (-2.0 * std::pow(L, -0.25 * (N - 2)) + std::pow(L, -0.25 * (N + 2)));
}

// G(r,t) = int_0^r H(s,t) ds, integrated in y with s = r e^{-y}.
inline double kosov_G(const ExactSolution& sol, double r, double t, double* err = nullptr) {
  const double tau = sol.T - t;
  sol.kosov_log(r, tau);
  auto f = [&](double y) {
    const double s = r * std::exp(-y);
    if (s <= 0.0) return 0.0;
    return kosov_H(sol, s, t) * s;
  };
  double e = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      f, 0.0, std::numeric_limits<double>::infinity(), 30, 1e-13, &e);
  if (err) *err = e;
  return v;
}

inline double kosov_G_asymptotic(const ExactSolution& sol, double r, double t) {
  const int N = sol.N;
  const double L = sol.kosov_log(r, sol.T - t);
  return -4.0 / (N - 2) * std::pow(r, 0.5 * (N - 2)) * std::pow(L, -0.25 * (N - 2));
}

inline double kosov_forcing_coeff(int N) {
  return 0.25 * (N + 2) * std::pow(0.5 * (N - 2), 0.25 * (N + 2));
}

inline double kosov_forcing(const ExactSolution& sol, double r, double t) {
  if (sol.kind != SolutionKind::kosov_critical) throw DomainError("kosov_forcing: not a critical solution");
  if (!(r > 0.0 && r < sol.outer_radius())) throw DomainError("kosov_forcing: r outside (0, R)");
  if (!(t > 0.0 && t <= 0.5 * sol.T)) throw DomainError("kosov_forcing: t outside (0, T/2]");
  const int N = sol.N;
  const double tau = sol.T - t;
  return -kosov_forcing_coeff(N) * std::pow(tau, 0.25 * (N - 2)) * std::pow(r, 1.0 - N) * kosov_G(sol, r, t);
}

inline double ExactSolution::forcing(double s, double t) const {
  if (kind != SolutionKind::kosov_critical) return 0.0;
  return kosov_forcing(*this, s, t);
}

inline double eval(const ExactSolution& sol, std::span<const double> x, double t) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return sol.u(std::sqrt(s), t);
}

inline std::vector<double> grad_um(const ExactSolution& sol, std::span<const double> x, double t) {
  double s = 0.0;
  for (double v : x) s += v * v;
  s = std::sqrt(s);
  const double d = sol.dum_ds(s, t);
  std::vector<double> g(x.begin(), x.end());
  for (double& v : g) v *= d / s;
  return g;
}

namespace detail {
// Five-point first and second derivatives.
inline double d1(const std::function<double(double)>& f, double x, double h) {
  return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h);
}
inline double d2(const std::function<double(double)>& f, double x, double h) {
  return (-f(x - 2 * h) + 16 * f(x - h) - 30 * f(x) + 16 * f(x + h) - f(x + 2 * h)) / (12 * h * h);
}
}  // namespace detail

// dt u - c Lap u^m - div F by five-point stencils in (s, t).
inline double residual(const ExactSolution& sol, std::span<const double> x, double t, double h) {
  double s = 0.0;
  for (double v : x) s += v * v;
  s = std::sqrt(s);
  if (!(s - 2 * h > 0.0)) throw DomainError("residual: stencil reaches the singularity");
  if (!(s + 2 * h < sol.outer_radius())) throw DomainError("residual: stencil leaves the ball");
  if (!(t - 2 * h > sol.t_lo() && t + 2 * h < std::min(sol.t_hi(), sol.T)))
    throw DomainError("residual: stencil leaves the time interval");
  const int N = sol.N;
  std::function<double(double)> ut = [&](double tt) { return sol.u(s, tt); };
  std::function<double(double)> w = [&](double ss) { return sol.um(ss, t); };
  const double lap = detail::d2(w, s, h) + (N - 1) / s * detail::d1(w, s, h);
  double div = 0.0;
  if (sol.kind == SolutionKind::kosov_critical) {
    std::function<double(double)> flux = [&](double ss) { return std::pow(ss, N - 1) * sol.forcing(ss, t); };
    div = detail::d1(flux, s, h) / std::pow(s, N - 1);
  }
  return detail::d1(ut, t, h) - sol.diffusion() * lap - div;
}

inline Field to_field(const ExactSolution& sol, std::vector<double> center = {}) {
  Field f;
  f.N = sol.N;
  f.k = 1;
  f.m = sol.m;
  f.center = center.empty() ? std::vector<double>(sol.N, 0.0) : std::move(center);
  f.singular_at_center = true;
  f.decreasing_in_s = true;
  f.time_monotone = -1;
  f.s_max = sol.outer_radius();
  f.t_min = sol.t_lo();
  f.t_max = sol.t_hi();
  f.label = to_string(sol.kind);
  f.profile = [sol](double s, double t) {
    const double u = sol.u(s, t);
    const double d = sol.dum_ds(s, t);
    const double F = sol.kind == SolutionKind::kosov_critical ? sol.forcing(s, t) : 0.0;
    return radial_value(std::span<const double>(&u, 1), std::span<const double>(&d, 1), sol.m, F);
  };
  return f;
}

// Two separable profiles with extinction times T1, T2 stacked as a 2-vector.
inline Field diagonal_pair(int N, double m, double T1, double T2, std::vector<double> center = {}) {
  const auto a = ExactSolution::separable(N, m, T1);
  const auto b = ExactSolution::separable(N, m, T2);
  Field f;
  f.N = N;
  f.k = 2;
  f.m = m;
  f.center = center.empty() ? std::vector<double>(N, 0.0) : std::move(center);
  f.singular_at_center = true;
  f.decreasing_in_s = true;
  f.time_monotone = -1;
  f.label = "diagonal-pair";
  f.profile = [a, b, m](double s, double t) {
    const std::array<double, 2> u{a.u(s, t), b.u(s, t)};
    const double n = std::hypot(u[0], u[1]);
    std::array<double, 2> dum{0.0, 0.0};
    if (n > 0.0) {
      // [u]^m = n^{m-1} u with u = (a, b) both of the form c_i(t) s^{-gamma}.
      const double gamma = 2.0 / (1.0 - m);
      const double dn = -gamma * n / s;
      for (int i = 0; i < 2; ++i) {
        const double du = -gamma * u[i] / s;
        dum[i] = (m - 1.0) * std::pow(n, m - 2.0) * dn * u[i] + std::pow(n, m - 1.0) * du;
      }
    }
    return radial_value(u, dum, m);
  };
  return f;
}

// u^m = 1 + A exp(-s/w) around `center`: a gradient spike of height A/w.
inline Field exponential_spike(int N, double m, double A, double w, std::vector<double> center) {
  Field f;
  f.N = N;
  f.k = 1;
  f.m = m;
  f.center = std::move(center);
  f.time_independent = true;
  f.decreasing_in_s = true;
  f.label = "exponential-spike";
  f.profile = [m, A, w](double s, double) {
    const double um = 1.0 + A * std::exp(-s / w);
    const double u = std::pow(um, 1.0 / m);
    const double d = -A / w * std::exp(-s / w);
    return radial_value(std::span<const double>(&u, 1), std::span<const double>(&d, 1), m);
  };
  return f;
}

// u = c0 + c1 exp(-|x - center|^2 / w^2), time independent.
inline Field gaussian_bump(int N, double m, double c0, double c1, double w, std::vector<double> center) {
  Field f;
  f.N = N;
  f.k = 1;
  f.m = m;
  f.center = std::move(center);
  f.time_independent = true;
  f.decreasing_in_s = c1 >= 0.0;
  f.label = "gaussian-bump";
  f.profile = [m, c0, c1, w](double s, double) {
    const double e = std::exp(-s * s / (w * w));
    const double u = c0 + c1 * e;
    const double du = -2.0 * s / (w * w) * c1 * e;
    const double d = m * std::pow(u, m - 1.0) * du;
    return radial_value(std::span<const double>(&u, 1), std::span<const double>(&d, 1), m);
  };
  return f;
}

// u = x_1 (not radial).
inline Field linear_field(int N, double m) {
  Field f;
  f.N = N;
  f.k = 1;
  f.m = m;
  f.radial = false;
  f.center.assign(N, 0.0);
  f.time_independent = true;
  f.label = "linear-x1";
  f.point = [m](std::span<const double> x, double) {
    Value v;
    v.u[0] = x[0];
    v.grad = x[0] == 0.0 ? (m == 1.0 ? 1.0 : 0.0) : m * std::pow(std::abs(x[0]), m - 1.0);
    v.grad_abs = v.grad;
    return v;
  };
  return f;
}

// u = t g(|x - center|) with g(s) = 1 + s^2; used with m = 1.
inline Field time_linear_field(int N, std::vector<double> center = {}) {
  Field f;
  f.N = N;
  f.k = 1;
  f.m = 1.0;
  f.center = center.empty() ? std::vector<double>(N, 0.0) : std::move(center);
  f.label = "time-linear";
  f.profile = [](double s, double t) {
    const double u = t * (1.0 + s * s);
    const double d = t * 2.0 * s;
    return radial_value(std::span<const double>(&u, 1), std::span<const double>(&d, 1), 1.0);
  };
  return f;
}

}  // namespace fdl
