#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdl/exponents.hpp"
#include "fdl/report.hpp"
#include "fdl/solutions.hpp"

namespace fdl {

// A time step could not be completed; carries the state at failure.
struct StepFailure : std::runtime_error {
  double t = 0.0;
  double dt = 0.0;
  double min_u = 0.0;
  double max_diffusivity = 0.0;
  StepFailure(const std::string& what, double t_, double dt_, double mu, double md)
      : std::runtime_error(what), t(t_), dt(dt_), min_u(mu), max_diffusivity(md) {}
};

enum class BoundaryMode { dirichlet, zero_flux };

// Radial prototype u_t = r^{1-N} d_r(r^{N-1} d_r u^m) + r^{1-N} d_r(r^{N-1} F_r) on [r_in, r_out].
struct RadialProblem {
  int N = 3;
  double m = 1.0;
  double r_in = 0.5;
  double r_out = 2.0;
  int M = 400;  // number of intervals
  double t0 = 0.0;
  double t_end = 0.5;
  std::function<double(double)> initial;
  std::function<double(double)> inner;  // Dirichlet trace at r_in
  std::function<double(double)> outer;  // Dirichlet trace at r_out
  std::function<double(double, double)> forcing;  // F_r(r, t); empty means zero
  BoundaryMode boundary = BoundaryMode::dirichlet;

  void validate() const {
    if (N < 1) throw DomainError("solver: N must be positive");
    if (!(m > 0.0)) throw DomainError("solver: m must be positive");
    if (!(r_in > 0.0 && r_out > r_in)) throw DomainError("solver: need 0 < r_in < r_out");
    if (M < 2) throw DomainError("solver: at least two intervals required");
    if (!(t_end > t0)) throw DomainError("solver: end time must exceed start time");
    if (!initial) throw DomainError("solver: initial profile missing");
    if (boundary == BoundaryMode::dirichlet && !(inner && outer)) throw DomainError("solver: Dirichlet traces missing");
  }
};

struct DtPolicy {
  double dt = 1e-3;       // requested step
  double cfl = 0.0;       // if > 0, cap dt at cfl h^2 / max diffusivity
  double dt_min = 1e-14;  // give up below this
  double residual_tol = 1e-10;
  int snapshots = 100;    // stored time levels besides the initial one
};

inline constexpr double kUFloor = 1e-10;

struct Trajectory {
  int N = 3;
  double m = 1.0;
  double T = std::numeric_limits<double>::quiet_NaN();  // extinction time of the reference, if any
  std::vector<double> r;
  std::vector<double> t;
  std::vector<std::vector<double>> u;  // u[time][node]
  int steps = 0;
  int halvings = 0;
};

namespace detail {

struct Tridiag {
  std::vector<double> a, b, c, d;  // sub, diag, super, rhs
  explicit Tridiag(std::size_t n) : a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0) {}
};

// Thomas elimination; returns the relative residual of the computed solution.
inline double thomas(const Tridiag& T, std::vector<double>& x) {
  const std::size_t n = T.b.size();
  std::vector<double> cp(n), dp(n);
  cp[0] = T.c[0] / T.b[0];
  dp[0] = T.d[0] / T.b[0];
  for (std::size_t i = 1; i < n; ++i) {
    const double den = T.b[i] - T.a[i] * cp[i - 1];
    cp[i] = T.c[i] / den;
    dp[i] = (T.d[i] - T.a[i] * dp[i - 1]) / den;
  }
  x.assign(n, 0.0);
  x[n - 1] = dp[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = dp[i] - cp[i] * x[i + 1];
  double res = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double Ax = T.b[i] * x[i];
    if (i > 0) Ax += T.a[i] * x[i - 1];
    if (i + 1 < n) Ax += T.c[i] * x[i + 1];
    res = std::max(res, std::abs(Ax - T.d[i]));
    scale = std::max(scale, std::abs(T.d[i]));
  }
  return scale > 0.0 ? res / scale : res;
}

// Secant slope of s -> s^m between two states, floored below.
inline double diffusivity(double a, double b, double m) {
  a = std::max(a, kUFloor);
  b = std::max(b, kUFloor);
  if (m == 1.0) return 1.0;
  if (std::abs(b - a) <= 1e-8 * std::max(a, b)) return m * std::pow(0.5 * (a + b), m - 1.0);
  return (std::pow(b, m) - std::pow(a, m)) / (b - a);
}

class Stepper {
 public:
  Stepper(const RadialProblem& P) : P_(P), n_(std::size_t(P.M) + 1), h_((P.r_out - P.r_in) / P.M) {
    r_.resize(n_);
    face_.resize(n_ + 1);
    vol_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) r_[i] = P.r_in + h_ * double(i);
    r_.back() = P.r_out;
    // Faces of the control volume around node i are at i -/+ 1/2, clipped to the interval.
    for (std::size_t i = 0; i <= n_; ++i) {
      const double f = std::clamp(P.r_in + h_ * (double(i) - 0.5), P.r_in, P.r_out);
      face_[i] = f;
    }
    for (std::size_t i = 0; i < n_; ++i)
      vol_[i] = (std::pow(face_[i + 1], P.N) - std::pow(face_[i], P.N)) / P.N;
  }

  const std::vector<double>& r() const { return r_; }
  double h() const { return h_; }
  double mass(const std::vector<double>& u) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s += vol_[i] * u[i];
    return s;
  }
  double max_diffusivity(const std::vector<double>& u) const {
    double d = 0.0;
    for (std::size_t i = 0; i + 1 < n_; ++i) d = std::max(d, diffusivity(u[i], u[i + 1], P_.m));
    return d;
  }

  // Solves (u - u0)/dt = w L(D(state)) u + (1-w) L(D(state)) u0 + div F(t_f).
  double solve(const std::vector<double>& u0, const std::vector<double>& state, double dt, double w, double t_new,
               double t_f, std::vector<double>& out) const {
    const double N1 = P_.N - 1.0;
    std::vector<double> k(n_ - 1);  // face conductance between i and i+1
    for (std::size_t i = 0; i + 1 < n_; ++i)
      k[i] = std::pow(face_[i + 1], N1) * diffusivity(state[i], state[i + 1], P_.m) / h_;
    Tridiag T(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      const double kl = i > 0 ? k[i - 1] : 0.0, kr = i + 1 < n_ ? k[i] : 0.0;
      double explicit_flux = 0.0;
      if (i > 0) explicit_flux += kl * (u0[i - 1] - u0[i]);
      if (i + 1 < n_) explicit_flux += kr * (u0[i + 1] - u0[i]);
      double src = 0.0;
      if (P_.forcing) {
        const double fr = i + 1 < n_ ? std::pow(face_[i + 1], N1) * P_.forcing(face_[i + 1], t_f) : 0.0;
        const double fl = i > 0 ? std::pow(face_[i], N1) * P_.forcing(face_[i], t_f) : 0.0;
        src = fr - fl;
      }
      T.a[i] = -w * kl;
      T.c[i] = -w * kr;
      T.b[i] = vol_[i] / dt + w * (kl + kr);
      T.d[i] = vol_[i] / dt * u0[i] + (1.0 - w) * explicit_flux + src;
    }
    if (P_.boundary == BoundaryMode::dirichlet) {
      for (std::size_t i : {std::size_t(0), n_ - 1}) {
        T.a[i] = T.c[i] = 0.0;
        T.b[i] = 1.0;
        T.d[i] = i == 0 ? P_.inner(t_new) : P_.outer(t_new);
      }
    }
    return thomas(T, out);
  }

 private:
  const RadialProblem& P_;
  std::size_t n_;
  double h_;
  std::vector<double> r_, face_, vol_;
};

}  // namespace detail

// Semi-implicit midpoint scheme: a backward-Euler half step supplies the state
// at which the secant diffusivity is frozen for a Crank-Nicolson full step.
inline Trajectory solve(const RadialProblem& P, const DtPolicy& policy = {}) {
  P.validate();
  if (!(policy.dt > 0.0)) throw DomainError("solver: dt must be positive");
  const detail::Stepper S(P);
  std::vector<double> u(S.r().size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = P.initial(S.r()[i]);
    if (!(u[i] >= 0.0) || !std::isfinite(u[i])) throw DomainError("solver: initial profile must be finite and non-negative");
  }
  Trajectory tr;
  tr.N = P.N;
  tr.m = P.m;
  tr.r = S.r();
  const double span = P.t_end - P.t0;
  const int snaps = std::max(policy.snapshots, 1);
  tr.t.push_back(P.t0);
  tr.u.push_back(u);
  double t = P.t0;
  std::vector<double> half, next;
  for (int s = 1; s <= snaps; ++s) {
    const double target = s == snaps ? P.t_end : P.t0 + span * s / snaps;
    while (t < target) {
      double dt = std::min(policy.dt, target - t);
      if (policy.cfl > 0.0) dt = std::min(dt, policy.cfl * S.h() * S.h() / S.max_diffusivity(u));
      // Land exactly on the snapshot time.
      const double rem = target - t;
      dt = rem / std::ceil(rem / dt * (1.0 - 1e-12));
      for (;;) {
        if (dt < policy.dt_min) {
          const double mu = *std::min_element(u.begin(), u.end());
          throw StepFailure("solver: time step underflow", t, dt, mu, S.max_diffusivity(u));
        }
        const double r1 = S.solve(u, u, 0.5 * dt, 1.0, t + 0.5 * dt, t + 0.5 * dt, half);
        const double r2 = r1 <= policy.residual_tol ? S.solve(u, half, dt, 0.5, t + dt, t + 0.5 * dt, next) : r1;
        const bool finite = std::all_of(next.begin(), next.end(), [](double v) { return std::isfinite(v); });
        if (r1 <= policy.residual_tol && r2 <= policy.residual_tol && finite) break;
        dt *= 0.5;
        ++tr.halvings;
      }
      u.swap(next);
      t = std::abs(target - (t + dt)) <= 1e-12 * std::max(1.0, std::abs(target)) ? target : t + dt;
      ++tr.steps;
    }
    tr.t.push_back(target);
    tr.u.push_back(u);
  }
  return tr;
}

// Discrete mass sum_i |V_i| u_i at a stored time level.
inline double trajectory_mass(const RadialProblem& P, const Trajectory& tr, std::size_t level) {
  return detail::Stepper(P).mass(tr.u.at(level));
}

// Relative L2 error (weight r^{N-1}) at the final time against a reference profile.
inline double l2_relative_error(const Trajectory& tr, const std::function<double(double, double)>& exact) {
  const double t = tr.t.back();
  const auto& u = tr.u.back();
  double num = 0.0, den = 0.0;
  const double h = tr.r[1] - tr.r[0];
  for (std::size_t i = 0; i < tr.r.size(); ++i) {
    const double w = (i == 0 || i + 1 == tr.r.size() ? 0.5 : 1.0) * h * std::pow(tr.r[i], tr.N - 1);
    const double e = exact(tr.r[i], t);
    num += w * (u[i] - e) * (u[i] - e);
    den += w * e * e;
  }
  return std::sqrt(num / den);
}

struct ConvergenceResult {
  std::vector<int> grids;
  std::vector<double> errors;
  std::vector<double> orders;
  double order = std::numeric_limits<double>::quiet_NaN();
  bool exact = false;  // errors at rounding level, order undefined
};

// Errors on `refinements` dyadic refinements (grid and step halved together).
inline ConvergenceResult convergence_order(RadialProblem P, const std::function<double(double, double)>& exact,
                                           DtPolicy policy = {}, int refinements = 3) {
  if (refinements < 2) throw DomainError("convergence: at least two refinements required");
  ConvergenceResult out;
  for (int k = 0; k < refinements; ++k) {
    out.grids.push_back(P.M);
    out.errors.push_back(l2_relative_error(solve(P, policy), exact));
    P.M *= 2;
    policy.dt *= 0.5;
  }
  out.exact = *std::max_element(out.errors.begin(), out.errors.end()) < 1e-12;
  if (!out.exact) {
    for (std::size_t i = 0; i + 1 < out.errors.size(); ++i)
      out.orders.push_back(std::log2(out.errors[i] / out.errors[i + 1]));
    out.order = out.orders.back();
  }
  return out;
}

inline Json to_json(const ConvergenceResult& c) {
  Json o = Json::array();
  for (double v : c.orders) o.push_back(detail::number_or_null(v));
  return {{"grids", c.grids}, {"errors", c.errors}, {"orders", o}, {"order", detail::number_or_null(c.order)},
          {"exact", c.exact}};
}

// ---------------------------------------------------------------------------
// Reference problems.

// Heat kernel centered at the origin, started at time `t_shift` after the delta.
inline RadialProblem heat_problem(int N, double r_in, double r_out, int M, double t_end, double t_shift = 0.25) {
  auto exact = [N, t_shift](double r, double t) {
    const double s = t + t_shift;
    return std::pow(t_shift / s, 0.5 * N) * std::exp(-r * r / (4.0 * s));
  };
  RadialProblem P;
  P.N = N;
  P.m = 1.0;
  P.r_in = r_in;
  P.r_out = r_out;
  P.M = M;
  P.t_end = t_end;
  P.initial = [exact](double r) { return exact(r, 0.0); };
  P.inner = [exact, r_in](double t) { return exact(r_in, t); };
  P.outer = [exact, r_out](double t) { return exact(r_out, t); };
  return P;
}

inline std::function<double(double, double)> heat_exact(int N, double t_shift = 0.25) {
  return [N, t_shift](double r, double t) {
    const double s = t + t_shift;
    return std::pow(t_shift / s, 0.5 * N) * std::exp(-r * r / (4.0 * s));
  };
}

// Exact-solution data on the annulus over [t0, t_end].
inline RadialProblem exact_problem(const ExactSolution& sol, double r_in, double r_out, int M, double t0, double t_end) {
  RadialProblem P;
  P.N = sol.N;
  P.m = sol.m;
  P.r_in = r_in;
  P.r_out = r_out;
  P.M = M;
  P.t0 = t0;
  P.t_end = t_end;
  P.initial = [sol, t0](double r) { return sol.u(r, t0); };
  P.inner = [sol, r_in](double t) { return sol.u(r_in, t); };
  P.outer = [sol, r_out](double t) { return sol.u(r_out, t); };
  if (sol.kind == SolutionKind::kosov_critical) P.forcing = [sol](double r, double t) { return sol.forcing(r, t); };
  return P;
}

inline std::function<double(double, double)> exact_profile(const ExactSolution& sol) {
  return [sol](double r, double t) { return sol.u(r, t); };
}

// ---------------------------------------------------------------------------
// Sampled field from a trajectory.

inline Field to_field(const Trajectory& tr, std::string label = "sampled") {
  if (tr.r.size() < 3 || tr.t.size() < 2) throw DomainError("sampled field: grid too small");
  const double m = tr.m;
  // Nodal derivative of u^m by central differences, one-sided at the ends.
  std::vector<std::vector<double>> g(tr.u.size(), std::vector<double>(tr.r.size()));
  for (std::size_t k = 0; k < tr.u.size(); ++k) {
    std::vector<double> w(tr.r.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::pow(std::max(tr.u[k][i], 0.0), m);
    const std::size_t n = w.size();
    for (std::size_t i = 1; i + 1 < n; ++i) g[k][i] = (w[i + 1] - w[i - 1]) / (tr.r[i + 1] - tr.r[i - 1]);
    g[k][0] = (-3 * w[0] + 4 * w[1] - w[2]) / (tr.r[2] - tr.r[0]);
    g[k][n - 1] = (3 * w[n - 1] - 4 * w[n - 2] + w[n - 3]) / (tr.r[n - 1] - tr.r[n - 3]);
  }
  Field f;
  f.N = tr.N;
  f.k = 1;
  f.m = m;
  f.provenance = Provenance::sampled;
  f.center.assign(tr.N, 0.0);
  f.s_max = tr.r.back();
  f.t_min = tr.t.front();
  f.t_max = tr.t.back();
  f.label = std::move(label);
  auto r = tr.r;
  auto t = tr.t;
  auto u = tr.u;
  f.profile = [r, t, u, g, m, name = f.label](double s, double tt) {
    if (s < r.front() || s > r.back() || tt < t.front() || tt > t.back())
      throw DomainError("field '" + name + "': point outside the sampled region");
    auto locate = [](const std::vector<double>& x, double v) {
      std::size_t j = std::size_t(std::upper_bound(x.begin(), x.end(), v) - x.begin());
      j = std::clamp<std::size_t>(j, 1, x.size() - 1) - 1;
      return std::pair{j, (v - x[j]) / (x[j + 1] - x[j])};
    };
    const auto [i, a] = locate(r, s);
    const auto [k, b] = locate(t, tt);
    auto bil = [&](const std::vector<std::vector<double>>& v) {
      return (1 - b) * ((1 - a) * v[k][i] + a * v[k][i + 1]) + b * ((1 - a) * v[k + 1][i] + a * v[k + 1][i + 1]);
    };
    const double uu = bil(u), dd = bil(g);
    return radial_value(std::span<const double>(&uu, 1), std::span<const double>(&dd, 1), m);
  };
  return f;
}

// ---------------------------------------------------------------------------
// CSV exchange: a comment line naming N, m, T, then columns r,t,u.

inline void write_csv(std::ostream& os, const Trajectory& tr) {
  os << "# N=" << tr.N << " m=" << format_double(tr.m) << " T=" << format_double(tr.T) << '\n';
  os << "r,t,u\n";
  for (std::size_t k = 0; k < tr.t.size(); ++k)
    for (std::size_t i = 0; i < tr.r.size(); ++i)
      os << format_double(tr.r[i]) << ',' << format_double(tr.t[k]) << ',' << format_double(tr.u[k][i]) << '\n';
}

inline Trajectory read_csv(std::istream& is) {
  Trajectory tr;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw DomainError("trajectory csv: missing N/m/T header");
  {
    std::istringstream hs(line.substr(2));
    std::string tok;
    bool n = false, m = false;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw DomainError("trajectory csv: bad header token '" + tok + "'");
      const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "N") tr.N = std::stoi(val), n = true;
      else if (key == "m") tr.m = std::strtod(val.c_str(), nullptr), m = true;
      else if (key == "T") tr.T = std::strtod(val.c_str(), nullptr);
      else throw DomainError("trajectory csv: unknown header key '" + key + "'");
    }
    if (!n || !m) throw DomainError("trajectory csv: header must name N and m");
  }
  if (!std::getline(is, line) || line != "r,t,u") throw DomainError("trajectory csv: expected column header r,t,u");
  std::vector<double> rs, ts, us;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    double v[3];
    std::istringstream ls(line);
    std::string cell;
    for (int c = 0; c < 3; ++c) {
      if (!std::getline(ls, cell, ',')) throw DomainError("trajectory csv: short row '" + line + "'");
      char* end = nullptr;
      v[c] = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw DomainError("trajectory csv: bad number '" + cell + "'");
    }
    rs.push_back(v[0]);
    ts.push_back(v[1]);
    us.push_back(v[2]);
  }
  // Rows are time-major with a fixed radial grid.
  std::size_t nr = 0;
  while (nr < ts.size() && ts[nr] == ts[0]) ++nr;
  if (nr == 0 || ts.size() % nr != 0) throw DomainError("trajectory csv: ragged grid");
  tr.r.assign(rs.begin(), rs.begin() + std::ptrdiff_t(nr));
  for (std::size_t k = 0; k < ts.size() / nr; ++k) {
    tr.t.push_back(ts[k * nr]);
    tr.u.emplace_back(us.begin() + std::ptrdiff_t(k * nr), us.begin() + std::ptrdiff_t((k + 1) * nr));
    for (std::size_t i = 0; i < nr; ++i)
      if (rs[k * nr + i] != tr.r[i] || ts[k * nr + i] != tr.t.back()) throw DomainError("trajectory csv: ragged grid");
  }
  return tr;
}

}  // namespace fdl
