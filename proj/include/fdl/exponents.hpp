#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fdl {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// N(m-1) + 2s: the scaling exponent attached to an L^s quantity.
inline double lambda_of(int N, double m, double s) { return N * (m - 1.0) + 2.0 * s; }

inline double critical_m(int N) {
  if (N < 1) throw DomainError("critical_m: N must be >= 1");
  return std::max(N - 2, 0) / double(N + 2);
}

// Dimension N, diffusion exponent m, integrability r of u, integrability p of F.
// Inadmissible tuples are constructible; callers that need admissibility ask.
struct Params {
  int N = 3;
  double m = 0.2;
  double r = 2.0;
  double p = 3.0;

  bool subcritical() const { return N >= 3 && m > 0.0 && m <= critical_m(N); }
  bool positive_lambda() const { return lambda_of(N, m, r) > 0.0; }
  bool forcing_ok() const { return p > 0.5 * (N + 2); }
  bool admissible() const { return subcritical() && positive_lambda() && forcing_ok(); }

  std::string tag() const {
    if (admissible()) return "admissible";
    if (!subcritical()) return "not-subcritical";
    if (!positive_lambda()) return "nonpositive-lambda";
    return "forcing-exponent-too-small";
  }
};

inline double lambda_r(const Params& P) { return lambda_of(P.N, P.m, P.r); }

inline void require_positive_lambda(const Params& P, const char* who) {
  if (!(lambda_r(P) > 0.0))
    throw DomainError(std::string(who) + ": N(m-1)+2r must be positive");
}

inline double scaling_deficit(const Params& P) {
  require_positive_lambda(P, "scaling_deficit");
  return 2.0 * P.r / lambda_r(P);
}

inline double q_exponent(const Params& P) {
  require_positive_lambda(P, "q_exponent");
  const double rN = P.r * P.N;
  return rN / (rN + lambda_r(P));
}

inline double eps_o_separable(int N, double m) {
  const double mc = critical_m(N);
  if (!(m > 0.0 && m <= mc))
    throw DomainError("eps_o_separable: m outside (0, m_c]");
  return -(N * (m - 1.0) + 2.0 * (1.0 + m)) / (1.0 + m);
}

inline double kappa(int N) { return 1.0 + 2.0 / N; }

struct MoserTerm {
  double alpha;
  double p;
};

inline MoserTerm moser_sequence(const Params& P, int i) {
  require_positive_lambda(P, "moser_sequence");
  if (i < 0) throw DomainError("moser_sequence: negative index");
  const double m = P.m;
  const double k = std::pow(kappa(P.N), i);
  const double shift = P.N * (m - 1.0) + 2.0 * (m + 1.0);
  const double alpha = lambda_r(P) / (4.0 * m) * k - shift / (4.0 * m);
  return {alpha, 2.0 * alpha + (m + 1.0) / m};
}

// Additive constant of the step 2 alpha_{i+1} = 2 alpha_i kappa + c.
inline double moser_step_constant(const Params& P) {
  return (P.N * (P.m - 1.0) + 2.0 * (P.m + 1.0)) / (P.N * P.m);
}

struct GeometricSums {
  double s1;
  double s2;
};

// Limits of sum_{j>=1} kappa^{1-j} and sum_{j>=1} j kappa^{1-j}.
inline GeometricSums geometric_sums(int N) {
  if (N < 1) throw DomainError("geometric_sums: N must be >= 1");
  const double h = 0.5 * (N + 2);
  return {h, h * h};
}

inline GeometricSums geometric_partial_sums(int N, int terms) {
  const double inv = 1.0 / kappa(N);
  double s1 = 0.0, s2 = 0.0, w = 1.0;
  for (int j = 1; j <= terms; ++j) {
    s1 += w;
    s2 += j * w;
    w *= inv;
  }
  return {s1, s2};
}

enum class Verdict { converges, diverges, undecided };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::converges: return "converges";
    case Verdict::diverges: return "diverges";
    default: return "undecided";
  }
}

inline double degiorgi_threshold(double C, double b, double alpha) {
  if (!(C > 0.0 && b >= 1.0 && alpha > 0.0)) throw DomainError("degiorgi_threshold: bad arguments");
  return std::pow(C, -1.0 / alpha) * std::pow(b, -1.0 / (alpha * alpha));
}

// Iterates Y_{n+1} = C b^n Y_n^{1+alpha} in log space.
inline Verdict degiorgi_simulate(double Y0, double C, double b, double alpha, int n_max = 200) {
  if (!(C > 0.0 && b >= 1.0 && alpha > 0.0 && Y0 >= 0.0))
    throw DomainError("degiorgi_simulate: bad arguments");
  if (Y0 == 0.0) return Verdict::converges;
  const double lc = std::log(C), lb = std::log(b), l0 = std::log(Y0);
  const double band = std::log(1e6);
  double l = l0;
  int up = 0, down = 0;
  double prev_step = 0.0;
  for (int n = 0; n < n_max; ++n) {
    const double next = lc + n * lb + (1.0 + alpha) * l;
    const double step = next - l;
    up = step > 0.0 ? up + 1 : 0;
    down = (step < 0.0 && (n == 0 || step < prev_step)) ? down + 1 : 0;
    prev_step = step;
    l = next;
    if (up >= 5 && l > l0 + band) return Verdict::diverges;
    if (down >= 5 && l < l0 - band) return Verdict::converges;
  }
  return Verdict::undecided;
}

inline double interpolation_bound(double C, double b, double alpha) {
  if (!(C > 0.0 && b > 1.0 && alpha > 0.0 && alpha <= 1.0))
    throw DomainError("interpolation_bound: bad arguments");
  return std::pow(2.0 * C / std::pow(b, 1.0 - 1.0 / alpha), 1.0 / alpha);
}

// Forward iteration of M_n = C b^n M_{n+1}^{1-alpha}. Sequences growing like
// b^{n/alpha} are tame; any start above the tame one blows up super-exponentially.
inline Verdict interpolation_simulate(double M0, double C, double b, double alpha, int n_max = 200) {
  if (!(C > 0.0 && b > 1.0 && alpha > 0.0 && alpha < 1.0 && M0 > 0.0))
    throw DomainError("interpolation_simulate: bad arguments");
  const double lc = std::log(C), lb = std::log(b);
  const double rate = lb / alpha;
  const double band = std::log(1e6);
  double mu = std::log(M0);
  int up = 0, down = 0;
  double prev = rate;
  for (int n = 0; n < n_max; ++n) {
    const double next = (mu - lc - n * lb) / (1.0 - alpha);
    const double dev = next - mu - rate;
    up = (dev > 0.0 && dev > prev - rate) ? up + 1 : 0;
    down = (dev < 0.0 && dev < prev - rate) ? down + 1 : 0;
    prev = next - mu;
    mu = next;
    if (up >= 5 && dev > band) return Verdict::diverges;
    if (down >= 5 && dev < -band) return Verdict::converges;
  }
  return Verdict::undecided;
}

// Exponent ((1+m)/(m lambda_r)) (N + 1 + (r+1)/m) governing the growth of theta_rho.
inline double theta_growth_exponent(const Params& P) {
  require_positive_lambda(P, "theta_growth_exponent");
  return (1.0 + P.m) / (P.m * lambda_r(P)) * (P.N + 1.0 + (P.r + 1.0) / P.m);
}

}  // namespace fdl
