#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fdl/exponents.hpp"
#include "fdl/geometry.hpp"
#include "fdl/parallel.hpp"
#include "fdl/report.hpp"

namespace fdl {

// The defining bisection found no admissible theta below the cap.
struct OverflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kThetaCap = 1e12;

namespace detail {
inline Integral require_finite(const Integral& I, const char* what) {
  if (I.divergent || !std::isfinite(I.value)) throw DivergenceError(std::string(what) + ": integral diverges");
  return I;
}

inline double abs_pow(const Value& v, double r) { return std::pow(v.norm(), r); }
}  // namespace detail

// (1/|Q_rho|) * integral of |u|^r / rho^{r/m} over Q_rho^{(theta)}(x, t).
inline double intrinsic_content(const Field& f, const std::vector<double>& x, double t, double rho, double theta,
                                const Params& P, const QuadratureSpec& q) {
  const auto c = Cylinder::intrinsic(x, t, rho, theta, P.m);
  const auto I = detail::require_finite(
      cylinder_integral(f, c, [&](const Value& v, double) { return detail::abs_pow(v, P.r); }, q), "intrinsic content");
  return I.value / c.with_theta(1.0).volume() / std::pow(rho, P.r / P.m);
}

// Mean of |u|^r / rho^{r/m} over Q_rho^{(theta)}.
inline double intrinsic_mean(const Field& f, const std::vector<double>& x, double t, double rho, double theta,
                             const Params& P, const QuadratureSpec& q) {
  const auto c = Cylinder::intrinsic(x, t, rho, theta, P.m);
  const auto I = detail::require_finite(
      cylinder_mean(f, c, [&](const Value& v, double) { return detail::abs_pow(v, P.r); }, q), "intrinsic mean");
  return I.value / std::pow(rho, P.r / P.m);
}

// Smallest theta >= lambda_o whose content does not exceed theta^{m lambda_r/(1+m)}.
inline double theta_tilde(const Field& f, const std::vector<double>& x, double t, double rho, double lambda_o,
                          const Params& P, const QuadratureSpec& q) {
  require_positive_lambda(P, "theta_tilde");
  if (!(lambda_o >= 1.0)) throw DomainError("theta_tilde: lambda_o must be >= 1");
  const double e = P.m * lambda_r(P) / (1.0 + P.m);
  auto holds = [&](double th) { return intrinsic_content(f, x, t, rho, th, P, q) <= std::pow(th, e); };
  if (holds(lambda_o)) return lambda_o;
  double lo = lambda_o, hi = 2.0 * lambda_o;
  while (!holds(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > kThetaCap) throw OverflowError("theta_tilde: no admissible theta below 1e12");
  }
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (holds(mid) ? hi : lo) = mid;
  }
  return hi;
}

// Geometric grid from rho_min to R, per_decade points per decade, last point exactly R.
inline std::vector<double> radius_grid(double R, double rho_min, int per_decade = 64) {
  if (!(R > rho_min && rho_min > 0.0)) throw DomainError("radius_grid: need 0 < rho_min < R");
  if (per_decade < 1) throw DomainError("radius_grid: per_decade must be positive");
  const int n = std::max(1, int(std::ceil(per_decade * std::log10(R / rho_min) - 1e-9)));
  std::vector<double> g(n + 1);
  for (int i = 0; i <= n; ++i) g[i] = rho_min * std::pow(R / rho_min, double(i) / n);
  g.front() = rho_min;
  g.back() = R;
  return g;
}

struct Verdict2 {
  std::string name;
  bool pass = true;
  double worst = 0.0;  // largest lhs/rhs observed
};

struct ThetaSystem {
  std::vector<double> x;
  double t = 0.0;
  double R = 1.0;
  double lambda_o = 1.0;
  Params P;
  std::string field_label;
  std::vector<double> radii;
  std::vector<double> theta_tilde;
  std::vector<double> theta;
  std::vector<Verdict2> verdicts;

  bool passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict2& v) { return v.pass; });
  }
  const Verdict2& verdict(const std::string& name) const {
    for (const auto& v : verdicts)
      if (v.name == name) return v;
    throw DomainError("no verdict named '" + name + "'");
  }
  // Log-linear interpolation of theta between grid radii.
  double theta_at(double s) const {
    if (s < radii.front() * (1.0 - 1e-12) || s > radii.back() * (1.0 + 1e-12))
      throw DomainError("theta_at: radius outside the grid");
    s = std::clamp(s, radii.front(), radii.back());
    const auto it = std::lower_bound(radii.begin(), radii.end(), s);
    const std::size_t j = std::size_t(it - radii.begin());
    if (j == 0) return theta.front();
    if (radii[j] == s) return theta[j];
    const double w = std::log(s / radii[j - 1]) / std::log(radii[j] / radii[j - 1]);
    return std::exp((1.0 - w) * std::log(theta[j - 1]) + w * std::log(theta[j]));
  }
};

struct ThetaOptions {
  int jobs = 1;
  double sub_intrinsic_slack = 1e-6;
};

// Sub-intrinsic inequality at every grid pair rho_i <= s_j and the growth bounds.
inline void validate_theta_system(const Field& f, ThetaSystem& S, const QuadratureSpec& q, const ThetaOptions& opt) {
  const std::size_t M = S.radii.size();
  const Params& P = S.P;
  const double E = theta_growth_exponent(P);
  const double sub_e = 2.0 * P.r * P.m / (1.0 + P.m);
  S.verdicts.clear();

  Verdict2 floor{"theta-floor"}, mono{"monotone"}, sub{"sub-intrinsic"}, bt{"bound-theta"}, btR{"bound-theta-R"},
      bt2{"bound-theta-2"};
  for (std::size_t i = 0; i < M; ++i) {
    floor.worst = std::max(floor.worst, S.lambda_o / S.theta[i]);
    if (S.theta[i] < S.lambda_o) floor.pass = false;
    if (i + 1 < M && S.theta[i] < S.theta[i + 1]) mono.pass = false;
  }

  std::vector<double> worst(M, 0.0);
  parallel_for(M, opt.jobs, [&](std::size_t i) {
    double w = 0.0;
    for (std::size_t j = i; j < M; ++j) {
      const double lhs = intrinsic_mean(f, S.x, S.t, S.radii[j], S.theta[i], P, q);
      w = std::max(w, lhs / std::pow(S.theta[i], sub_e));
    }
    worst[i] = w;
  });
  for (double w : worst) sub.worst = std::max(sub.worst, w);
  sub.pass = sub.worst <= 1.0 + opt.sub_intrinsic_slack;

  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = i; j < M; ++j) {
      const double rhs = std::pow(S.radii[j] / S.radii[i], E) * S.theta[j];
      bt.worst = std::max(bt.worst, S.theta[i] / rhs);
    }
  bt.pass = bt.worst <= 1.0 + 1e-12;

  btR.worst = S.theta_tilde.back() / (std::pow(4.0, E) * S.lambda_o);
  btR.pass = btR.worst <= 1.0 + 1e-12;

  for (std::size_t i = 0; i < M; ++i)
    bt2.worst = std::max(bt2.worst, S.theta[i] / (std::pow(4.0 * S.R / S.radii[i], E) * S.lambda_o));
  bt2.pass = bt2.worst <= 1.0 + 1e-12;

  S.verdicts = {floor, mono, sub, bt, btR, bt2};
}

// theta-tilde on the grid, then running maxima from R downward.
inline ThetaSystem build_theta_system(const Field& f, const std::vector<double>& x, double t, double R,
                                      double lambda_o, const Params& P, const std::vector<double>& grid,
                                      const QuadratureSpec& q, const ThetaOptions& opt = {}) {
  if (grid.empty() || !std::is_sorted(grid.begin(), grid.end()) || grid.front() <= 0.0 ||
      std::abs(grid.back() - R) > 1e-12 * R)
    throw DomainError("build_theta_system: grid must be increasing in (0, R] and end at R");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw DomainError("build_theta_system: grid must be strictly increasing");
  ThetaSystem S;
  S.x = x;
  S.t = t;
  S.R = R;
  S.lambda_o = lambda_o;
  S.P = P;
  S.field_label = f.label;
  S.radii = grid;
  S.theta_tilde.assign(grid.size(), 0.0);
  parallel_for(grid.size(), opt.jobs,
               [&](std::size_t i) { S.theta_tilde[i] = theta_tilde(f, x, t, grid[i], lambda_o, P, q); });
  S.theta = S.theta_tilde;
  for (std::size_t i = grid.size() - 1; i-- > 0;) S.theta[i] = std::max(S.theta[i], S.theta[i + 1]);
  validate_theta_system(f, S, q, opt);
  return S;
}

// R when theta equals lambda_o at rho, else the smallest grid radius s >= rho with theta_s = theta-tilde_s.
inline double rho_tilde(const ThetaSystem& S, std::size_t i) {
  if (i >= S.radii.size()) throw DomainError("rho_tilde: index outside the grid");
  if (S.theta[i] == S.lambda_o) return S.R;
  for (std::size_t j = i; j < S.radii.size(); ++j)
    if (S.theta[j] == S.theta_tilde[j]) return S.radii[j];
  return S.R;
}

inline std::string to_csv(const ThetaSystem& S) {
  std::ostringstream os;
  os << "rho,theta_tilde,theta,rho_tilde\n";
  for (std::size_t i = 0; i < S.radii.size(); ++i)
    os << format_double(S.radii[i]) << ',' << format_double(S.theta_tilde[i]) << ',' << format_double(S.theta[i])
       << ',' << format_double(rho_tilde(S, i)) << '\n';
  return os.str();
}

inline Json verdicts_json(const std::vector<Verdict2>& vs) {
  Json j = Json::array();
  for (const auto& v : vs) j.push_back({{"name", v.name}, {"pass", v.pass}, {"worst", detail::number_or_null(v.worst)}});
  return j;
}

// Enlargement constant of the covering lemma.
inline double c_hat_exponent(const Params& P) {
  require_positive_lambda(P, "c_hat");
  return (1.0 - P.m) / lambda_r(P) * (P.N + 1.0 + (P.r + 1.0) / P.m);
}

inline double c_hat(const Params& P) {
  return std::max(20.0, 4.0 * (4.0 * std::pow(52.0, c_hat_exponent(P)) + 1.0));
}

// Enlargements beyond this make every nontrivial covering test degenerate.
inline bool c_hat_impractical(const Params& P) { return c_hat(P) > 1e3; }

struct CoverCandidate {
  std::vector<double> x;
  double t = 0.0;
  double r = 0.0;
  double theta = 1.0;
};

struct CoverFamily {
  std::vector<CoverCandidate> candidates;
  double c_hat = 20.0;
  double R = 1.0;
  double m = 1.0;
  std::vector<int> radius_class;
  std::vector<std::size_t> selected;
  std::vector<long> witness;  // selected candidate whose enlargement contains each candidate, or -1
  bool disjoint = true;
  bool contained = true;

  Cylinder cylinder(std::size_t i) const {
    const auto& c = candidates[i];
    return Cylinder::intrinsic(c.x, c.t, 4.0 * c.r, c.theta, m);
  }
  Cylinder enlargement(std::size_t i) const {
    const auto& c = candidates[i];
    return Cylinder::intrinsic(c.x, c.t, c_hat * c.r, c.theta, m);
  }
};

// Class j holds radii in (R/(2^j c), R/(2^{j-1} c)].
inline int radius_class(double r, double R, double chat) {
  if (!(r > 0.0 && r < R / chat)) throw DomainError("vitali_cover: candidate radius must lie in (0, R/c_hat)");
  int j = 1;
  double hi = R / chat;
  while (!(r > 0.5 * hi)) {
    hi *= 0.5;
    ++j;
  }
  return j;
}

// Greedy maximal disjoint subfamily by radius class, then brute-force verification.
inline CoverFamily vitali_cover(std::vector<CoverCandidate> candidates, double R, double chat, double m) {
  if (!(chat >= 4.0)) throw DomainError("vitali_cover: enlargement constant must be at least 4");
  CoverFamily F;
  F.candidates = std::move(candidates);
  F.c_hat = chat;
  F.R = R;
  F.m = m;
  const std::size_t n = F.candidates.size();
  F.radius_class.resize(n);
  for (std::size_t i = 0; i < n; ++i) F.radius_class[i] = radius_class(F.candidates[i].r, R, chat);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return F.radius_class[a] < F.radius_class[b]; });
  std::vector<Cylinder> cyl(n);
  for (std::size_t i = 0; i < n; ++i) cyl[i] = F.cylinder(i);
  for (std::size_t i : order) {
    bool free = true;
    for (std::size_t g : F.selected)
      if (intersects(cyl[i], cyl[g])) {
        free = false;
        break;
      }
    if (free) F.selected.push_back(i);
  }
  for (std::size_t a = 0; a < F.selected.size(); ++a)
    for (std::size_t b = a + 1; b < F.selected.size(); ++b)
      if (intersects(cyl[F.selected[a]], cyl[F.selected[b]])) F.disjoint = false;
  F.witness.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    // Prefer an intersecting member of the same or a coarser class.
    for (int pass = 0; pass < 2 && F.witness[i] < 0; ++pass)
      for (std::size_t g : F.selected) {
        if (pass == 0 && !(F.radius_class[g] <= F.radius_class[i] && intersects(cyl[i], cyl[g]))) continue;
        if (contained_in(cyl[i], F.enlargement(g))) {
          F.witness[i] = long(g);
          break;
        }
      }
    if (F.witness[i] < 0) F.contained = false;
  }
  return F;
}

inline Json to_json(const CoverFamily& F) {
  Json j;
  j["c_hat"] = F.c_hat;
  j["R"] = F.R;
  j["m"] = F.m;
  Json cands = Json::array();
  for (std::size_t i = 0; i < F.candidates.size(); ++i) {
    const auto& c = F.candidates[i];
    cands.push_back({{"x", c.x}, {"t", c.t}, {"r", c.r}, {"theta", c.theta}, {"class", F.radius_class[i]}});
  }
  j["candidates"] = cands;
  j["selected"] = F.selected;
  j["witness"] = F.witness;
  j["disjoint"] = F.disjoint;
  j["contained"] = F.contained;
  return j;
}

// Random candidates centered in [-2 top, 2 top]^N with times in the matching
// intrinsic box and radii in five dyadic bands below `top`. theta comes from a
// system whose theta depends only on the radius (a constant field).
inline std::vector<CoverCandidate> random_cover_family(const ThetaSystem& S, double top, int count,
                                                       const CounterRng& rng, std::uint64_t family) {
  const int N = int(S.x.size());
  const double m = S.P.m;
  const double box = 2.0 * top, tbox = std::pow(2.0 * top, (1.0 + m) / m);
  const std::uint64_t per = std::uint64_t(N + 3);
  std::vector<CoverCandidate> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t k = (family * 4096 + std::uint64_t(i)) * per;
    const int band = std::min(4, int(5.0 * rng.uniform(k)));
    const double r = top * std::pow(2.0, -band) * (0.5 + 0.5 * rng.uniform(k + 1)) * (1.0 - 1e-9);
    CoverCandidate c;
    c.x.resize(N);
    for (int d = 0; d < N; ++d) c.x[d] = box * (2.0 * rng.uniform(k + 3 + d) - 1.0);
    c.t = tbox * (2.0 * rng.uniform(k + 2) - 1.0);
    c.r = r;
    c.theta = S.theta_at(r);
    out.push_back(std::move(c));
  }
  return out;
}

struct LevelTerms {
  double value = 1.0;
  double u_term = 0.0;
  double grad_term = 0.0;
  double force_term = 0.0;
};

// Mean of |F|^{2p} to the power 1/p.
inline double forcing_term(const Field& f, const Cylinder& c, double p, const QuadratureSpec& q) {
  const auto I = detail::require_finite(
      cylinder_mean(f, c, [&](const Value& v, double) { return std::pow(v.force, 2.0 * p); }, q), "forcing mean");
  return I.value > 0.0 ? std::pow(I.value, 1.0 / p) : 0.0;
}

inline double gradient_mean(const Field& f, const Cylinder& c, double power, const QuadratureSpec& q) {
  return detail::require_finite(
             cylinder_mean(f, c, [&](const Value& v, double) { return std::pow(v.grad, power); }, q), "gradient mean")
      .value;
}

// Base level lambda_o from the averages over the outer cylinder Q_{4R}.
inline LevelTerms lambda_o_of(const Field& f, const Cylinder& Q4R, const Params& P, const QuadratureSpec& q) {
  require_positive_lambda(P, "lambda_o");
  LevelTerms L;
  const double mu = detail::require_finite(
                        cylinder_mean(f, Q4R, [&](const Value& v, double) { return detail::abs_pow(v, P.r); }, q),
                        "u mean")
                        .value /
                    std::pow(Q4R.rho, P.r / P.m);
  L.u_term = mu > 0.0 ? std::pow(mu, (1.0 + P.m) / P.r) : 0.0;
  L.grad_term = gradient_mean(f, Q4R, 2.0, q);
  L.force_term = forcing_term(f, Q4R, P.p, q);
  const double s = L.u_term + L.grad_term + L.force_term;
  L.value = 1.0 + (s > 0.0 ? std::pow(s, P.r / (P.m * lambda_r(P))) : 0.0);
  return L;
}

// Lowest admissible level B * lambda_o.
inline double level_floor(double R1, double R2, double R, double chat, const Params& P, double lambda_o) {
  if (!(R2 > R1)) throw DomainError("level_floor: need R2 > R1");
  const double B = std::pow(4.0 * chat * R / (R2 - R1), P.r * (P.N + 2.0) * (1.0 + P.m) / (2.0 * P.m * P.m * lambda_r(P)));
  return B * lambda_o;
}

struct StoppingResult {
  double radius = 0.0;
  double value = 0.0;   // G at the returned radius
  double target = 0.0;  // lambda^{2m}
  bool verified = true;
  std::vector<std::pair<double, double>> samples;  // (s, G(s)) above the radius
};

// G(s): gradient energy plus forcing on Q_s^{(theta(s))}.
inline double stopping_functional(const Field& f, const std::vector<double>& x, double t, double s,
                                  const ThetaSystem& S, const QuadratureSpec& q) {
  const auto c = Cylinder::intrinsic(x, t, s, S.theta_at(s), S.P.m);
  return gradient_mean(f, c, 2.0, q) + forcing_term(f, c, S.P.p, q);
}

struct StoppingOptions {
  int scan = 256;
  bool enforce_floor = false;
  double floor = 0.0;
};

// Maximal s below s_max = (R2 - R1)/c_hat with G(s) = lambda^{2m}.
inline StoppingResult stopping_radius(const Field& f, const std::vector<double>& x, double t, double lam,
                                      const ThetaSystem& S, double s_max, const QuadratureSpec& q,
                                      const StoppingOptions& opt = {}) {
  if (opt.enforce_floor && !(lam > opt.floor)) throw PreconditionUnmet("stopping_radius: level below the floor");
  const double s_min = S.radii.front();
  s_max = std::min(s_max, S.radii.back());
  if (!(s_max > s_min)) throw DomainError("stopping_radius: empty radius range");
  StoppingResult out;
  out.target = std::pow(lam, 2.0 * S.P.m);
  auto G = [&](double s) { return stopping_functional(f, x, t, s, S, q); };
  std::vector<double> s(opt.scan), g(opt.scan);
  for (int i = 0; i < opt.scan; ++i) s[i] = s_min * std::pow(s_max / s_min, double(i) / (opt.scan - 1));
  s.back() = s_max;
  for (int i = opt.scan - 1; i >= 0; --i) g[i] = G(s[i]);
  if (g.back() >= out.target) throw NotApplicable("stopping_radius: level already reached at the largest radius");
  int hit = -1;
  for (int i = opt.scan - 2; i >= 0; --i)
    if (g[i] >= out.target) {
      hit = i;
      break;
    }
  if (hit < 0) throw NotApplicable("stopping_radius: level never reached on the radius range");
  double lo = s[hit], hi = s[hit + 1];
  for (int k = 0; k < 100; ++k) {
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) break;
    (G(mid) >= out.target ? lo : hi) = mid;
  }
  out.radius = lo;
  out.value = G(lo);
  for (int j = 1; j <= 8; ++j) {
    const double sj = hi * std::pow(s_max / hi, double(j) / 8.0);
    const double gj = G(sj);
    out.samples.emplace_back(sj, gj);
    if (!(gj < out.target)) out.verified = false;
  }
  return out;
}

// Both sides of the layer-cake identity for the truncated gradient g_k = min(g, k^m):
// int_{l1}^{k} l^{2m eps - 1} [int_{g_k > l^m} g_k^{2-2q} g^{2q}] dl
//   = (1/(2 m eps)) int_{g_k > l1^m} g_k^{2-2q} g^{2q} (g_k^{2 eps} - l1^{2m eps}).
inline Report fubini_identity_check(const Field& f, const Cylinder& c, double k, double lam1, double eps,
                                    double qexp, const QuadratureSpec& qs, int panels = 32) {
  if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("fubini: eps must lie in (0, 1]");
  if (!(k > lam1 && lam1 > 0.0)) throw DomainError("fubini: need k > lambda_1 > 0");
  const double m = f.m;
  const double km = std::pow(k, m);
  auto gk = [km](const Value& v, double) { return std::min(v.grad, km); };
  auto w = [&](const Value& v, double) {
    const double a = std::min(v.grad, km);
    return std::pow(a, 2.0 - 2.0 * qexp) * std::pow(v.grad, 2.0 * qexp);
  };
  const double l1m = std::pow(lam1, m);
  const double l1e = std::pow(lam1, 2.0 * m * eps);

  const auto direct = superlevel_integral(
      f, c, gk, l1m,
      [&](const Value& v, double t) { return w(v, t) * (std::pow(std::min(v.grad, km), 2.0 * eps) - l1e); }, qs);
  const double rhs = direct.value / (2.0 * m * eps);

  // Outer integral in log(lambda) by composite 16-point Gauss.
  const Rule rule = composite_rule(0.0, std::log(k / lam1), 16, panels);
  std::vector<double> terms(rule.x.size());
  double err = 0.0;
  for (std::size_t i = 0; i < rule.x.size(); ++i) {
    const double lam = lam1 * std::exp(rule.x[i]);
    const auto inner = superlevel_integral(f, c, gk, std::pow(lam, m), w, qs);
    const double jac = std::pow(lam, 2.0 * m * eps);
    terms[i] = rule.w[i] * jac * inner.value;
    err += rule.w[i] * jac * inner.error;
  }
  const double lhs = pairwise_sum(terms);

  Report r;
  r.check = "fubini";
  r.anchor = "fubini-truncation";
  r.params = {{"k", k}, {"lambda_1", lam1}, {"eps", eps}, {"q", qexp}, {"m", m}, {"lambda_points", 16 * panels}};
  r.lhs = lhs;
  r.rhs = rhs;
  r.ratio = (lhs == 0.0 && rhs == 0.0) ? 0.0 : std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs));
  r.branch = "relative-gap";
  r.quadrature_error = err + direct.error / (2.0 * m * eps);
  r.note = "ratio holds the relative gap |lhs - rhs| / max(|lhs|, |rhs|)";
  return r;
}

}  // namespace fdl
