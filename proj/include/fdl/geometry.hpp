#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "fdl/quadrature.hpp"
#include "fdl/solutions.hpp"

namespace fdl {

inline double unit_ball_volume(int N) { return std::pow(M_PI, 0.5 * N) / std::tgamma(0.5 * N + 1.0); }

// Surface area of the unit sphere in R^N.
inline double sphere_area(int N) { return N * unit_ball_volume(N); }

enum class CylinderKind { intrinsic, one_sided, parabolic };

inline const char* to_string(CylinderKind k) {
  switch (k) {
    case CylinderKind::intrinsic: return "intrinsic";
    case CylinderKind::one_sided: return "one-sided";
    default: return "parabolic";
  }
}

// Intrinsic: B_{theta^{m(m-1)/(1+m)} rho}(x) x (t - rho^{(1+m)/m}, t + rho^{(1+m)/m}).
// One-sided: B_rho(x) x (t - S, t].  Parabolic: B_rho(x) x (t - rho^2, t + rho^2).
struct Cylinder {
  CylinderKind kind = CylinderKind::intrinsic;
  std::vector<double> x;
  double t = 0.0;
  double rho = 1.0;
  double theta = 1.0;
  double m = 1.0;
  double S = 0.0;

  static Cylinder intrinsic(std::vector<double> x, double t, double rho, double theta, double m) {
    if (!(rho > 0.0)) throw DomainError("cylinder: radius must be positive");
    if (!(theta >= 1.0)) throw DomainError("cylinder: theta must be >= 1");
    return {CylinderKind::intrinsic, std::move(x), t, rho, theta, m, 0.0};
  }
  static Cylinder one_sided(std::vector<double> x, double t, double R, double S) {
    if (!(R > 0.0 && S > 0.0)) throw DomainError("cylinder: R and S must be positive");
    return {CylinderKind::one_sided, std::move(x), t, R, 1.0, 1.0, S};
  }
  static Cylinder parabolic(std::vector<double> x, double t, double R) {
    if (!(R > 0.0)) throw DomainError("cylinder: radius must be positive");
    return {CylinderKind::parabolic, std::move(x), t, R, 1.0, 1.0, 0.0};
  }

  int dim() const { return int(x.size()); }
  double space_factor() const {
    return kind == CylinderKind::intrinsic ? std::pow(theta, m * (m - 1.0) / (1.0 + m)) : 1.0;
  }
  double ball_radius() const { return space_factor() * rho; }
  double half_time() const {
    if (kind == CylinderKind::intrinsic) return std::pow(rho, (1.0 + m) / m);
    if (kind == CylinderKind::parabolic) return rho * rho;
    return S;
  }
  double t_lo() const { return kind == CylinderKind::one_sided ? t - S : t - half_time(); }
  double t_hi() const { return kind == CylinderKind::one_sided ? t : t + half_time(); }
  double duration() const { return t_hi() - t_lo(); }
  double volume() const { return unit_ball_volume(dim()) * std::pow(ball_radius(), dim()) * duration(); }

  bool contains(std::span<const double> y, double s) const {
    double d2 = 0.0;
    for (int i = 0; i < dim(); ++i) d2 += (y[i] - x[i]) * (y[i] - x[i]);
    const double b = ball_radius();
    if (!(d2 < b * b)) return false;
    if (kind == CylinderKind::one_sided) return s > t_lo() && s <= t_hi();
    return s > t_lo() && s < t_hi();
  }

  Cylinder with_radius(double r) const {
    Cylinder c = *this;
    c.rho = r;
    if (kind == CylinderKind::one_sided) c.S = S * std::pow(r / rho, 2.0);
    return c;
  }
  Cylinder with_theta(double th) const {
    Cylinder c = *this;
    c.theta = th;
    return c;
  }
};

inline double center_distance(const Cylinder& a, const Cylinder& b) {
  double d2 = 0.0;
  for (int i = 0; i < a.dim(); ++i) d2 += (a.x[i] - b.x[i]) * (a.x[i] - b.x[i]);
  return std::sqrt(d2);
}

// Open cylinders: touching boundaries do not intersect.
inline bool intersects(const Cylinder& a, const Cylinder& b) {
  if (!(center_distance(a, b) < a.ball_radius() + b.ball_radius())) return false;
  return a.t_lo() < b.t_hi() && b.t_lo() < a.t_hi();
}

inline bool contained_in(const Cylinder& inner, const Cylinder& outer) {
  if (!(center_distance(inner, outer) + inner.ball_radius() <= outer.ball_radius())) return false;
  return inner.t_lo() >= outer.t_lo() && inner.t_hi() <= outer.t_hi();
}

// Fraction of the sphere {|y - c| = s} lying in the ball B_b(x), |x - c| = d.
inline double cap_fraction(int N, double s, double d, double b) {
  if (d == 0.0) return s < b ? 1.0 : 0.0;
  if (s <= b - d) return 1.0;
  if (s >= d + b || s <= d - b) return 0.0;
  // 1 - c and 1 + c in factored form; the direct difference cancels when b << d.
  const double one_minus = std::max((b - (s - d)) * (b + (s - d)), 0.0) / (2.0 * s * d);
  const double one_plus = std::max((s + d - b) * (s + d + b), 0.0) / (2.0 * s * d);
  if (N == 3) return std::clamp(0.5 * one_minus, 0.0, 1.0);
  const double x = std::clamp(one_minus * one_plus, 0.0, 1.0);
  const double half = 0.5 * boost::math::ibeta(0.5 * (N - 1), 0.5, x);
  return one_minus <= 1.0 ? half : 1.0 - half;
}

using ValueFn = std::function<double(const Value&, double)>;
using PointFn = std::function<double(const Value&, std::span<const double>, double)>;

namespace detail {

inline void check_time(const Field& f, double t) {
  if (t < f.t_min || t > f.t_max) throw DomainError("field '" + f.label + "': time outside its domain");
}

// int_lo^hi g(s) |S^{N-1}| s^{N-1} cap(s) ds, split where the cap fraction stops being 1.
inline Integral radial_piece(const Field& f, double d, double b, double lo, double hi,
                             const std::function<double(double)>& g, const QuadratureSpec& q) {
  if (!(hi > lo)) return {};
  const int N = f.N;
  const double area = sphere_area(N);
  auto weighted = [&](double s) {
    if (s <= 0.0) return 0.0;
    const double c = cap_fraction(N, s, d, b);
    if (c == 0.0) return 0.0;
    return g(s) * area * std::pow(s, N - 1) * c;
  };
  Integral out;
  const double full = std::max(b - d, 0.0);
  std::vector<double> cuts{lo};
  if (full > lo && full < hi) cuts.push_back(full);
  cuts.push_back(hi);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], c = cuts[i + 1];
    const double plo = std::abs(d - b), phi = d + b;
    if (f.singular_at_center && a <= q.r_min) {
      out += graded_integral(weighted, a, c, q);
    } else if (d > 0.0 && a >= plo && c <= phi) {
      // On the partial-cap range the cap fraction has power-type endpoint
      // behavior; s = mid - half cos(psi) makes the integrand smooth there.
      const double mid = 0.5 * (plo + phi), half = 0.5 * (phi - plo);
      auto angle = [&](double s) { return std::acos(std::clamp((mid - s) / half, -1.0, 1.0)); };
      auto in_psi = [&](double psi) { return weighted(mid - half * std::cos(psi)) * half * std::sin(psi); };
      out += adaptive_integral(in_psi, angle(a), angle(c), q);
    } else {
      out += adaptive_integral(weighted, a, c, q);
    }
  }
  return out;
}

inline double ball_distance(const Field& f, std::span<const double> xo) { return f.distance(xo); }

inline Integral radial_ball(const Field& f, std::span<const double> xo, double b, double t, const ValueFn& h,
                            const QuadratureSpec& q) {
  const double d = ball_distance(f, xo);
  if (d + b > f.s_max) throw DomainError("field '" + f.label + "': ball leaves the spatial domain");
  auto g = [&](double s) { return h(f.profile(s, t), t); };
  const double lo = f.singular_at_center && d - b <= q.r_min ? 0.0 : std::max(d - b, 0.0);
  return radial_piece(f, d, b, lo, d + b, g, q);
}

// Product rule in hyperspherical coordinates centered at xo.
inline Integral cubature_ball(const Field& f, std::span<const double> xo, double b, double t, const PointFn& h,
                              const QuadratureSpec& q) {
  const int N = f.N;
  const int n = q.angular_order;
  const Rule rad = composite_rule(0.0, b, n, 2);
  const Rule& pol = gauss_rule(n);
  const int naz = 2 * n;
  std::vector<int> idx(std::max(N - 2, 0), 0);
  std::vector<double> terms;
  std::vector<double> y(N);
  std::vector<double> dir(N);
  const std::size_t npol = pol.x.size();
  std::size_t combos = 1;
  for (int j = 0; j < N - 2; ++j) combos *= npol;
  for (std::size_t ir = 0; ir < rad.x.size(); ++ir) {
    const double sig = rad.x[ir];
    const double wr = rad.w[ir] * std::pow(sig, N - 1);
    for (std::size_t c = 0; c < combos; ++c) {
      std::size_t rem = c;
      double wang = 1.0;
      double sinprod = 1.0;
      for (int j = 0; j < N - 2; ++j) {
        const std::size_t k = rem % npol;
        rem /= npol;
        const double phi = 0.5 * M_PI * (pol.x[k] + 1.0);
        wang *= 0.5 * M_PI * pol.w[k] * std::pow(std::sin(phi), N - 2 - j);
        dir[j] = sinprod * std::cos(phi);
        sinprod *= std::sin(phi);
      }
      for (int a = 0; a < naz; ++a) {
        const double psi = 2.0 * M_PI * a / naz;
        if (N >= 2) {
          dir[N - 2] = sinprod * std::cos(psi);
          dir[N - 1] = sinprod * std::sin(psi);
        }
        for (int i = 0; i < N; ++i) y[i] = xo[i] + sig * dir[i];
        const double w = wr * wang * (2.0 * M_PI / naz);
        terms.push_back(w * h(f.at(y, t), y, t));
      }
    }
  }
  return {pairwise_sum(terms), 0.0, false};
}

inline std::vector<double> ball_sample(int N, std::span<const double> xo, double b, const CounterRng& rng,
                                       std::uint64_t i) {
  std::vector<double> y(N);
  double n2 = 0.0;
  for (int j = 0; j < N; ++j) {
    y[j] = rng.normal(i * (N + 1) + j);
    n2 += y[j] * y[j];
  }
  const double rad = b * std::pow(rng.uniform(2 * (i * (N + 1) + N) + 1), 1.0 / N) / std::sqrt(n2);
  for (int j = 0; j < N; ++j) y[j] = xo[j] + rad * y[j];
  return y;
}

}  // namespace detail

inline bool use_cubature(const Field& f, const QuadratureSpec& q) { return !q.monte_carlo && f.N <= 4; }

inline void require_seed(const QuadratureSpec& q) {
  if (!q.seed) throw DomainError("Monte Carlo quadrature requires a seed");
}

// Spatial integral over B_b(xo) at time t of a function of the field values.
inline Integral ball_integral(const Field& f, std::span<const double> xo, double b, double t, const ValueFn& h,
                              const QuadratureSpec& q) {
  detail::check_time(f, t);
  if (f.radial && !q.monte_carlo) return detail::radial_ball(f, xo, b, t, h, q);
  PointFn hx = [&](const Value& v, std::span<const double>, double tt) { return h(v, tt); };
  if (use_cubature(f, q)) return detail::cubature_ball(f, xo, b, t, hx, q);
  require_seed(q);
  CounterRng rng{*q.seed, 0x5ba11};
  std::vector<double> vals(q.mc_samples);
  for (std::uint64_t i = 0; i < q.mc_samples; ++i) {
    const auto y = detail::ball_sample(f.N, xo, b, rng, i);
    vals[i] = h(f.at(y, t), t);
  }
  const double vol = unit_ball_volume(f.N) * std::pow(b, f.N);
  const double mean = pairwise_sum(vals) / double(vals.size());
  std::vector<double> sq(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) sq[i] = (vals[i] - mean) * (vals[i] - mean);
  const double sd = std::sqrt(pairwise_sum(sq) / double(vals.size() - 1));
  return {vol * mean, vol * sd / std::sqrt(double(vals.size())), false};
}

// Spatial integral of an integrand that also depends on the point itself.
inline Integral ball_integral_x(const Field& f, std::span<const double> xo, double b, double t, const PointFn& h,
                                const QuadratureSpec& q) {
  detail::check_time(f, t);
  if (f.singular_at_center && f.distance(xo) < b)
    throw DomainError("pointwise integrand over a ball containing the singular point");
  if (use_cubature(f, q)) return detail::cubature_ball(f, xo, b, t, h, q);
  require_seed(q);
  CounterRng rng{*q.seed, 0x5ba12};
  std::vector<double> vals(q.mc_samples);
  for (std::uint64_t i = 0; i < q.mc_samples; ++i) {
    const auto y = detail::ball_sample(f.N, xo, b, rng, i);
    vals[i] = h(f.at(y, t), y, t);
  }
  const double vol = unit_ball_volume(f.N) * std::pow(b, f.N);
  return {vol * pairwise_sum(vals) / double(vals.size()), 0.0, false};
}

namespace detail {
template <class BallFn>
Integral time_integral(const Field& f, const Cylinder& c, const QuadratureSpec& q, BallFn&& ball) {
  if (f.time_independent) return ball(c.t).scaled(c.duration());
  const Rule r = composite_rule(c.t_lo(), c.t_hi(), q.time_order, q.time_panels);
  std::vector<double> vals(r.x.size());
  Integral acc;
  for (std::size_t i = 0; i < r.x.size(); ++i) {
    const Integral b = ball(r.x[i]);
    vals[i] = r.w[i] * b.value;
    acc.error += r.w[i] * b.error;
    acc.divergent = acc.divergent || b.divergent;
  }
  acc.value = pairwise_sum(vals);
  return acc;
}
}  // namespace detail

inline Integral cylinder_integral(const Field& f, const Cylinder& c, const ValueFn& h, const QuadratureSpec& q) {
  if (q.monte_carlo && !f.time_independent) {
    require_seed(q);
    CounterRng rng{*q.seed, 0xc1a55};
    std::vector<double> vals(q.mc_samples), sq(q.mc_samples);
    const double b = c.ball_radius();
    for (std::uint64_t i = 0; i < q.mc_samples; ++i) {
      const auto y = detail::ball_sample(f.N, c.x, b, rng, i);
      const double t = c.t_lo() + c.duration() * rng.uniform(0x7fffffffULL + i);
      vals[i] = h(f.at(y, t), t);
    }
    const double mean = pairwise_sum(vals) / double(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) sq[i] = (vals[i] - mean) * (vals[i] - mean);
    const double sd = std::sqrt(pairwise_sum(sq) / double(vals.size() - 1));
    return {c.volume() * mean, c.volume() * sd / std::sqrt(double(vals.size())), false};
  }
  const double b = c.ball_radius();
  return detail::time_integral(f, c, q, [&](double t) { return ball_integral(f, c.x, b, t, h, q); });
}

inline Integral cylinder_integral_x(const Field& f, const Cylinder& c, const PointFn& h, const QuadratureSpec& q) {
  const double b = c.ball_radius();
  return detail::time_integral(f, c, q, [&](double t) { return ball_integral_x(f, c.x, b, t, h, q); });
}

inline Integral cylinder_mean(const Field& f, const Cylinder& c, const ValueFn& h, const QuadratureSpec& q) {
  return cylinder_integral(f, c, h, q).scaled(1.0 / c.volume());
}

inline Integral slice_mean(const Field& f, std::span<const double> xo, double b, double t, const ValueFn& h,
                           const QuadratureSpec& q) {
  return ball_integral(f, xo, b, t, h, q).scaled(1.0 / (unit_ball_volume(f.N) * std::pow(b, f.N)));
}

// Mean of u over the cylinder (component-wise).
inline std::vector<double> mean(const Field& f, const Cylinder& c, const QuadratureSpec& q) {
  std::vector<double> out(f.k);
  for (int i = 0; i < f.k; ++i)
    out[i] = cylinder_mean(f, c, [i](const Value& v, double) { return v.u[i]; }, q).value;
  return out;
}

// Mean of |expr|^p.
inline Integral lp_mean(const Field& f, const Cylinder& c, const ValueFn& expr, double p, const QuadratureSpec& q) {
  if (!(p > 0.0)) throw DomainError("lp_mean: p must be positive");
  return cylinder_mean(f, c, [&](const Value& v, double t) { return std::pow(std::abs(expr(v, t)), p); }, q);
}

struct SupResult {
  double value = 0.0;
  double uncertainty = 0.0;
  bool unbounded = false;
};

// sup |u| over the cylinder. Radial fields decreasing in s and monotone in t
// are evaluated at the inner radial boundary and the time extremum.
inline SupResult sup_norm(const Field& f, const Cylinder& c) {
  const double b = c.ball_radius();
  if (f.radial) {
    const double d = f.distance(c.x);
    if (f.singular_at_center && d < b) return {std::numeric_limits<double>::infinity(), 0.0, true};
    const double slo = std::max(d - b, 0.0), shi = d + b;
    std::vector<double> ts;
    if (f.time_independent || f.time_monotone != 0) {
      ts.push_back(f.time_independent ? c.t : (f.time_monotone < 0 ? c.t_lo() : c.t_hi()));
    } else {
      for (int i = 0; i <= 64; ++i) ts.push_back(c.t_lo() + c.duration() * i / 64.0);
    }
    if (f.decreasing_in_s) {
      double best = 0.0;
      for (double t : ts) best = std::max(best, f.profile(std::max(slo, 1e-300), t).norm());
      return {best, 0.0, false};
    }
    double best = 0.0, bs = slo, bt = ts.front();
    const int ns = 256;
    for (double t : ts)
      for (int i = 0; i <= ns; ++i) {
        const double s = slo + (shi - slo) * i / ns;
        if (s <= 0.0 && f.singular_at_center) continue;
        const double v = f.profile(s, t).norm();
        if (v > best) best = v, bs = s, bt = t;
      }
    double h = (shi - slo) / ns, refined = best;
    for (int it = 0; it < 40; ++it) {
      for (double s : {bs - h, bs + h}) {
        if (s < slo || s > shi) continue;
        const double v = f.profile(s, bt).norm();
        if (v > refined) refined = v, bs = s;
      }
      h *= 0.5;
    }
    return {refined, refined - best, false};
  }
  const int n = 9;
  double best = 0.0;
  std::vector<double> y(f.N);
  const int total = int(std::pow(n, f.N));
  for (int it = 0; it <= n; ++it) {
    const double t = c.t_lo() + c.duration() * it / n;
    for (int k = 0; k < total; ++k) {
      int rem = k;
      double r2 = 0.0;
      for (int j = 0; j < f.N; ++j) {
        y[j] = c.x[j] + b * (2.0 * (rem % n) / (n - 1) - 1.0);
        r2 += (y[j] - c.x[j]) * (y[j] - c.x[j]);
        rem /= n;
      }
      if (r2 > b * b) continue;
      best = std::max(best, f.at(y, t).norm());
    }
  }
  return {best, std::numeric_limits<double>::quiet_NaN(), false};
}

namespace detail {
// Subintervals of [lo, hi] where g(s) > lam: sampling plus bisection.
inline std::vector<std::pair<double, double>> superlevel_intervals(const std::function<double(double)>& g, double lo,
                                                                   double hi, double lam, int samples = 128) {
  std::vector<std::pair<double, double>> out;
  auto above = [&](double s) { return g(s) > lam; };
  auto root = [&](double a, double b) {
    const bool ia = above(a);
    for (int i = 0; i < 100; ++i) {
      const double mid = 0.5 * (a + b);
      if (mid == a || mid == b) break;
      (above(mid) == ia ? a : b) = mid;
    }
    return 0.5 * (a + b);
  };
  // Geometric sampling near a zero lower end resolves level radii close to a singular point.
  std::vector<double> xs;
  if (lo == 0.0) {
    const double top = hi;
    for (int i = samples; i >= 0; --i) xs.push_back(top * std::pow(2.0, -40.0 * i / samples));
    xs.front() = std::max(xs.front(), 1e-300);
  } else {
    for (int i = 0; i <= samples; ++i) xs.push_back(lo + (hi - lo) * i / samples);
  }
  bool in = above(xs[0]);
  double start = lo;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const bool a = above(xs[i]);
    if (a != in) {
      const double r = root(xs[i - 1], xs[i]);
      if (in) out.emplace_back(start, r);
      else start = r;
      in = a;
    }
  }
  if (in) out.emplace_back(start, hi);
  return out;
}
}  // namespace detail

// Integral of weight over {level > lam} within the cylinder.
inline Integral superlevel_integral(const Field& f, const Cylinder& c, const ValueFn& level, double lam,
                                    const ValueFn& weight, const QuadratureSpec& q) {
  const double b = c.ball_radius();
  if (f.radial && !q.monte_carlo) {
    const double d = f.distance(c.x);
    const double lo = f.singular_at_center && d - b <= q.r_min ? 0.0 : std::max(d - b, 0.0);
    return detail::time_integral(f, c, q, [&](double t) {
      auto g = [&](double s) { return level(f.profile(s, t), t); };
      auto w = [&](double s) { return weight(f.profile(s, t), t); };
      Integral acc;
      for (auto [a, e] : detail::superlevel_intervals(g, lo, d + b, lam))
        acc += detail::radial_piece(f, d, b, a, e, w, q);
      return acc;
    });
  }
  return cylinder_integral(f, c, [&](const Value& v, double t) { return level(v, t) > lam ? weight(v, t) : 0.0; }, q);
}

inline Integral superlevel_measure(const Field& f, const Cylinder& c, const ValueFn& level, double lam,
                                   const QuadratureSpec& q) {
  return superlevel_integral(f, c, level, lam, [](const Value&, double) { return 1.0; }, q);
}

}  // namespace fdl
