#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fdl/exponents.hpp"

namespace fdl {

struct QuadratureSpec {
  int time_order = 16;
  int time_panels = 1;
  double rel_tol = 1e-10;
  int max_depth = 15;
  double r_min = 1e-12;
  double grading = 2.0;
  int angular_order = 12;
  bool monte_carlo = false;
  std::uint64_t mc_samples = 200000;
  std::optional<std::uint64_t> seed;
};

struct Integral {
  double value = 0.0;
  double error = 0.0;
  bool divergent = false;

  Integral& operator+=(const Integral& o) {
    value += o.value;
    error += o.error;
    divergent = divergent || o.divergent;
    return *this;
  }
  Integral scaled(double c) const { return {value * c, error * std::abs(c), divergent}; }
};

struct Rule {
  std::vector<double> x;
  std::vector<double> w;
};

namespace detail {
template <unsigned P>
Rule unfold_gauss() {
  using G = boost::math::quadrature::gauss<double, P>;
  Rule r;
  const auto& a = G::abscissa();
  const auto& w = G::weights();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) {
      r.x.push_back(0.0);
      r.w.push_back(w[i]);
    } else {
      r.x.push_back(-a[i]);
      r.w.push_back(w[i]);
      r.x.push_back(a[i]);
      r.w.push_back(w[i]);
    }
  }
  return r;
}
}  // namespace detail

// Gauss-Legendre rule on [-1, 1].
inline const Rule& gauss_rule(int n) {
  static const Rule r4 = detail::unfold_gauss<4>();
  static const Rule r8 = detail::unfold_gauss<8>();
  static const Rule r12 = detail::unfold_gauss<12>();
  static const Rule r16 = detail::unfold_gauss<16>();
  static const Rule r24 = detail::unfold_gauss<24>();
  static const Rule r32 = detail::unfold_gauss<32>();
  switch (n) {
    case 4: return r4;
    case 8: return r8;
    case 12: return r12;
    case 16: return r16;
    case 24: return r24;
    case 32: return r32;
    default: throw DomainError("gauss_rule: supported orders are 4, 8, 12, 16, 24, 32");
  }
}

// Composite Gauss-Legendre nodes on [a, b].
inline Rule composite_rule(double a, double b, int order, int panels) {
  const Rule& g = gauss_rule(order);
  Rule r;
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * h, c = lo + 0.5 * h;
    for (std::size_t i = 0; i < g.x.size(); ++i) {
      r.x.push_back(c + 0.5 * h * g.x[i]);
      r.w.push_back(0.5 * h * g.w[i]);
    }
  }
  return r;
}

// Fixed-order summation tree so results do not depend on evaluation grouping.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

inline Integral adaptive_integral(const std::function<double(double)>& f, double a, double b, const QuadratureSpec& q) {
  if (!(b > a)) return {};
  // The library compares an unscaled error estimate with a scaled tolerance,
  // which never terminates on very short intervals; integrate over [0, 1].
  const double h = b - a;
  auto g = [&](double x) { return f(a + h * x); };
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      g, 0.0, 1.0, unsigned(q.max_depth), q.rel_tol, &err);
  return {h * v, h * err, !std::isfinite(v)};
}

// Integral over (a, b] for integrands singular at a: dyadic pieces shrinking
// toward a down to width r_min. The series is declared divergent when each of
// the last 8 partial sums grew by more than 1%.
inline Integral graded_integral(const std::function<double(double)>& f, double a, double b, const QuadratureSpec& q) {
  if (!(b > a)) return {};
  std::vector<double> terms, partial;
  Integral acc;
  double hi = b, width = b - a;
  while (true) {
    const double lo = a + width / q.grading;
    const Integral piece = adaptive_integral(f, lo, hi, q);
    if (piece.divergent) return {acc.value, acc.error, true};
    acc += piece;
    terms.push_back(std::abs(piece.value));
    partial.push_back(acc.value);
    hi = lo;
    width = lo - a;
    if (width < q.r_min) break;
  }
  const std::size_t n = terms.size();
  if (n >= 9) {
    bool growing = true;
    double run = 0.0;
    for (std::size_t i = 0; i < n; ++i) run += terms[i];
    double s = run;
    for (std::size_t i = n; i-- > n - 8;) {
      const double prev = s - terms[i];
      if (!(prev > 0.0 && terms[i] > 0.01 * prev)) growing = false;
      s = prev;
    }
    if (growing) return {acc.value, std::numeric_limits<double>::infinity(), true};
  }
  if (n >= 2 && terms[n - 2] > 0.0) {
    const double ratio = std::min(terms[n - 1] / terms[n - 2], 0.999);
    const double tail = terms[n - 1] * ratio / (1.0 - ratio);
    acc.value += acc.value >= 0.0 ? tail : -tail;
    acc.error += tail;
  }
  return acc;
}

// Counter-based generator: the k-th draw of a stream is a pure function of (seed, stream, k).
struct CounterRng {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::uint64_t bits(std::uint64_t k) const { return mix(mix(seed ^ mix(stream)) + k); }
  double uniform(std::uint64_t k) const { return double(bits(k) >> 11) * 0x1.0p-53; }
  // Standard normal via Box-Muller on draws 2k, 2k+1.
  double normal(std::uint64_t k) const {
    const double u1 = 1.0 - uniform(2 * k), u2 = uniform(2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

}  // namespace fdl
