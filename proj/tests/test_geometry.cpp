#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <random>

#include "fdl/geometry.hpp"

using namespace fdl;
using boost::math::quadrature::gauss_kronrod;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Radial field with u = g(s), time independent.
Field radial_power(int N, double a, double c = 1.0) {
  Field f;
  f.N = N;
  f.center.assign(N, 0.0);
  f.time_independent = true;
  f.singular_at_center = a < 0.0;
  f.decreasing_in_s = a < 0.0;
  f.label = "power";
  f.profile = [a, c](double s, double) {
    const double u = c * std::pow(s, a);
    const double d = c * a * std::pow(s, a - 1.0);
    return radial_value(std::span<const double>(&u, 1), std::span<const double>(&d, 1), 1.0);
  };
  return f;
}

// Independent 3-D oracle: cylindrical coordinates around the axis through the
// ball center, nested Gauss-Kronrod.
double ball_oracle_3d(const std::function<double(double)>& g, double d, double b) {
  auto outer = [&](double z) {
    const double w = std::sqrt(std::max(b * b - z * z, 0.0));
    auto inner = [&](double rho) { return g(std::hypot(d + z, rho)) * 2.0 * M_PI * rho; };
    return gauss_kronrod<double, 31>::integrate(inner, 0.0, w, 15, 1e-12);
  };
  return gauss_kronrod<double, 31>::integrate(outer, -b, b, 15, 1e-12);
}

std::vector<double> e1(int N, double d) {
  std::vector<double> x(N, 0.0);
  x[0] = d;
  return x;
}

}  // namespace

TEST(Cylinders, IntrinsicGeometry) {
  const auto c = Cylinder::intrinsic({0, 0, 0}, 1.0, 0.5, 4.0, 0.2);
  EXPECT_NEAR(c.ball_radius(), std::pow(4.0, 0.2 * -0.8 / 1.2) * 0.5, 1e-15);
  EXPECT_NEAR(c.t_hi() - c.t_lo(), 2.0 * std::pow(0.5, 6.0), 1e-15);
  EXPECT_NEAR(c.volume(), unit_ball_volume(3) * std::pow(c.ball_radius(), 3) * c.duration(), 1e-15);
  const auto o = Cylinder::one_sided({0, 0}, 2.0, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(o.t_lo(), 1.5);
  EXPECT_DOUBLE_EQ(o.t_hi(), 2.0);
  EXPECT_TRUE(o.contains(std::vector<double>{0.1, 0.1}, 2.0));
  EXPECT_FALSE(o.contains(std::vector<double>{0.1, 0.1}, 1.5));
  const auto p = Cylinder::parabolic({0, 0}, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(p.t_hi(), 0.25);
  EXPECT_THROW(Cylinder::intrinsic({0}, 0.0, 1.0, 0.5, 0.2), DomainError);
  EXPECT_THROW(Cylinder::intrinsic({0}, 0.0, -1.0, 1.0, 0.2), DomainError);
}

TEST(Cylinders, UnitBallAndSphere) {
  EXPECT_NEAR(unit_ball_volume(2), M_PI, 1e-14);
  EXPECT_NEAR(unit_ball_volume(3), 4.0 * M_PI / 3.0, 1e-14);
  EXPECT_NEAR(sphere_area(3), 4.0 * M_PI, 1e-14);
  EXPECT_NEAR(sphere_area(6), M_PI * M_PI * M_PI, 1e-13);
}

TEST(Cylinders, NestingInTheta) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double m = 0.05 + 0.9 * U(gen);
    const double t1 = 1.0 + 10.0 * U(gen), t2 = t1 * (1.0 + 5.0 * U(gen));
    const double rho = 0.1 + U(gen);
    const auto a = Cylinder::intrinsic({0, 0, 0}, 0.0, rho, t1, m);
    const auto b = Cylinder::intrinsic({0, 0, 0}, 0.0, rho, t2, m);
    EXPECT_TRUE(contained_in(b, a));
    for (int k = 0; k < 20; ++k) {
      std::vector<double> y{(2 * U(gen) - 1) * rho, (2 * U(gen) - 1) * rho, (2 * U(gen) - 1) * rho};
      const double t = (2 * U(gen) - 1) * b.half_time();
      if (b.contains(y, t)) EXPECT_TRUE(a.contains(y, t));
    }
  }
}

TEST(Cylinders, CapFraction) {
  // N = 2: the arc fraction is acos(c)/pi.
  for (double s : {0.3, 0.6, 0.9}) {
    const double d = 1.0, b = 0.5;
    const double c = (s * s + d * d - b * b) / (2 * s * d);
    if (std::abs(c) < 1) EXPECT_NEAR(cap_fraction(2, s, d, b), std::acos(c) / M_PI, 1e-12);
  }
  EXPECT_EQ(cap_fraction(4, 0.1, 0.2, 0.5), 1.0);
  EXPECT_EQ(cap_fraction(4, 2.0, 0.2, 0.5), 0.0);
  // Cap fractions integrate to the ball volume.
  for (int N : {2, 3, 5, 6}) {
    const double d = 0.7, b = 0.4;
    auto f = [&](double s) { return sphere_area(N) * std::pow(s, N - 1) * cap_fraction(N, s, d, b); };
    const double v = gauss_kronrod<double, 31>::integrate(f, d - b, d + b, 15, 1e-12);
    EXPECT_NEAR(v, unit_ball_volume(N) * std::pow(b, N), 1e-10) << N;
  }
}

TEST(Means, ConstantField) {
  const QuadratureSpec q;
  const auto f = constant_field(3, 2.5);
  for (const auto& c : {Cylinder::intrinsic({0.3, -0.2, 1.0}, 0.0, 0.7, 3.0, 0.2),
                        Cylinder::parabolic({0, 0, 0}, 1.0, 2.0)})
    EXPECT_NEAR(mean(f, c, q)[0], 2.5, 1e-12);
  const auto v = constant_field(3, std::vector<double>{1.0, -2.0});
  const auto mv = mean(v, Cylinder::parabolic({1, 1, 1}, 0.0, 1.0), q);
  EXPECT_NEAR(mv[0], 1.0, 1e-12);
  EXPECT_NEAR(mv[1], -2.0, 1e-12);
}

TEST(Means, DistanceOverUnitBall) {
  const QuadratureSpec q;
  const auto f = radial_power(3, 1.0);
  const auto c = Cylinder::parabolic({0, 0, 0}, 0.5, 1.0);
  EXPECT_NEAR(mean(f, c, q)[0], 0.75, 1e-10);
  EXPECT_NEAR(slice_mean(f, std::vector<double>{0, 0, 0}, 1.0, 0.0, [](const Value& v, double) { return v.u[0]; }, q).value,
              0.75, 1e-10);
}

TEST(Means, SeparableOffCenterMatchesNestedOracle) {
  const QuadratureSpec q;
  const auto sol = ExactSolution::separable(3, 0.1, 2.0);
  const auto f = to_field(sol);
  const double d = 1.0, b = 0.6;
  const auto c = Cylinder::one_sided(e1(3, d), 1.0, b, 0.5);
  const double got = mean(f, c, q)[0];
  // Time factor tau^{1/(1-m)} integrates in closed form.
  const double e = 1.0 / 0.9;
  const double time = (std::pow(1.5, e + 1) - std::pow(1.0, e + 1)) / (e + 1);
  const double space = ball_oracle_3d([&](double s) { return sol.u(s, 1.0); }, d, b);
  const double want = space * time / c.volume();
  EXPECT_LT(rel(got, want), 1e-6);
}

TEST(LpMeans, Basic) {
  const QuadratureSpec q;
  const auto one = constant_field(3, 1.0);
  const auto c = Cylinder::parabolic({0, 0, 0}, 0.0, 1.0);
  for (double p : {0.5, 1.0, 3.0})
    EXPECT_NEAR(lp_mean(one, c, [](const Value& v, double) { return v.u[0]; }, p, q).value, 1.0, 1e-12);
  const auto inv = radial_power(3, -1.0);
  const auto res = lp_mean(inv, Cylinder::one_sided({0, 0, 0}, 1.0, 1.0, 1.0), [](const Value& v, double) { return v.u[0]; },
                           2.0, q);
  EXPECT_FALSE(res.divergent);
  EXPECT_NEAR(res.value, 3.0, 1e-8);
  EXPECT_THROW(lp_mean(one, c, [](const Value& v, double) { return v.u[0]; }, 0.0, q), DomainError);
}

TEST(LpMeans, PowerLawsNearTheSingularity) {
  const QuadratureSpec q;
  const auto c = Cylinder::one_sided({0, 0, 0}, 1.0, 1.0, 1.0);
  for (double a : {0.5, 1.0, 2.0, 2.5, 2.9}) {
    const auto f = radial_power(3, -a);
    const auto r = cylinder_mean(f, c, [](const Value& v, double) { return v.u[0]; }, q);
    EXPECT_FALSE(r.divergent) << a;
    EXPECT_LT(rel(r.value, 3.0 / (3.0 - a)), 1e-8) << a;
  }
  for (double a : {3.0, 3.5, 5.0}) {
    const auto f = radial_power(3, -a);
    EXPECT_TRUE(cylinder_mean(f, c, [](const Value& v, double) { return v.u[0]; }, q).divergent) << a;
  }
}

TEST(LpMeans, SeparableGradientClosedForm) {
  const QuadratureSpec q;
  const double m = 0.1, T = 2.0, d = 1.0, b = 0.6;
  const auto sol = ExactSolution::separable(3, m, T);
  const auto f = to_field(sol);
  const auto c = Cylinder::one_sided(e1(3, d), 1.0, b, 0.5);
  const auto res = lp_mean(f, c, [](const Value& v, double) { return v.grad; }, 2.0, q);
  // |grad u^m|^2 = A^2 tau^{2m/(1-m)} s^{2a}, a = -(1+m)/(1-m). In N = 3 the
  // cap-weighted shell measure is 2 pi s (s - (s^2 + d^2 - b^2)/(2d)) ds.
  const double A = 2 * m / (1 - m) * std::pow(sol.prefactor(), m), a = -(1 + m) / (1 - m);
  auto prim = [&](double s) {
    const double e = 2 * a;
    return 2 * M_PI * (std::pow(s, e + 3) / (e + 3) - std::pow(s, e + 4) / ((e + 4) * 2 * d) -
                       (d * d - b * b) / (2 * d) * std::pow(s, e + 2) / (e + 2));
  };
  const double space = prim(d + b) - prim(d - b);
  const double g = 2 * m / (1 - m);
  const double time = (std::pow(1.5, g + 1) - 1.0) / (g + 1);
  EXPECT_LT(rel(res.value, A * A * space * time / c.volume()), 1e-6);
}

TEST(LpMeans, ErrorTracksTolerance) {
  const auto sol = ExactSolution::separable(3, 0.1, 2.0);
  const auto f = to_field(sol);
  const double d = 1.0, b = 0.95;
  const double want = ball_oracle_3d([&](double s) { return sol.u(s, 1.0); }, d, b);
  for (double tol : {1e-3, 1e-5, 1e-7, 1e-9}) {
    QuadratureSpec q;
    q.rel_tol = tol;
    const double got = ball_integral(f, e1(3, d), b, 1.0, [](const Value& v, double) { return v.u[0]; }, q).value;
    EXPECT_LT(rel(got, want), std::max(tol, 1e-12)) << tol;
  }
}

TEST(SupNorm, Examples) {
  const auto c0 = constant_field(3, 4.0);
  EXPECT_DOUBLE_EQ(sup_norm(c0, Cylinder::parabolic({0, 0, 0}, 0.0, 1.0)).value, 4.0);
  const double T = 2.0;
  const auto sol = ExactSolution::separable(3, 0.1, T);
  const auto f = to_field(sol);
  // Ball B_{1/4}(3/4 e1) spans radii [1/2, 1]; the window is (T-1, T-1/2].
  const auto c = Cylinder::one_sided(e1(3, 0.75), T - 0.5, 0.25, 0.5);
  EXPECT_DOUBLE_EQ(sup_norm(f, c).value, sol.u(0.5, T - 1.0));
  EXPECT_TRUE(sup_norm(f, Cylinder::parabolic({0, 0, 0}, 0.0, 0.1)).unbounded);
  EXPECT_TRUE(std::isinf(sup_norm(f, Cylinder::parabolic(e1(3, 0.05), 0.0, 0.1)).value));
}

TEST(SupNorm, NonMonotoneRadialField) {
  // u = exp(-(s-1)^2) peaks on the sphere s = 1.
  Field f;
  f.N = 3;
  f.center = {0, 0, 0};
  f.time_independent = true;
  f.profile = [](double s, double) {
    const double u = std::exp(-(s - 1) * (s - 1));
    const double d = 0.0;
    return radial_value(std::span<const double>(&u, 1), std::span<const double>(&d, 1), 1.0);
  };
  const auto r = sup_norm(f, Cylinder::parabolic(e1(3, 0.8), 0.0, 0.5));
  EXPECT_NEAR(r.value, 1.0, 1e-10);
}

TEST(SuperLevel, Examples) {
  const QuadratureSpec q;
  const auto bump = gaussian_bump(3, 1.0, 1.0, 1.0, 0.5, {0, 0, 0});
  const auto c = Cylinder::parabolic(e1(3, 0.2), 0.0, 1.0);
  auto lvl = [](const Value& v, double) { return std::abs(v.u[0]); };
  EXPECT_LT(rel(superlevel_measure(bump, c, lvl, 0.0, q).value, c.volume()), 1e-10);
  EXPECT_EQ(superlevel_measure(bump, c, lvl, 2.5, q).value, 0.0);
}

TEST(SuperLevel, SeparableLevelBallsAgainstMonteCarlo) {
  const double m = 0.1, T = 2.0;
  const auto sol = ExactSolution::separable(3, m, T);
  const auto f = to_field(sol);
  const auto c = Cylinder::one_sided({0, 0, 0}, 1.5, 1.0, 1.0);
  // Level radius 0.5 at t = 1: u(0.5, 1) = lam; r(t) = 0.5 sqrt(T - t).
  const double lam = sol.u(0.5, 1.0);
  auto lvl = [](const Value& v, double) { return v.u[0]; };
  const QuadratureSpec q;
  const double got = superlevel_measure(f, c, lvl, lam, q).value;
  auto rt = [&](double t) { return 0.5 * std::sqrt(T - t); };
  const double closed = gauss_kronrod<double, 31>::integrate(
      [&](double t) { return unit_ball_volume(3) * std::pow(std::min(rt(t), 1.0), 3); }, 0.5, 1.5, 10, 1e-12);
  EXPECT_LT(rel(got, closed), 1e-6);
  QuadratureSpec mc;
  mc.monte_carlo = true;
  mc.seed = 12345;
  mc.mc_samples = 400000;
  const double est = cylinder_integral(f, c, [&](const Value& v, double t) { return lvl(v, t) > lam ? 1.0 : 0.0; }, mc).value;
  EXPECT_LT(rel(est, got), 0.01);
}

TEST(SuperLevel, MonotoneInLevel) {
  const QuadratureSpec q;
  const auto f = to_field(ExactSolution::separable(3, 0.1, 2.0));
  const auto c = Cylinder::one_sided(e1(3, 1.0), 1.0, 0.8, 0.5);
  auto lvl = [](const Value& v, double) { return v.grad; };
  double prev = std::numeric_limits<double>::infinity();
  for (double lam = 0.0; lam < 5.0; lam += 0.125) {
    const double v = superlevel_measure(f, c, lvl, lam, q).value;
    EXPECT_LE(v, prev * (1 + 1e-12));
    // Right-continuity on the grid: a tiny step up changes little.
    const double w = superlevel_measure(f, c, lvl, lam + 1e-9, q).value;
    EXPECT_NEAR(w, v, 1e-6 * c.volume());
    prev = v;
  }
}

TEST(RadialReduction, MonteCarloAgreement) {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const int N = 2 + int(4 * U(gen));
    std::vector<double> center(N);
    for (double& x : center) x = 2 * U(gen) - 1;
    const auto f = gaussian_bump(N, 1.0, 0.5 * U(gen), 0.5 + U(gen), 0.3 + U(gen), center);
    const double pw = 0.5 + 2.5 * U(gen);
    const std::vector<double> xo(N, 0.1);
    const double b = 0.3 + U(gen);
    auto h = [pw](const Value& v, double) { return std::pow(v.u[0], pw); };
    const QuadratureSpec q;
    const auto fast = ball_integral(f, xo, b, 0.0, h, q);
    QuadratureSpec mc;
    mc.monte_carlo = true;
    mc.seed = 1000 + i;
    mc.mc_samples = 1000000;
    const auto est = ball_integral(f, xo, b, 0.0, h, mc);
    EXPECT_LT(std::abs(est.value - fast.value), 3.0 * est.error + 1e-12) << "case " << i;
  }
}

TEST(Cubature, NonRadialLinearField) {
  QuadratureSpec q;
  const auto f = linear_field(3, 1.0);
  const auto c = Cylinder::parabolic({0.5, 0, 0}, 0.0, 0.4);
  EXPECT_NEAR(mean(f, c, q)[0], 0.5, 1e-12);
  const auto r = cylinder_mean(f, c, [](const Value& v, double) { return v.u[0] * v.u[0]; }, q);
  EXPECT_NEAR(r.value, 0.25 + 0.16 / 5.0, 1e-12);
  const auto x = cylinder_integral_x(f, c, [](const Value&, std::span<const double> y, double) { return y[1] * y[1]; }, q);
  EXPECT_NEAR(x.value / c.volume(), 0.16 / 5.0, 1e-12);
}

TEST(MonteCarlo, RequiresSeedAndIsDeterministic) {
  QuadratureSpec mc;
  mc.monte_carlo = true;
  const auto f = gaussian_bump(3, 1.0, 0.0, 1.0, 1.0, {0, 0, 0});
  auto h = [](const Value& v, double) { return v.u[0]; };
  EXPECT_THROW(ball_integral(f, std::vector<double>{0, 0, 0}, 1.0, 0.0, h, mc), DomainError);
  mc.seed = 7;
  mc.mc_samples = 10000;
  const double a = ball_integral(f, std::vector<double>{0, 0, 0}, 1.0, 0.0, h, mc).value;
  const double b = ball_integral(f, std::vector<double>{0, 0, 0}, 1.0, 0.0, h, mc).value;
  EXPECT_EQ(a, b);
  // Dimension 5 non-radial fields fall back to sampling and need a seed.
  const auto lin = linear_field(5, 1.0);
  EXPECT_THROW(mean(lin, Cylinder::parabolic(std::vector<double>(5, 0.0), 0.0, 1.0), QuadratureSpec{}), DomainError);
}
