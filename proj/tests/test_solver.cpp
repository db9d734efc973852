#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fdl/geometry.hpp"
#include "fdl/solver.hpp"

using namespace fdl;

TEST(Solver, ConstantStateIsSteady) {
  RadialProblem P;
  P.N = 3;
  P.m = 0.3;
  P.M = 64;
  P.initial = [](double) { return 2.5; };
  P.inner = P.outer = [](double) { return 2.5; };
  const auto tr = solve(P, DtPolicy{.dt = 0.01});
  for (const auto& row : tr.u)
    for (double v : row) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(Solver, HeatKernelAccuracyAndOrder) {
  const auto tr = solve(heat_problem(3, 0.5, 2.0, 400, 0.5), DtPolicy{.dt = 5e-4});
  EXPECT_LT(l2_relative_error(tr, heat_exact(3)), 1e-3);
  const auto c = convergence_order(heat_problem(3, 0.5, 2.0, 100, 0.5), heat_exact(3), DtPolicy{.dt = 2e-3});
  EXPECT_GE(c.order, 1.7);
  EXPECT_LE(c.order, 2.1);
}

TEST(Solver, SeparableAccuracyAndOrder) {
  const auto sol = ExactSolution::separable(3, 0.1, 1.0);
  const auto tr = solve(exact_problem(sol, 0.5, 2.0, 400, 0.0, 0.5), DtPolicy{.dt = 5e-4});
  EXPECT_LT(l2_relative_error(tr, exact_profile(sol)), 1e-2);
  const auto c = convergence_order(exact_problem(sol, 0.5, 2.0, 100, 0.0, 0.5), exact_profile(sol), DtPolicy{.dt = 2e-3});
  EXPECT_GE(c.order, 1.5);
}

TEST(Solver, ConstantSolutionReportsExact) {
  RadialProblem P;
  P.M = 16;
  P.initial = [](double) { return 1.0; };
  P.inner = P.outer = [](double) { return 1.0; };
  const auto c = convergence_order(P, [](double, double) { return 1.0; }, DtPolicy{.dt = 0.05});
  EXPECT_TRUE(c.exact);
  EXPECT_TRUE(std::isnan(c.order));
}

TEST(Solver, StaysNonNegative) {
  RadialProblem P;
  P.N = 3;
  P.m = 0.5;
  P.r_in = 0.2;
  P.r_out = 2.0;
  P.M = 200;
  P.t_end = 0.2;
  P.initial = [](double r) { return std::exp(-8.0 * (r - 1.0) * (r - 1.0)); };
  P.inner = [](double) { return std::exp(-8.0 * 0.64); };
  P.outer = [](double) { return 0.0; };
  const auto tr = solve(P, DtPolicy{.dt = 1e-3});
  for (const auto& row : tr.u)
    for (double v : row) EXPECT_GE(v, -1e-12);
}

TEST(Solver, ZeroFluxConservesMass) {
  RadialProblem P;
  P.N = 3;
  P.m = 0.4;
  P.r_in = 0.3;
  P.r_out = 1.5;
  P.M = 120;
  P.t_end = 0.5;
  P.boundary = BoundaryMode::zero_flux;
  P.initial = [](double r) { return 1.0 + 0.5 * std::cos(3.0 * r); };
  const auto tr = solve(P, DtPolicy{.dt = 1e-3});
  const double m0 = trajectory_mass(P, tr, 0), m1 = trajectory_mass(P, tr, tr.t.size() - 1);
  EXPECT_LT(std::abs(m1 - m0) / m0 / (P.t_end - P.t0), 1e-6);
}

TEST(Solver, StepUnderflowCarriesDiagnostics) {
  const auto P = heat_problem(3, 0.5, 2.0, 32, 0.1);
  try {
    solve(P, DtPolicy{.dt = 1e-3, .dt_min = 1e-2});
    FAIL() << "expected a step failure";
  } catch (const StepFailure& e) {
    EXPECT_EQ(e.t, 0.0);
    EXPECT_GT(e.min_u, 0.0);
    EXPECT_DOUBLE_EQ(e.max_diffusivity, 1.0);
  }
}

TEST(Solver, RejectsBadProblems) {
  RadialProblem P;
  P.initial = [](double) { return 1.0; };
  P.inner = P.outer = [](double) { return 1.0; };
  P.r_in = 0.0;
  EXPECT_THROW(solve(P), DomainError);
  P.r_in = 0.5;
  P.initial = [](double) { return -1.0; };
  EXPECT_THROW(solve(P), DomainError);
}

TEST(SampledField, GradientMatchesExact) {
  const auto sol = ExactSolution::separable(3, 0.1, 1.0);
  double prev = 0.0;
  for (int M : {100, 200}) {
    const auto tr = solve(exact_problem(sol, 0.5, 2.0, M, 0.0, 0.5), DtPolicy{.dt = 1e-3, .snapshots = 50});
    const auto f = to_field(tr);
    EXPECT_EQ(f.provenance, Provenance::sampled);
    double worst = 0.0;
    for (double s : {0.6, 0.9, 1.3, 1.9})
      for (double t : {0.1, 0.3, 0.5}) {
        const double g = f.profile(s, t).grad;
        worst = std::max(worst, std::abs(g - std::abs(sol.dum_ds(s, t))) / std::abs(sol.dum_ds(s, t)));
      }
    EXPECT_LT(worst, 2e-2);
    if (prev > 0.0) EXPECT_LT(worst, prev);
    prev = worst;
  }
}

TEST(SampledField, CylinderMeansMatchExact) {
  const auto sol = ExactSolution::separable(3, 0.1, 1.0);
  const auto tr = solve(exact_problem(sol, 0.5, 2.0, 200, 0.0, 0.5), DtPolicy{.dt = 1e-3, .snapshots = 200});
  const auto fs = to_field(tr);
  const auto fe = to_field(sol);
  const QuadratureSpec q;
  const auto c = Cylinder::one_sided({1.2, 0.0, 0.0}, 0.4, 0.3, 0.2);
  auto u2 = [](const Value& v, double) { return v.u[0] * v.u[0]; };
  const double a = cylinder_mean(fs, c, u2, q).value, b = cylinder_mean(fe, c, u2, q).value;
  EXPECT_NEAR(a, b, 1e-3 * b);
  EXPECT_THROW(fs.profile(0.4, 0.1), DomainError);
}

TEST(TrajectoryCsv, RoundTrip) {
  auto tr = solve(heat_problem(2, 0.5, 1.0, 8, 0.01), DtPolicy{.dt = 1e-3, .snapshots = 3});
  tr.T = 1.5;
  std::stringstream ss;
  write_csv(ss, tr);
  const std::string text = ss.str();
  EXPECT_EQ(text.rfind("# N=2 m=1 T=1.5\nr,t,u\n", 0), 0u);
  const auto back = read_csv(ss);
  EXPECT_EQ(back.N, 2);
  EXPECT_EQ(back.r, tr.r);
  EXPECT_EQ(back.t, tr.t);
  EXPECT_EQ(back.u, tr.u);
  std::stringstream again;
  write_csv(again, back);
  EXPECT_EQ(again.str(), text);
}

TEST(TrajectoryCsv, RejectsMalformed) {
  std::stringstream a("r,t,u\n1,0,1\n");
  EXPECT_THROW(read_csv(a), DomainError);
  std::stringstream b("# N=3 m=0.5\nr,t,u\n1,0,x\n");
  EXPECT_THROW(read_csv(b), DomainError);
  std::stringstream c("# N=3 m=0.5 Q=1\nr,t,u\n");
  EXPECT_THROW(read_csv(c), DomainError);
}
