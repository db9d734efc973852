// Acceptance run: one PASS/FAIL line per criterion, details indented below it.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "fdl/fdl.hpp"

using namespace fdl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct Criterion {
  int id;
  std::string title;
  double budget_s;  // runtime limit, or 0 when none is stated
  bool pass = true;
  std::vector<std::string> lines;

  void item(bool ok, const char* fmt, ...) __attribute__((format(printf, 3, 4))) {
    char buf[512];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    lines.push_back(std::string(ok ? "  ok   " : "  FAIL ") + buf);
    pass = pass && ok;
  }
  void note(const std::string& s) { lines.push_back("       " + s); }
};

int failures = 0;

void run(int id, const std::string& title, double budget_s, const std::function<void(Criterion&)>& body) {
  Criterion c{id, title, budget_s};
  const auto t0 = Clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.item(false, "exception: %s", e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (budget_s > 0.0) c.item(secs < budget_s, "runtime %.1f s (limit %.0f s)", secs, budget_s);
  std::printf("CRITERION %2d %s  %s  [%.1f s]\n", id, c.pass ? "PASS" : "FAIL", title.c_str(), secs);
  for (const auto& l : c.lines) std::printf("%s\n", l.c_str());
  std::fflush(stdout);
  if (!c.pass) ++failures;
}

// ---------------------------------------------------------------------------

void exponents(Criterion& c) {
  const Params P{3, 0.2, 2.0, 3.0};
  c.item(std::abs(lambda_r(P) - 1.6) < 1e-12, "lambda_r = %.15g", lambda_r(P));
  c.item(std::abs(scaling_deficit(P) - 2.5) < 1e-12, "d = %.15g", scaling_deficit(P));
  c.item(std::abs(q_exponent(P) - 6.0 / 7.6) < 1e-12, "q = %.15g", q_exponent(P));
  c.item(std::abs(critical_m(3) - 0.2) < 1e-12, "m_c(3) = %.15g", critical_m(3));
  double worst = 0.0;
  for (int N = 3; N <= 10; ++N) worst = std::max(worst, std::abs(eps_o_separable(N, critical_m(N))));
  c.item(worst < 1e-12, "max |eps_o(N, m_c(N))| over N = 3..10: %.3g", worst);
}

void sharpness(Criterion& c) {
  for (auto [N, m] : {std::pair{3, 0.1}, {4, 0.2}, {5, 0.3}}) {
    const auto p = probe_integrability(ExactSolution::separable(N, m, 1.0), ProbeOptions{});
    const double want = -(N * (m - 1.0) + 2.0 * (1.0 + m)) / (1.0 + m);
    c.item(rel(p.critical_eps, want) < 0.05 && p.reliable, "separable N=%d m=%.1f: critical_eps %.6f vs %.6f (rel %.2e, min R2 %.6f)",
           N, m, p.critical_eps, want, rel(p.critical_eps, want), p.min_r2);
  }
  ProbeOptions o;
  o.j_start = 33;
  o.annuli = 14;
  const auto k = probe_integrability(ExactSolution::kosov_critical(6, 1.0), o);
  c.item(std::abs(k.critical_eps) < 0.05, "kosov critical N=6: critical_eps %.4f (annuli %d..%d)", k.critical_eps,
         o.j_start, o.j_start + o.annuli - 1);
}

void residuals(Criterion& c) {
  const std::vector<double> x{1.0, 0.0, 0.0};
  const double rs = residual(ExactSolution::separable(3, 0.1, 1.0), x, 0.0, 1e-3);
  const double rk = residual(ExactSolution::king_kosov(3, 0.1, 1.0, 1.0), x, 0.0, 1e-3);
  const double rc = residual(ExactSolution::kosov_critical(6, 2.0), std::vector<double>{0.3, 0, 0, 0, 0, 0}, 0.5, 1e-3);
  c.item(std::abs(rs) < 1e-4, "separable N=3 m=0.1 |x|=1 T-t=1: |residual| %.3e", std::abs(rs));
  c.item(std::abs(rk) < 1e-4, "king-kosov A=1 same point: |residual| %.3e", std::abs(rk));
  c.item(std::abs(rc) < 1e-3, "kosov critical N=6 r=0.3 t=0.5 T=2: |residual| %.3e", std::abs(rc));
  const auto s = ExactSolution::separable(3, 0.1, 1.0);
  // (0.14/0.9)^(10/9) evaluated at 30 digits.
  const double closed = 0.126501311814345739;
  c.item(rel(s.u(1.0, 0.0), closed) < 1e-12, "separable u(|x|=1, T-t=1) = %.10f vs closed form %.10f", s.u(1.0, 0.0),
         closed);
  const auto k = ExactSolution::king_kosov(3, 0.1, 1.0, 0.0);
  const CounterRng rng{2024, 3};
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double r = 0.05 + 2.95 * rng.uniform(2 * i), t = -2.0 + 2.9 * rng.uniform(2 * i + 1);
    worst = std::max({worst, rel(k.u(r, t), s.u(r, t)), rel(k.dum_ds(r, t), s.dum_ds(r, t))});
  }
  c.item(worst < 1e-10, "king-kosov A=0 vs separable at 20 random points: max rel diff %.2e", worst);
}

void asymptotics(Criterion& c) {
  const auto k = ExactSolution::kosov_critical(6, 2.0);
  const double ratio = kosov_G(k, 1e-6, 0.5) / kosov_G_asymptotic(k, 1e-6, 0.5);
  c.item(ratio >= 0.9 && ratio <= 1.1, "G / asymptotic at r=1e-6, N=6, T=2, t=0.5: %.6f", ratio);
}

void intrinsic_system(Criterion& c) {
  const Params P{6, 0.4, 3.0, 5.0};
  const QuadratureSpec q;
  const auto f = to_field(ExactSolution::separable(6, 0.4, 3.0));
  const CounterRng rng{5, 17};
  const double R = 0.25;
  const std::vector<std::string> required{"sub-intrinsic", "monotone", "bound-theta", "bound-theta-2"};
  for (int i = 0; i < 8; ++i) {
    // Random direction, radius in [1.4, 2], time in [1, 2]; no coordinate axis is hit with probability one.
    std::vector<double> x(6);
    double n = 0.0;
    for (int d = 0; d < 6; ++d) n += (x[d] = rng.normal(16 * i + d)) * x[d];
    const double s = 1.4 + 0.6 * rng.uniform(16 * i + 8), t = 1.0 + rng.uniform(16 * i + 9);
    for (double& v : x) v *= s / std::sqrt(n);
    const double lo = lambda_o_of(f, Cylinder::intrinsic(x, t, 4 * R, 1.0, P.m), P, q).value;
    const auto S = build_theta_system(f, x, t, R, lo, P, radius_grid(R, R / 10, 64), q, {});
    bool ok = true;
    std::string worst;
    for (const auto& name : required) {
      const auto& v = S.verdict(name);
      ok = ok && v.pass;
      char b[64];
      std::snprintf(b, sizeof b, " %s=%.4f", name.c_str(), v.worst);
      worst += b;
    }
    c.item(ok, "point %d |x|=%.3f t=%.3f lambda_o=%.2f radii=%zu:%s", i, s, t, lo, S.radii.size(), worst.c_str());
  }
  double worst = 0.0;
  for (double cv : {0.5, 2.0, 40.0})
    for (double rho : {0.05, 0.3, 1.0})
      for (double lo : {1.0, 10.0}) {
        const double th = theta_tilde(constant_field(6, cv, P.m), std::vector<double>(6, 0.0), 0.0, rho, lo, P, q);
        const double closed = std::max(lo, std::pow(cv * std::pow(rho, -1.0 / P.m), (1.0 + P.m) / (2.0 * P.m)));
        worst = std::max(worst, rel(th, closed));
      }
  c.item(worst < 1e-8, "constant-field theta-tilde vs closed form: max rel err %.2e", worst);
}

void covering(Criterion& c) {
  const Params P{3, 0.2, 6.0, 3.0};
  const double top = 1.0;
  const std::vector<std::pair<const char*, double>> modes{{"proof", c_hat(P)}, {"test", 20.0}};
  const double R = c_hat(P) * top;
  const auto S = build_theta_system(constant_field(3, 1e-4, P.m), {0, 0, 0}, 0.0, R, 1.0, P,
                                    radius_grid(R, top / 32, 4), {});
  const CounterRng rng{31, 9};
  for (const auto& [name, chat] : modes) {
    int bad = 0, overlapping = 0;
    for (std::uint64_t fam = 0; fam < 200; ++fam) {
      const int n = 10 + int(31 * rng.uniform(1'000'000 + fam));
      const auto cands = random_cover_family(S, top, std::min(n, 40), rng, fam);
      const auto F = vitali_cover(cands, R, chat, P.m);
      bool ok = true;
      for (std::size_t a = 0; a < F.selected.size(); ++a)
        for (std::size_t b = a + 1; b < F.selected.size(); ++b)
          ok = ok && !intersects(F.cylinder(F.selected[a]), F.cylinder(F.selected[b]));
      for (std::size_t i = 0; i < cands.size(); ++i)
        ok = ok && F.witness[i] >= 0 && contained_in(F.cylinder(i), F.enlargement(std::size_t(F.witness[i])));
      if (!ok || !F.disjoint || !F.contained) ++bad;
      if (F.selected.size() < cands.size()) ++overlapping;
    }
    c.item(bad == 0, "%s c_hat=%.4g: %d/200 families fail brute-force verification (%d had overlaps)", name, chat, bad,
           overlapping);
  }
}

void iteration(Criterion& c) {
  const CounterRng rng{2024, 1};
  int wrong = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t k = 8 * std::uint64_t(i);
    const double C = 0.5 + 9.5 * rng.uniform(k), b = 1.0 + 7.0 * rng.uniform(k + 1), a = 0.1 + 1.9 * rng.uniform(k + 2);
    const double d = 0.05 + 1.95 * rng.uniform(k + 3);
    const bool above = rng.uniform(k + 4) < 0.5;
    const double Y0 = degiorgi_threshold(C, b, a) * std::exp(above ? d : -d);
    if (degiorgi_simulate(Y0, C, b, a) != (above ? Verdict::diverges : Verdict::converges)) ++wrong;
  }
  c.item(wrong == 0, "De Giorgi threshold classification: %d misclassified of 1000", wrong);
  double gworst = 0.0;
  for (int N = 2; N <= 10; ++N) {
    const auto lim = geometric_sums(N);
    int terms = 60;
    while (std::pow(kappa(N), -terms) * terms * (N + 2) * (N + 2) > 1e-11) terms += 20;
    const auto p = geometric_partial_sums(N, terms);
    gworst = std::max({gworst, std::abs(p.s1 - lim.s1), std::abs(p.s2 - lim.s2)});
  }
  c.item(gworst < 1e-9, "geometric partial sums vs closed forms, N=2..10: max abs err %.2e", gworst);
  double mworst = 0.0;
  for (const Params& P : {Params{3, 0.1, 2, 3}, Params{6, 0.4, 3, 5}, Params{10, 0.5, 5, 7}}) {
    double a = (P.r - P.m - 1.0) / (2.0 * P.m);
    const double cst = moser_step_constant(P), k = kappa(P.N);
    for (int i = 0; i <= 50; ++i) {
      const auto t = moser_sequence(P, i);
      const double p_closed = lambda_r(P) / (2.0 * P.m) * std::pow(k, i) + P.N * (1.0 - P.m) / (2.0 * P.m);
      mworst = std::max({mworst, rel(t.alpha, a), rel(t.p, p_closed)});
      a = (2.0 * a * k + cst) / 2.0;
    }
  }
  c.item(mworst < 1e-12, "Moser recursion identity for i <= 50: max rel err %.2e", mworst);
}

void fubini(Criterion& c) {
  const QuadratureSpec q;
  const auto sol = ExactSolution::separable(3, 0.1, 2.0);
  const auto f = to_field(sol);
  const auto Q = Cylinder::one_sided({1.0, 0, 0}, 1.0, 0.5, 0.5);
  const double k = std::pow(std::abs(sol.dum_ds(0.7, 1.0)), 1.0 / sol.m);
  const double l1 = std::pow(std::abs(sol.dum_ds(1.2, 1.0)), 1.0 / sol.m);
  const auto r = fubini_identity_check(f, Q, k, l1, 0.3, q_exponent(Params{3, 0.1, 2.0, 3.0}), q);
  c.item(r.lhs > 0.0 && r.ratio < 1e-3, "separable annulus: lhs %.10g rhs %.10g relative gap %.2e", r.lhs, r.rhs, r.ratio);
  const auto z = fubini_identity_check(linear_field(3, 1.0), Cylinder::parabolic({0, 0, 0}, 0.0, 1.0), 4.0, 2.0, 0.5, 0.8, q);
  c.item(z.lhs == 0.0 && z.rhs == 0.0 && z.ratio == 0.0, "empty level set: lhs %g rhs %g gap %g", z.lhs, z.rhs, z.ratio);
}

// Ratios of one checker across the base cylinder and three dyadic rescalings.
void stability(Criterion& c, const char* name, const std::vector<Report>& rs, const char* how) {
  bool finite = true;
  std::vector<double> ratios;
  std::string list;
  for (const auto& r : rs) {
    finite = finite && r.status == Status::ok && std::isfinite(r.ratio) && r.ratio > 0.0;
    ratios.push_back(r.ratio);
    char b[48];
    std::snprintf(b, sizeof b, " %.4g", r.ratio);
    list += b;
  }
  const double sp = finite ? spread(ratios) : std::numeric_limits<double>::infinity();
  c.item(finite && sp <= 4.0, "%-22s finite, spread %.4g over %s:%s [%s]", name, sp, how, list.c_str(),
         rs.front().branch.c_str());
}

void checkers(Criterion& c) {
  const QuadratureSpec q;
  const Params P6{6, 0.4, 3.0, 5.0}, P3{3, 0.1, 2.0, 4.0};
  const auto f6 = to_field(ExactSolution::separable(6, 0.4, 3.0));
  const auto f3 = to_field(ExactSolution::separable(3, 0.1, 1.0));
  const std::vector<double> x6{1.6, 0.8, 0.4, 0, 0, 0}, x3{0.5, 0.2, 0.1};
  const std::vector<double> o6(6, 0.0), o3(3, 0.0);
  const double R = 0.25;
  const double lo = lambda_o_of(f6, Cylinder::intrinsic(x6, 1.5, 4 * R, 1.0, P6.m), P6, q).value;
  const auto S = build_theta_system(f6, x6, 1.5, R, lo, P6, radius_grid(R, R / 16, 16), q, {});
  const double rho = R / 2;
  const auto base6 = Cylinder::intrinsic(x6, 1.5, rho, S.theta_at(rho), P6.m);
  const auto base3 = Cylinder::one_sided(x3, 0.5, 0.2, 0.04);
  const double level3 = f3.at(x3, 0.5 - 0.02).norm();
  c.note("rescaling: x -> lambda x, u -> lambda^(-2/(1-m)) u maps the separable solution to itself; lambda = 1, 1/2, 1/4, 1/8");

  std::vector<Report> energy, gluing, poincare, revholder, thetab, supc, phi, degiorgi, sup, main_par, main_int;
  for (int j = 0; j < 4; ++j) {
    const double lam = std::pow(0.5, j);
    const auto Q = scaling_image(base6, lam, P6.m, o6);
    const double a = slice_mean(f6, Q.x, 0.75 * Q.ball_radius(), Q.t, [](const Value& v, double) { return v.u[0]; }, q).value;
    energy.push_back(check_energy(f6, Q, 0.75 * rho, {a}, q));
    gluing.push_back(check_gluing(f6, Q, q));
    poincare.push_back(check_poincare(f6, Q.x, Q.t, rho, Q.theta, 1.0, P6, q));
    revholder.push_back(check_revholder(f6, Q.x, Q.t, rho, Q.theta, 1.0, P6, q));
    thetab.push_back(check_theta_bound(f6, Q.x, Q.t, rho, Q.theta, P6, q));
    supc.push_back(check_supbound_centered(f6, Q, P6, q));
    const auto Q3 = scaling_image(base3, lam, P3.m, o3);
    phi.push_back(check_energy_phi(f3, Q3, PhiTestFn{1.5, 1e-6, 1e6, P3.m}, Cutoff{}, q));
    degiorgi.push_back(check_energy_degiorgi(f3, Q3, level3 * scaling_amplitude(lam, P3.m), Cutoff{}, q));
    sup.push_back(check_supbound(f3, Q3, 0.5, P3, q));
    main_par.push_back(check_main_estimate(f3, x3, 0.5, 0.1 * lam, 0.2, P3, q, MainGeometry::parabolic));
    main_int.push_back(check_main_estimate(f6, x6, 1.5, R * lam, 0.25, P6, q, MainGeometry::intrinsic));
  }
  const char* eq = "equation rescaling";
  stability(c, "energy", energy, eq);
  stability(c, "energy-moser-phi", phi, eq);
  stability(c, "energy-degiorgi", degiorgi, eq);
  stability(c, "gluing", gluing, eq);
  stability(c, "sobolev-poincare", poincare, eq);
  stability(c, "reverse-holder", revholder, eq);
  stability(c, "theta-bound", thetab, eq);
  stability(c, "sup-bound", sup, eq);
  stability(c, "sup-bound-centered", supc, eq);
  const char* sh = "R -> R/2 at a fixed point";
  stability(c, "main (parabolic)", main_par, sh);
  stability(c, "main (intrinsic)", main_int, sh);
  {
    std::string us;
    for (const auto& r : main_int) {
      char b[48];
      std::snprintf(b, sizeof b, " %.4g", r.params.value("U", std::nan("")));
      us += b;
    }
    c.note("main (intrinsic) level U per scale:" + us);
  }

  // Exact zero cases.
  auto zero = [&](const char* what, const Report& r) {
    c.item(r.lhs == 0.0 && r.ratio == 0.0, "zero case %-38s lhs %g ratio %g", what, r.lhs, r.ratio);
  };
  zero("energy, constant field", check_energy(constant_field(3, 2.5, 0.2), Cylinder::intrinsic({0, 0, 0}, 0.0, 0.5, 3.0, 0.2), 0.3, {2.5}, q));
  zero("gluing, time-independent field",
       check_gluing(gaussian_bump(3, 0.3, 1.0, 0.5, 0.4, {0, 0, 0}), Cylinder::intrinsic({0.1, 0, 0}, 0.0, 0.3, 2.0, 0.3), q));
  {
    const Params P{3, 0.2, 2.0, 3.0};
    const double cv = 50.0, r0 = 0.5;
    const double th = std::pow(std::pow(cv, P.r) / std::pow(r0, P.r / P.m), (1.0 + P.m) / (2.0 * P.r * P.m));
    zero("sobolev-poincare, constant field", check_poincare(constant_field(3, cv, P.m), {0, 0, 0}, 0.0, r0, th, 1.0, P, q));
  }
  {
    const double top = sup_norm(f3, base3).value;
    zero("energy-degiorgi, level above the sup", check_energy_degiorgi(f3, base3, 2.0 * top, Cutoff{}, q));
  }
  zero("main estimate, constant field",
       check_main_estimate(constant_field(3, 2.0, 0.2), {0, 0, 0}, 0.0, 0.5, 0.2, Params{3, 0.2, 2.0, 3.0}, q));
  {
    const auto pw = check_power_inequalities(1.0, 4096, 3);
    double worst = 0.0;
    for (const auto& r : pw) worst = std::max(worst, std::abs(r.lhs - 1.0));
    c.item(worst < 1e-12, "zero case power comparison at alpha = 1 (identity): max |constant - 1| %.2e", worst);
  }
}

void solver(Criterion& c) {
  const auto heat = solve(heat_problem(3, 0.5, 2.0, 400, 0.5), DtPolicy{.dt = 5e-4});
  const double he = l2_relative_error(heat, heat_exact(3));
  c.item(he < 1e-3, "heat (m=1) M=400: L2 relative error %.3e", he);
  const auto hc = convergence_order(heat_problem(3, 0.5, 2.0, 100, 0.5), heat_exact(3), DtPolicy{.dt = 2e-3});
  c.item(hc.order >= 1.7, "heat observed order %.4f (M = 100, 200, 400)", hc.order);
  const auto sol = ExactSolution::separable(3, 0.1, 1.0);
  const auto st = solve(exact_problem(sol, 0.5, 2.0, 400, 0.0, 0.5), DtPolicy{.dt = 5e-4});
  const double se = l2_relative_error(st, exact_profile(sol));
  c.item(se < 1e-2, "separable N=3 m=0.1 M=400: L2 relative error %.3e", se);
  const auto sc = convergence_order(exact_problem(sol, 0.5, 2.0, 100, 0.0, 0.5), exact_profile(sol), DtPolicy{.dt = 2e-3});
  c.item(sc.order >= 1.5, "separable observed order %.4f (M = 100, 200, 400)", sc.order);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(Criterion& c) {
  const fs::path root = fs::temp_directory_path() / ("fdl_acceptance_" + std::to_string(::getpid()));
  const fs::path cfg = fs::path(FDL_TEST_DATA) / "verify.json";
  std::vector<std::string> outputs;
  for (const char* tag : {"j1a", "j8a", "j1b", "j8b"}) {
    const fs::path out = root / tag;
    fs::create_directories(out);
    const std::string jobs = tag[1] == '1' ? "1" : "8";
    const std::string cmd = std::string(FDL_CLI_PATH) + " verify --config '" + cfg.string() + "' --out '" +
                            out.string() + "' --jobs " + jobs + " 2>/dev/null";
    const int st = std::system(cmd.c_str());
    const int code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    c.item(code == 0, "verify --jobs %s run %s exit %d", jobs.c_str(), tag, code);
    outputs.push_back(slurp(out / "verify.json") + slurp(out / "verify.csv"));
  }
  bool same = !outputs[0].empty();
  for (const auto& o : outputs) same = same && o == outputs[0];
  c.item(same, "verify.json and verify.csv byte-identical across 4 runs (%zu bytes)", outputs[0].size());
  fs::remove_all(root);
}

}  // namespace

int main() {
  run(1, "exponent calculus", 1.0, exponents);
  run(2, "sharpness reproduction", 120.0, sharpness);
  run(3, "exact-solution residuals", 0.0, residuals);
  run(4, "kosov forcing asymptotics", 0.0, asymptotics);
  run(5, "intrinsic cylinder system", 180.0, intrinsic_system);
  run(6, "vitali covering", 60.0, covering);
  run(7, "iteration lemmas", 0.0, iteration);
  run(8, "fubini identity", 0.0, fubini);
  run(9, "inequality checkers", 600.0, checkers);
  run(10, "radial solver", 0.0, solver);
  run(11, "determinism", 0.0, determinism);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
