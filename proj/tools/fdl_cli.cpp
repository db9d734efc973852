// Command-line frontend: reads one JSON config, runs a command, writes JSON/CSV reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fdl/fdl.hpp"

namespace fs = std::filesystem;
using namespace fdl;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kVerdict = 2, kUnmet = 3, kConfig = 4 };

struct ConfigError : std::runtime_error {
  std::vector<std::string> issues;
  explicit ConfigError(std::vector<std::string> v) : std::runtime_error("config error"), issues(std::move(v)) {}
};

// A runtime failure tagged with the anchor of the step that raised it.
struct AnchoredError : std::runtime_error {
  std::string anchor;
  AnchoredError(std::string a, const std::string& what) : std::runtime_error(what), anchor(std::move(a)) {}
};

// ---------------------------------------------------------------------------
// Schema-checked view of a JSON object. Every read marks the key as known;
// `done` reports the rest as unknown. Problems are collected with their paths.

class Node {
 public:
  Node(const Json* j, std::string path, std::vector<std::string>* errs) : j_(j), path_(std::move(path)), errs_(errs) {
    if (j_ && !j_->is_object()) {
      fail(path_, "expected an object");
      j_ = nullptr;
    }
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& k) {
    seen_.insert(k);
    return j_ && j_->contains(k);
  }

  double num(const std::string& k, std::optional<double> def = std::nullopt) {
    const Json* v = get(k, !def);
    if (!v) return def.value_or(0.0);
    if (!v->is_number()) return fail(at(k), "expected a number"), 0.0;
    return v->get<double>();
  }
  long integer(const std::string& k, std::optional<long> def = std::nullopt) {
    const Json* v = get(k, !def);
    if (!v) return def.value_or(0);
    if (!v->is_number_integer()) return fail(at(k), "expected an integer"), 0;
    return v->get<long>();
  }
  std::uint64_t u64(const std::string& k) {
    const Json* v = get(k, true);
    if (!v) return 0;
    if (!v->is_number_unsigned()) return fail(at(k), "expected a non-negative integer"), 0;
    return v->get<std::uint64_t>();
  }
  bool flag(const std::string& k, bool def) {
    const Json* v = get(k, false);
    if (!v) return def;
    if (!v->is_boolean()) return fail(at(k), "expected true or false"), def;
    return v->get<bool>();
  }
  std::string str(const std::string& k, std::optional<std::string> def = std::nullopt) {
    const Json* v = get(k, !def);
    if (!v) return def.value_or("");
    if (!v->is_string()) return fail(at(k), "expected a string"), "";
    return v->get<std::string>();
  }
  std::vector<double> vec(const std::string& k, std::optional<std::size_t> size = std::nullopt) {
    const Json* v = get(k, true);
    std::vector<double> out;
    if (!v) return out;
    if (!v->is_array()) return fail(at(k), "expected an array of numbers"), out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) {
        fail(at(k) + "/" + std::to_string(i), "expected a number");
        continue;
      }
      out.push_back((*v)[i].get<double>());
    }
    if (size && out.size() != *size)
      fail(at(k), "expected " + std::to_string(*size) + " entries, got " + std::to_string(out.size()));
    return out;
  }
  Node child(const std::string& k, bool required = true) { return Node(get(k, required), at(k), errs_); }
  std::vector<Node> list(const std::string& k) {
    const Json* v = get(k, true);
    std::vector<Node> out;
    if (!v) return out;
    if (!v->is_array()) return fail(at(k), "expected an array"), out;
    for (std::size_t i = 0; i < v->size(); ++i) out.emplace_back(&(*v)[i], at(k) + "/" + std::to_string(i), errs_);
    return out;
  }
  const Json* raw(const std::string& k) { return get(k, false); }
  bool present() const { return j_ != nullptr; }

  void done() {
    if (!j_) return;
    for (const auto& [k, v] : j_->items())
      if (!seen_.count(k)) fail(at(k), "unknown key");
  }
  void fail(const std::string& p, const std::string& msg) { errs_->push_back((p.empty() ? "/" : p) + ": " + msg); }
  void check(bool ok, const std::string& k, const std::string& msg) {
    if (!ok) fail(at(k), msg);
  }

 private:
  std::string at(const std::string& k) const { return path_ + "/" + k; }
  const Json* get(const std::string& k, bool required) {
    seen_.insert(k);
    if (!j_) return nullptr;
    auto it = j_->find(k);
    if (it == j_->end()) {
      if (required) fail(at(k), "required key missing");
      return nullptr;
    }
    return &*it;
  }

  const Json* j_;
  std::string path_;
  std::vector<std::string>* errs_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Shared config pieces.

struct Common {
  std::optional<std::uint64_t> seed;
  fs::path base;  // directory of the config file
  fs::path out;
  int jobs = 1;
  bool fatal_unmet = false;
};

Params read_params(Node n) {
  Params P;
  P.N = int(n.integer("N"));
  P.m = n.num("m");
  P.r = n.num("r", 2.0);
  P.p = n.num("p", 3.0);
  n.done();
  return P;
}

QuadratureSpec read_quadrature(Node n, const Common& c) {
  QuadratureSpec q;
  if (n.present()) {
    q.time_order = int(n.integer("time_order", q.time_order));
    q.time_panels = int(n.integer("time_panels", q.time_panels));
    q.rel_tol = n.num("rel_tol", q.rel_tol);
    q.max_depth = int(n.integer("max_depth", q.max_depth));
    q.r_min = n.num("r_min", q.r_min);
    q.grading = n.num("grading", q.grading);
    q.angular_order = int(n.integer("angular_order", q.angular_order));
    q.monte_carlo = n.flag("monte_carlo", false);
    q.mc_samples = std::uint64_t(n.integer("mc_samples", long(q.mc_samples)));
    if (q.monte_carlo && !c.seed) n.fail(n.path() + "/monte_carlo", "Monte Carlo quadrature requires a seed");
    n.done();
  }
  q.seed = c.seed;
  return q;
}

ExactSolution read_solution(Node n) {
  const std::string kind = n.str("kind");
  ExactSolution s;
  try {
    if (kind == "separable") {
      s = ExactSolution::separable(int(n.integer("N")), n.num("m"), n.num("T", 1.0));
    } else if (kind == "king_kosov") {
      s = ExactSolution::king_kosov(int(n.integer("N")), n.num("m"), n.num("T", 1.0), n.num("A"));
    } else if (kind == "kosov_critical") {
      s = ExactSolution::kosov_critical(int(n.integer("N")), n.num("T", 1.0));
    } else {
      n.fail(n.path() + "/kind", "unknown solution '" + kind + "'");
    }
  } catch (const DomainError& e) {
    n.fail(n.path(), e.what());
  }
  n.done();
  return s;
}

Field read_field(Node n, const Common& c) {
  const std::string kind = n.str("kind");
  auto center = [&](int N) {
    if (!n.has("center")) return std::vector<double>(std::size_t(std::max(N, 0)), 0.0);
    return n.vec("center", std::size_t(N));
  };
  Field f;
  try {
    if (kind == "separable" || kind == "king_kosov" || kind == "kosov_critical") {
      ExactSolution s;
      const int N = int(n.integer("N"));
      if (kind == "separable") s = ExactSolution::separable(N, n.num("m"), n.num("T", 1.0));
      if (kind == "king_kosov") s = ExactSolution::king_kosov(N, n.num("m"), n.num("T", 1.0), n.num("A"));
      if (kind == "kosov_critical") s = ExactSolution::kosov_critical(N, n.num("T", 1.0));
      f = to_field(s, center(N));
    } else if (kind == "constant") {
      const int N = int(n.integer("N"));
      const Json* v = n.raw("value");
      std::vector<double> val;
      if (v && v->is_number()) val = {v->get<double>()};
      else val = n.vec("value");
      f = constant_field(N, val, n.num("m", 1.0));
    } else if (kind == "diagonal_pair") {
      const int N = int(n.integer("N"));
      f = diagonal_pair(N, n.num("m"), n.num("T1"), n.num("T2"), center(N));
    } else if (kind == "linear") {
      f = linear_field(int(n.integer("N")), n.num("m", 1.0));
    } else if (kind == "time_linear") {
      const int N = int(n.integer("N"));
      f = time_linear_field(N, center(N));
    } else if (kind == "gaussian_bump") {
      const int N = int(n.integer("N"));
      f = gaussian_bump(N, n.num("m"), n.num("c0"), n.num("c1"), n.num("w"), center(N));
    } else if (kind == "exponential_spike") {
      const int N = int(n.integer("N"));
      f = exponential_spike(N, n.num("m"), n.num("A"), n.num("w"), center(N));
    } else if (kind == "trajectory") {
      const fs::path p = c.base / n.str("path");
      std::ifstream in(p);
      if (!in) {
        n.fail(n.path() + "/path", "cannot open '" + p.string() + "'");
      } else {
        f = to_field(read_csv(in), "trajectory:" + p.filename().string());
      }
    } else {
      n.fail(n.path() + "/kind", "unknown field '" + kind + "'");
    }
  } catch (const DomainError& e) {
    n.fail(n.path(), e.what());
  }
  n.done();
  return f;
}

Cylinder read_cylinder(Node n, double m) {
  const std::string kind = n.str("kind");
  const auto x = n.vec("x");
  const double t = n.num("t");
  Cylinder c;
  try {
    if (kind == "intrinsic") {
      c = Cylinder::intrinsic(x, t, n.num("rho"), n.num("theta", 1.0), m);
    } else if (kind == "one_sided") {
      c = Cylinder::one_sided(x, t, n.num("R"), n.num("S"));
    } else if (kind == "parabolic") {
      c = Cylinder::parabolic(x, t, n.num("R"));
    } else {
      n.fail(n.path() + "/kind", "unknown cylinder '" + kind + "'");
    }
  } catch (const DomainError& e) {
    n.fail(n.path(), e.what());
  }
  n.done();
  return c;
}

Cutoff read_cutoff(Node n) {
  Cutoff z;
  if (!n.present()) return z;
  z.inner = n.num("inner", z.inner);
  z.ramp = n.num("ramp", z.ramp);
  n.done();
  return z;
}

void throw_if(const std::vector<std::string>& errs) {
  if (!errs.empty()) throw ConfigError(errs);
}

// ---------------------------------------------------------------------------
// Output.

void write_text(const Common& c, const std::string& name, const std::string& text) {
  fs::create_directories(c.out);
  std::ofstream os(c.out / name, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write '" + (c.out / name).string() + "'");
}

void write_json(const Common& c, const std::string& name, const Json& j) { write_text(c, name, j.dump(2) + "\n"); }

Json num(double v) { return detail::number_or_null(v); }

// ---------------------------------------------------------------------------
// Commands.

int cmd_exponents(Node root, const Common& c, std::vector<std::string>& errs) {
  std::vector<Params> grid;
  if (root.has("grid")) {
    for (auto& n : root.list("grid")) grid.push_back(read_params(n));
  } else {
    grid.push_back(read_params(root.child("params")));
  }
  root.done();
  throw_if(errs);
  Json rows = Json::array();
  std::string csv = "N,m,r,p,admissible,m_c,lambda_r,d,q,kappa,eps_o\n";
  auto cell = [](const Json& v) { return v.is_null() ? std::string() : v.is_boolean() ? (v.get<bool>() ? "true" : "false") : format_double(v.get<double>()); };
  for (const auto& P : grid) {
    Json r;
    r["N"] = P.N;
    r["m"] = P.m;
    r["r"] = P.r;
    r["p"] = P.p;
    r["admissible"] = P.admissible();
    r["m_c"] = critical_m(P.N);
    r["lambda_r"] = lambda_r(P);
    r["d"] = P.positive_lambda() ? num(scaling_deficit(P)) : Json(nullptr);
    r["q"] = P.positive_lambda() ? num(q_exponent(P)) : Json(nullptr);
    r["kappa"] = kappa(P.N);
    Json eo = nullptr;
    try {
      eo = eps_o_separable(P.N, P.m) + 0.0;  // no negative zero
    } catch (const DomainError&) {
    }
    r["eps_o"] = eo;
    csv += std::to_string(P.N) + "," + format_double(P.m) + "," + format_double(P.r) + "," + format_double(P.p) + "," +
           cell(r["admissible"]) + "," + cell(r["m_c"]) + "," + cell(r["lambda_r"]) + "," + cell(r["d"]) + "," +
           cell(r["q"]) + "," + cell(r["kappa"]) + "," + cell(r["eps_o"]) + "\n";
    rows.push_back(r);
  }
  write_json(c, "exponents.json", rows);
  write_text(c, "exponents.csv", csv);
  return kOk;
}

int cmd_solution(Node root, const Common& c, std::vector<std::string>& errs) {
  const auto sol = read_solution(root.child("solution"));
  const double h = root.num("h", 1e-3);
  const double tol = root.num("tolerance", 1e-4);
  struct Pt {
    std::vector<double> x;
    double t;
  };
  std::vector<Pt> pts;
  for (auto& n : root.list("points")) {
    Pt p{n.vec("x", std::size_t(sol.N)), n.num("t")};
    n.done();
    pts.push_back(p);
  }
  std::vector<double> radii;
  double t_asym = 0.0;
  if (root.has("asymptotic_radii")) {
    radii = root.vec("asymptotic_radii");
    t_asym = root.num("asymptotic_time");
    root.check(sol.kind == SolutionKind::kosov_critical, "asymptotic_radii", "only defined for kosov_critical");
  }
  const double band = root.num("asymptotic_band", 0.1);
  root.done();
  throw_if(errs);
  Json out;
  out["solution"] = {{"kind", to_string(sol.kind)}, {"N", sol.N}, {"m", sol.m}, {"T", sol.T}, {"A", sol.A}};
  out["anchor"] = "exact-solutions";
  bool pass = true;
  Json res = Json::array();
  double worst = 0.0;
  for (const auto& p : pts) {
    double r;
    try {
      r = residual(sol, p.x, p.t, h);
    } catch (const DomainError& e) {
      throw AnchoredError("exact-solutions", e.what());
    }
    worst = std::max(worst, std::abs(r));
    res.push_back({{"x", p.x}, {"t", p.t}, {"u", num(eval(sol, p.x, p.t))}, {"residual", num(r)}});
  }
  out["h"] = h;
  out["tolerance"] = tol;
  out["residuals"] = res;
  out["max_abs_residual"] = num(worst);
  pass = pass && worst < tol;
  Json asym = Json::array();
  for (double r : radii) {
    const double g = kosov_G(sol, r, t_asym), ga = kosov_G_asymptotic(sol, r, t_asym);
    const double ratio = g / ga;
    asym.push_back({{"r", r}, {"t", t_asym}, {"G", num(g)}, {"G_asymptotic", num(ga)}, {"ratio", num(ratio)}});
    pass = pass && std::abs(ratio - 1.0) <= band;
  }
  if (!radii.empty()) out["asymptotics"] = asym;
  out["pass"] = pass;
  write_json(c, "solution.json", out);
  return pass ? kOk : kVerdict;
}

int cmd_probe(Node root, const Common& c, std::vector<std::string>& errs) {
  const auto sol = read_solution(root.child("solution"));
  ProbeOptions o;
  o.j_start = int(root.integer("j_start", o.j_start));
  o.annuli = int(root.integer("annuli", o.annuli));
  if (root.has("t_window")) {
    const auto w = root.vec("t_window", 2);
    if (w.size() == 2) o.t_lo = w[0], o.t_hi = w[1];
  }
  if (root.has("s_grid")) o.s_grid = root.vec("s_grid");
  std::optional<double> expected;
  if (root.has("expected_eps")) expected = root.num("expected_eps");
  const double tol = root.num("tolerance", 0.05);
  root.check(o.annuli >= 10, "annuli", "at least 10 annuli required");
  root.done();
  throw_if(errs);
  ProbeResult p;
  try {
    p = probe_integrability(sol, o);
  } catch (const std::exception& e) {
    throw AnchoredError("integrability-probe", e.what());
  }
  Json out = to_json(p);
  out["anchor"] = "integrability-probe";
  out["solution"] = {{"kind", to_string(sol.kind)}, {"N", sol.N}, {"m", sol.m}, {"T", sol.T}};
  out["j_start"] = o.j_start;
  out["annuli"] = o.annuli;
  bool pass = p.reliable;
  if (expected) {
    out["expected_eps"] = *expected;
    const bool near = std::abs(p.critical_eps - *expected) <= tol * std::max(std::abs(*expected), 1e-300) ||
                      (*expected == 0.0 && std::abs(p.critical_eps) <= tol);
    out["within_tolerance"] = near;
    pass = pass && near;
  }
  Json rates = Json::array();
  for (std::size_t i = 0; i < p.s_grid.size(); ++i)
    rates.push_back({{"s", p.s_grid[i]}, {"slope", num(p.slopes[i])}, {"r2", num(p.r2[i])}});
  out["rates"] = rates;
  out["pass"] = pass;
  write_json(c, "probe.json", out);
  std::string csv = "s,slope,r2\n";
  for (std::size_t i = 0; i < p.s_grid.size(); ++i)
    csv += format_double(p.s_grid[i]) + "," + format_double(p.slopes[i]) + "," + format_double(p.r2[i]) + "\n";
  write_text(c, "probe.csv", csv);
  return pass ? kOk : kVerdict;
}

int cmd_cylinders(Node root, const Common& c, std::vector<std::string>& errs) {
  const Params P = read_params(root.child("params"));
  const auto q = read_quadrature(root.child("quadrature", false), c);
  const Field f = read_field(root.child("field"), c);
  const auto x = root.vec("x", std::size_t(P.N));
  const double t = root.num("t");
  const double R = root.num("R");
  std::optional<double> lo;
  if (root.has("lambda_o")) lo = root.num("lambda_o");
  Node g = root.child("grid", false);
  const double rho_min = g.present() ? g.num("rho_min") : R / 10.0;
  const int per = g.present() ? int(g.integer("per_decade", 64)) : 64;
  g.done();
  root.done();
  throw_if(errs);
  ThetaSystem S;
  double lam = 0.0;
  try {
    lam = lo ? *lo : lambda_o_of(f, Cylinder::intrinsic(x, t, 4.0 * R, 1.0, P.m), P, q).value;
    ThetaOptions opt;
    opt.jobs = c.jobs;
    S = build_theta_system(f, x, t, R, lam, P, radius_grid(R, rho_min, per), q, opt);
  } catch (const std::exception& e) {
    throw AnchoredError("theta-system", e.what());
  }
  write_text(c, "cylinders.csv", to_csv(S));
  Json out;
  out["anchor"] = "theta-system";
  out["params"] = params_json(P);
  out["field"] = f.label;
  out["x"] = x;
  out["t"] = t;
  out["R"] = R;
  out["lambda_o"] = lam;
  out["radii"] = S.radii.size();
  out["verdicts"] = verdicts_json(S.verdicts);
  out["pass"] = S.passed();
  write_json(c, "cylinders.json", out);
  return S.passed() ? kOk : kVerdict;
}

int cmd_cover(Node root, const Common& c, std::vector<std::string>& errs) {
  Json out;
  out["anchor"] = "vitali-covering";
  bool pass = true;
  if (root.has("candidates")) {
    const double R = root.num("R");
    const double m = root.num("m");
    const double chat = root.num("c_hat");
    std::vector<CoverCandidate> cands;
    for (auto& n : root.list("candidates")) {
      CoverCandidate k{n.vec("x"), n.num("t"), n.num("r"), n.num("theta", 1.0)};
      n.done();
      cands.push_back(k);
    }
    root.done();
    throw_if(errs);
    CoverFamily F;
    try {
      F = vitali_cover(cands, R, chat, m);
    } catch (const std::exception& e) {
      throw AnchoredError("vitali-covering", e.what());
    }
    out["family"] = to_json(F);
    pass = F.disjoint && F.contained;
  } else {
    const Params P = read_params(root.child("params"));
    const int families = int(root.integer("families", 200));
    const auto counts = root.has("count") ? root.vec("count", 2) : std::vector<double>{10, 40};
    const double top = root.num("top", 1.0);
    const double value = root.num("constant", 1e-4);
    const std::string mode = root.str("mode", "both");
    const double test_chat = root.num("c_hat_test", 20.0);
    root.check(mode == "test" || mode == "proof" || mode == "both", "mode", "expected test, proof or both");
    if (!c.seed) root.fail(root.path() + "/seed", "random families require a seed");
    root.done();
    throw_if(errs);
    std::vector<double> chats;
    if (mode != "proof") chats.push_back(test_chat);
    if (mode != "test") chats.push_back(c_hat(P));
    const double R = *std::max_element(chats.begin(), chats.end()) * top;
    ThetaSystem S;
    try {
      const auto f = constant_field(P.N, value, P.m);
      S = build_theta_system(f, std::vector<double>(std::size_t(P.N), 0.0), 0.0, R, 1.0, P,
                             radius_grid(R, top / 32, 4), QuadratureSpec{}, {});
    } catch (const std::exception& e) {
      throw AnchoredError("vitali-covering", e.what());
    }
    const CounterRng rng{*c.seed, 0xc0e5};
    std::vector<Json> rows(std::size_t(families) * chats.size());
    std::vector<char> ok(rows.size(), 1);
    parallel_for(std::size_t(families), c.jobs, [&](std::size_t fam) {
      const int lo = int(counts[0]), hi = int(counts[1]);
      const int n = lo + int(rng.uniform(0xffff0000ULL + fam) * (hi - lo + 1));
      const auto cands = random_cover_family(S, top, std::min(n, hi), rng, fam);
      for (std::size_t k = 0; k < chats.size(); ++k) {
        const auto F = vitali_cover(cands, R, chats[k], P.m);
        const std::size_t idx = fam * chats.size() + k;
        ok[idx] = F.disjoint && F.contained;
        rows[idx] = {{"family", fam},        {"c_hat", chats[k]},      {"candidates", cands.size()},
                     {"selected", F.selected.size()}, {"disjoint", F.disjoint}, {"contained", F.contained}};
      }
    });
    out["params"] = params_json(P);
    out["R"] = R;
    out["families"] = families;
    out["c_hat"] = chats;
    out["seed"] = *c.seed;
    out["results"] = rows;
    for (char v : ok) pass = pass && v;
  }
  out["pass"] = pass;
  write_json(c, "cover.json", out);
  return pass ? kOk : kVerdict;
}

// One configured checker: parsed eagerly, run later in the pool.
struct CheckJob {
  std::string name;
  std::string anchor;
  std::optional<double> max_ratio;
  std::function<std::vector<Report>()> run;
};

const std::map<std::string, std::string>& check_anchors() {
  static const std::map<std::string, std::string> a{
      {"energy", "energy-caccioppoli"},     {"energy-phi", "energy-moser-phi"},
      {"energy-degiorgi", "energy-degiorgi"}, {"gluing", "gluing"},
      {"poincare", "sobolev-poincare"},     {"revholder", "reverse-holder"},
      {"theta-bound", "theta-bound"},       {"supbound", "sup-bound"},
      {"supbound-centered", "sup-bound-centered"}, {"main", "higher-integrability"},
      {"fubini", "fubini-truncation"},      {"power-ineq", "power-comparison"}};
  return a;
}

CheckJob read_check(Node n, const Field& f, const Params& P, const QuadratureSpec& q, const Common& c) {
  CheckJob job;
  job.name = n.str("check");
  const auto& anchors = check_anchors();
  auto it = anchors.find(job.name);
  if (it == anchors.end()) {
    n.fail(n.path() + "/check", "unknown check '" + job.name + "'");
    n.done();
    return job;
  }
  job.anchor = it->second;
  if (n.has("max_ratio")) job.max_ratio = n.num("max_ratio");
  const std::string& k = job.name;
  const double m = f.m;
  auto one = [](Report r) { return std::vector<Report>{std::move(r)}; };
  if (k == "energy") {
    const auto Q = read_cylinder(n.child("cylinder"), m);
    const double rin = n.num("r_in");
    std::vector<double> a;
    const Json* av = n.raw("a");
    const bool slice = av && av->is_string();
    if (slice) n.check(av->get<std::string>() == "slice-mean", "a", "expected an array or \"slice-mean\"");
    else a = n.vec("a");
    job.run = [=, &f] {
      auto aa = a;
      if (slice) {
        aa.assign(std::size_t(f.k), 0.0);
        for (int i = 0; i < f.k; ++i)
          aa[i] = slice_mean(f, Q.x, Q.space_factor() * rin, Q.t, [i](const Value& v, double) { return v.u[i]; }, q).value;
      }
      return one(check_energy(f, Q, rin, aa, q));
    };
  } else if (k == "energy-phi") {
    const auto Q = read_cylinder(n.child("cylinder"), m);
    const PhiTestFn fn{n.num("alpha"), n.num("k"), n.num("ell"), m};
    const auto z = read_cutoff(n.child("cutoff", false));
    job.run = [=, &f] { return one(check_energy_phi(f, Q, fn, z, q)); };
  } else if (k == "energy-degiorgi") {
    const auto Q = read_cylinder(n.child("cylinder"), m);
    const double lev = n.num("k");
    const auto z = read_cutoff(n.child("cutoff", false));
    job.run = [=, &f] { return one(check_energy_degiorgi(f, Q, lev, z, q)); };
  } else if (k == "gluing") {
    const auto Q = read_cylinder(n.child("cylinder"), m);
    job.run = [=, &f] { return one(check_gluing(f, Q, q)); };
  } else if (k == "poincare" || k == "revholder" || k == "theta-bound") {
    const auto x = n.vec("x", std::size_t(P.N));
    const double t = n.num("t"), rho = n.num("rho"), th = n.num("theta"), K = n.num("K", 1.0);
    job.run = [=, &f] {
      if (k == "poincare") return one(check_poincare(f, x, t, rho, th, K, P, q));
      if (k == "revholder") return one(check_revholder(f, x, t, rho, th, K, P, q));
      return one(check_theta_bound(f, x, t, rho, th, P, q));
    };
  } else if (k == "supbound") {
    const auto Q = read_cylinder(n.child("cylinder"), m);
    const double sigma = n.num("sigma", 0.5);
    job.run = [=, &f] { return one(check_supbound(f, Q, sigma, P, q)); };
  } else if (k == "supbound-centered") {
    const auto Q = read_cylinder(n.child("cylinder"), m);
    job.run = [=, &f] { return one(check_supbound_centered(f, Q, P, q)); };
  } else if (k == "main") {
    const auto x = n.vec("x", std::size_t(P.N));
    const double t = n.num("t"), R = n.num("R"), eps = n.num("eps");
    const std::string g = n.str("geometry", "intrinsic");
    n.check(g == "intrinsic" || g == "parabolic", "geometry", "expected intrinsic or parabolic");
    const auto geom = g == "parabolic" ? MainGeometry::parabolic : MainGeometry::intrinsic;
    if (geom == MainGeometry::parabolic) job.anchor = "higher-integrability-parabolic";
    job.run = [=, &f] { return one(check_main_estimate(f, x, t, R, eps, P, q, geom)); };
  } else if (k == "fubini") {
    const auto Q = read_cylinder(n.child("cylinder"), m);
    const double lev = n.num("k"), l1 = n.num("lambda_1"), eps = n.num("eps");
    job.run = [=, &f] { return one(fubini_identity_check(f, Q, lev, l1, eps, q_exponent(P), q)); };
  } else if (k == "power-ineq") {
    const double alpha = n.num("alpha");
    const auto samples = std::uint64_t(n.integer("samples", 10000));
    const double p = n.num("p", 2.0);
    const int dim = int(n.integer("dim", 3));
    if (!c.seed) n.fail(n.path(), "power-ineq samples random vectors and requires a seed");
    const std::uint64_t seed = c.seed.value_or(0);
    job.run = [=] { return check_power_inequalities(alpha, samples, seed, p, dim); };
  }
  n.done();
  return job;
}

int cmd_verify(Node root, const Common& c, std::vector<std::string>& errs) {
  const Params P = read_params(root.child("params"));
  const auto q = read_quadrature(root.child("quadrature", false), c);
  const Field f = read_field(root.child("field"), c);
  std::vector<CheckJob> jobs;
  for (auto& n : root.list("checks")) jobs.push_back(read_check(n, f, P, q, c));
  root.done();
  throw_if(errs);
  std::vector<std::vector<Report>> results(jobs.size());
  std::vector<std::string> failures(jobs.size());
  parallel_for(jobs.size(), c.jobs, [&](std::size_t i) {
    try {
      results[i] = jobs[i].run();
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < jobs.size(); ++i)
    if (!failures[i].empty()) throw AnchoredError(jobs[i].anchor, failures[i]);
  Json arr = Json::array();
  std::vector<Report> flat;
  bool verdict_fail = false, unmet = false;
  for (std::size_t i = 0; i < jobs.size(); ++i)
    for (auto& r : results[i]) {
      if (!r.seed && c.seed && q.monte_carlo) r.seed = c.seed;
      if (jobs[i].max_ratio && r.status == Status::ok && !(r.ratio <= *jobs[i].max_ratio)) verdict_fail = true;
      if (r.status == Status::precondition_unmet) unmet = true;
      arr.push_back(to_json(r));
      flat.push_back(r);
    }
  write_json(c, "verify.json", arr);
  write_text(c, "verify.csv", to_csv(flat));
  if (verdict_fail) return kVerdict;
  if (unmet && c.fatal_unmet) return kUnmet;
  return kOk;
}

int cmd_solve(Node root, const Common& c, std::vector<std::string>& errs) {
  Node pn = root.child("problem");
  const std::string kind = pn.str("kind");
  RadialProblem prob;
  std::function<double(double, double)> exact;
  const double r_in = pn.num("r_in", 0.5), r_out = pn.num("r_out", 2.0);
  const int M = int(pn.integer("M", 400));
  if (kind == "heat") {
    const int N = int(pn.integer("N", 3));
    const double shift = pn.num("t_shift", 0.25);
    prob = heat_problem(N, r_in, r_out, M, pn.num("t_end", 0.5), shift);
    exact = heat_exact(N, shift);
  } else if (kind == "exact") {
    const auto sol = read_solution(pn.child("solution"));
    prob = exact_problem(sol, r_in, r_out, M, pn.num("t0", 0.0), pn.num("t_end", 0.5));
    exact = exact_profile(sol);
  } else {
    pn.fail(pn.path() + "/kind", "expected heat or exact");
  }
  pn.done();
  DtPolicy pol;
  pol.dt = root.num("dt", 1e-3);
  pol.cfl = root.num("cfl", 0.0);
  pol.snapshots = int(root.integer("snapshots", 100));
  const int refinements = int(root.integer("refinements", 3));
  Node tol = root.child("tolerance", false);
  std::optional<double> max_err, min_order;
  if (tol.present()) {
    if (tol.has("error")) max_err = tol.num("error");
    if (tol.has("order")) min_order = tol.num("order");
    tol.done();
  }
  root.check(refinements >= 2, "refinements", "at least two refinements required");
  root.done();
  throw_if(errs);
  Trajectory tr;
  ConvergenceResult conv;
  double err = 0.0;
  try {
    tr = solve(prob, pol);
    err = l2_relative_error(tr, exact);
    RadialProblem coarse = prob;
    coarse.M = std::max(2, prob.M / (1 << (refinements - 1)));
    DtPolicy cp = pol;
    cp.dt = pol.dt * double(prob.M) / coarse.M;
    conv = convergence_order(coarse, exact, cp, refinements);
  } catch (const StepFailure& e) {
    throw AnchoredError("radial-solver", std::string(e.what()) + " at t=" + format_double(e.t) +
                                             " dt=" + format_double(e.dt) + " min_u=" + format_double(e.min_u) +
                                             " max_diffusivity=" + format_double(e.max_diffusivity));
  } catch (const std::exception& e) {
    throw AnchoredError("radial-solver", e.what());
  }
  std::ostringstream os;
  write_csv(os, tr);
  write_text(c, "solve.csv", os.str());
  bool pass = true;
  if (max_err) pass = pass && err < *max_err;
  if (min_order) pass = pass && (conv.exact || conv.order >= *min_order);
  Json out;
  out["anchor"] = "radial-solver";
  out["problem"] = kind;
  out["N"] = prob.N;
  out["m"] = prob.m;
  out["M"] = prob.M;
  out["dt"] = pol.dt;
  out["steps"] = tr.steps;
  out["halvings"] = tr.halvings;
  out["l2_relative_error"] = num(err);
  out["convergence"] = to_json(conv);
  out["pass"] = pass;
  write_json(c, "solve.json", out);
  return pass ? kOk : kVerdict;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical laboratory for singular porous-medium higher integrability"};
  app.require_subcommand(1);
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool fatal_unmet = false;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"exponents", "table of exponent values for a parameter grid"},
      {"solution", "PDE residuals and asymptotics of an exact solution"},
      {"probe", "critical integrability gain over dyadic annuli"},
      {"cylinders", "theta system on a radius grid with its verdicts"},
      {"cover", "Vitali covering with brute-force verification"},
      {"verify", "batch of inequality checkers"},
      {"solve", "radial finite-difference solve with convergence study"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON configuration file")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--fatal-unmet", fatal_unmet, "exit 3 when a precondition is unmet");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  Json doc;
  {
    std::ifstream in(config);
    if (!in) {
      std::cerr << "fdl: config error:\n  cannot open '" << config << "'\n";
      return kConfig;
    }
    try {
      doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
      std::cerr << "fdl: config error:\n  " << e.what() << "\n";
      return kConfig;
    }
  }

  std::vector<std::string> errs;
  Common c;
  c.base = fs::path(config).parent_path();
  c.out = out;
  c.jobs = jobs;
  c.fatal_unmet = fatal_unmet;
  Node root(&doc, "", &errs);
  if (root.has("command")) {
    const std::string declared = root.str("command");
    if (declared != command) root.fail("/command", "config is for '" + declared + "', not '" + command + "'");
  }
  if (root.has("seed")) c.seed = root.u64("seed");
  if (seed) c.seed = seed;

  try {
    int code = kOk;
    if (command == "exponents") code = cmd_exponents(root, c, errs);
    else if (command == "solution") code = cmd_solution(root, c, errs);
    else if (command == "probe") code = cmd_probe(root, c, errs);
    else if (command == "cylinders") code = cmd_cylinders(root, c, errs);
    else if (command == "cover") code = cmd_cover(root, c, errs);
    else if (command == "verify") code = cmd_verify(root, c, errs);
    else if (command == "solve") code = cmd_solve(root, c, errs);
    if (!errs.empty()) throw ConfigError(errs);
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "fdl: config error:\n";
    for (const auto& s : e.issues) std::cerr << "  " << s << "\n";
    return kConfig;
  } catch (const AnchoredError& e) {
    std::cerr << "fdl: " << e.anchor << ": " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "fdl: " << command << ": " << e.what() << "\n";
    return kRuntime;
  }
}
