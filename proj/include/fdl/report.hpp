#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdl/exponents.hpp"

namespace fdl {

using Json = nlohmann::ordered_json;

// A required hypothesis of a check does not hold for the given input.
struct PreconditionUnmet : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The requested quantity does not exist for the given input.
struct NotApplicable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A quadrature diverged where a finite value was required.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Status { ok, divergent, unbounded, precondition_unmet, not_applicable };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::divergent: return "divergent";
    case Status::unbounded: return "unbounded";
    case Status::precondition_unmet: return "precondition-unmet";
    default: return "not-applicable";
  }
}

inline Status status_from_string(const std::string& s) {
  for (Status v : {Status::ok, Status::divergent, Status::unbounded, Status::precondition_unmet, Status::not_applicable})
    if (s == to_string(v)) return v;
  throw DomainError("unknown status '" + s + "'");
}

// One checker result: both sides, their ratio, and how they were obtained.
struct Report {
  std::string check;
  std::string anchor;
  Json params = Json::object();
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  std::string branch;
  std::optional<std::uint64_t> seed;
  double quadrature_error = 0.0;
  Status status = Status::ok;
  std::string note;

  // 0/0 reads as 0: both sides vanish identically.
  void set_sides(double l, double r) {
    lhs = l;
    rhs = r;
    if (l == 0.0) {
      ratio = 0.0;
    } else if (r == 0.0) {
      ratio = std::numeric_limits<double>::infinity();
    } else {
      ratio = l / r;
    }
  }
  bool finite() const { return status == Status::ok && std::isfinite(ratio); }
};

namespace detail {
inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
inline double number_from(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}
}  // namespace detail

inline Json to_json(const Report& r) {
  Json j;
  j["check"] = r.check;
  j["anchor"] = r.anchor;
  j["params"] = r.params;
  j["lhs"] = detail::number_or_null(r.lhs);
  j["rhs"] = detail::number_or_null(r.rhs);
  j["ratio"] = detail::number_or_null(r.ratio);
  j["branch"] = r.branch;
  j["seed"] = r.seed ? Json(*r.seed) : Json(nullptr);
  j["quadrature_error"] = detail::number_or_null(r.quadrature_error);
  j["status"] = to_string(r.status);
  j["note"] = r.note;
  return j;
}

inline Report report_from_json(const Json& j) {
  Report r;
  r.check = j.at("check").get<std::string>();
  r.anchor = j.at("anchor").get<std::string>();
  r.params = j.at("params");
  r.lhs = detail::number_from(j.at("lhs"));
  r.rhs = detail::number_from(j.at("rhs"));
  r.ratio = detail::number_from(j.at("ratio"));
  r.branch = j.at("branch").get<std::string>();
  if (!j.at("seed").is_null()) r.seed = j.at("seed").get<std::uint64_t>();
  r.quadrature_error = detail::number_from(j.at("quadrature_error"));
  r.status = status_from_string(j.at("status").get<std::string>());
  r.note = j.at("note").get<std::string>();
  return r;
}

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline const char* report_csv_header() { return "check,anchor,lhs,rhs,ratio,branch,status,quadrature_error,seed\n"; }

inline std::string to_csv_row(const Report& r) {
  std::ostringstream os;
  os << csv_escape(r.check) << ',' << csv_escape(r.anchor) << ',' << format_double(r.lhs) << ','
     << format_double(r.rhs) << ',' << format_double(r.ratio) << ',' << csv_escape(r.branch) << ','
     << to_string(r.status) << ',' << format_double(r.quadrature_error) << ',' << (r.seed ? std::to_string(*r.seed) : "")
     << '\n';
  return os.str();
}

inline std::string to_csv(const std::vector<Report>& rs) {
  std::string out = report_csv_header();
  for (const auto& r : rs) out += to_csv_row(r);
  return out;
}

inline Json params_json(const Params& P) { return Json{{"N", P.N}, {"m", P.m}, {"r", P.r}, {"p", P.p}}; }

}  // namespace fdl
